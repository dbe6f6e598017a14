"""Structured orthogonal operators used as the rotated basis ``Q``.

Four families are supported:

==============  ==========================================  ===============
kind            payload                                     apply cost
==============  ==========================================  ===============
RANDOM_DENSE    dense Haar-distributed ``n x n`` matrix     ``O(n^2)``
HOUSEHOLDER     unit vector ``y`` of ``I - 2 y y^T``        ``O(n)``
DCT2            none (orthonormal DCT-II basis)             ``O(n log n)``
BUTTERFLY       :class:`ButterflyFactorSet`                 ``O(n log n)``
==============  ==========================================  ===============

Every operator acts on the leading axis of a 1-D ``(n,)`` or 2-D ``(n, b)``
array, so ``apply(op, X)`` computes ``Q @ X`` column by column without ever
forming a Kronecker product.
"""

import contextlib
import contextvars
import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from . import _kernels
from .errors import (
    InvalidArgumentError,
    InvalidDimensionError,
    MalformedError,
    ResourceLimitError,
    ShapeError,
    UnsupportedDimensionError,
    UnsupportedKindError,
)

DENSE_CAP = 4096


class Kind(enum.IntEnum):
    RANDOM_DENSE = 0
    HOUSEHOLDER = 1
    DCT2 = 2
    BUTTERFLY = 3


#: CLI / config spelling of each family.
KIND_NAMES = {
    "qr": Kind.RANDOM_DENSE,
    "householder": Kind.HOUSEHOLDER,
    "dct": Kind.DCT2,
    "butterfly": Kind.BUTTERFLY,
}


# ---------------------------------------------------------------------------
# operation accounting
# ---------------------------------------------------------------------------

@dataclass
class OpCounter:
    """Tally of scalar multiply-adds spent inside operator applications."""

    multiply_adds: int = 0
    applies: int = 0
    dense_materializations: int = 0


_counter = contextvars.ContextVar("kashinq_op_counter", default=None)


@contextlib.contextmanager
def count_ops():
    """Count multiply-adds performed by :func:`apply` / :func:`apply_adjoint`.

    DCT applications go through ``scipy.fft`` and are tallied as applies only.
    """
    counter = OpCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def _tally(madds, dense=False):
    counter = _counter.get()
    if counter is not None:
        counter.multiply_adds += int(madds)
        counter.applies += 1
        counter.dense_materializations += int(dense)


# ---------------------------------------------------------------------------
# butterfly parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ButterflyFactorSet:
    """Parameters of ``Q = B_n B_{n/2} ... B_2``.

    Row ``l`` of ``angles``/``reflections`` belongs to the factor with block
    size ``2 ** (l + 1)``; entry ``p`` of the row parameterizes the ``p``-th
    index pair ``(i, i + k/2)`` touched by that factor.  A pair with reflection
    bit 0 is rotated by ``[[c, -s], [s, c]]``, with bit 1 reflected by
    ``[[c, s], [s, -c]]``.
    """

    n: int
    angles: np.ndarray
    reflections: np.ndarray
    coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        levels = int(math.log2(self.n))
        if self.angles.shape != (levels, self.n // 2) or self.reflections.shape != self.angles.shape:
            raise ShapeError(f"butterfly parameters must have shape {(levels, self.n // 2)}")
        c = np.cos(self.angles)
        s = np.sin(self.angles)
        refl = self.reflections.astype(bool)
        coef = np.stack([c, np.where(refl, s, -s), s, np.where(refl, -c, c)], axis=1)
        coef = np.ascontiguousarray(coef, dtype=np.float64)
        for arr in (self.angles, self.reflections, coef):
            arr.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @property
    def levels(self):
        return self.angles.shape[0]

    @property
    def block_sizes(self):
        """Block sizes of the factors in product order, e.g. ``(16, 8, 4, 2)``."""
        return tuple(self.n >> i for i in range(self.levels))

    def block(self, k, i):
        """Dense ``k x k`` butterfly factor ``F_i`` (``i`` counts from 0) of ``B_k``."""
        lvl = int(math.log2(k)) - 1
        h = k // 2
        a, b, c, d = (self.coef[lvl, r, i * h:(i + 1) * h] for r in range(4))
        return np.block([[np.diag(a), np.diag(b)], [np.diag(c), np.diag(d)]])

    def factor_matrix(self, k):
        """Dense block-diagonal ``B_k = diag(F_1, ..., F_{n/k})``."""
        out = np.zeros((self.n, self.n))
        for i in range(self.n // k):
            out[i * k:(i + 1) * k, i * k:(i + 1) * k] = self.block(k, i)
        return out


# ---------------------------------------------------------------------------
# operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OrthogonalOperator:
    """An immutable orthogonal ``n x n`` linear map.

    ``payload`` depends on ``kind``: the dense matrix, the unit Householder
    vector, ``None`` for the DCT, or a :class:`ButterflyFactorSet`.  ``seed`` is
    recorded when the operator was generated randomly.
    """

    kind: Kind
    dim: int
    payload: object = None
    seed: int | None = None
    fast: bool = True

    def apply(self, x):
        return apply(self, x)

    def apply_adjoint(self, x):
        return apply_adjoint(self, x)

    def to_dense(self, cap=DENSE_CAP):
        return to_dense(self, cap)

    @property
    def name(self):
        return {v: k for k, v in KIND_NAMES.items()}[self.kind]

    def __repr__(self):
        return f"OrthogonalOperator(kind={self.kind.name}, dim={self.dim}, seed={self.seed})"


def _check_dim(n):
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {n!r}")
    return int(n)


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def make_random_orthogonal(n, seed=0):
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.

    Columns of ``Q`` are multiplied by the signs of ``diag(R)``; without this
    correction the QR output is not Haar distributed.
    """
    n = _check_dim(n)
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return OrthogonalOperator(Kind.RANDOM_DENSE, n, _frozen(q * signs), seed=seed)


def from_dense(matrix, atol=1e-10):
    """Wrap an explicit orthogonal matrix (identity, hand-built rotations, ...)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ShapeError(f"expected a non-empty square matrix, got shape {m.shape}")
    err = np.abs(m.T @ m - np.eye(m.shape[0])).max()
    if not np.isfinite(err) or err > atol:
        raise InvalidArgumentError(f"matrix is not orthogonal (max |Q^T Q - I| = {err:.3g})")
    return OrthogonalOperator(Kind.RANDOM_DENSE, m.shape[0], _frozen(m))


def make_householder(y):
    """Reflection ``I - 2 y y^T`` across the hyperplane orthogonal to ``y``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise InvalidDimensionError("householder vector must be non-empty")
    norm = np.linalg.norm(y)
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidArgumentError("householder vector must be finite and nonzero")
    return OrthogonalOperator(Kind.HOUSEHOLDER, y.size, _frozen(y / norm))


def make_random_householder(n, seed=0):
    n = _check_dim(n)
    y = np.random.default_rng(seed).standard_normal(n)
    op = make_householder(y)
    return OrthogonalOperator(Kind.HOUSEHOLDER, n, op.payload, seed=seed)


def dct_matrix(n):
    """Dense orthonormal DCT-II basis; column ``j`` samples frequency ``j``."""
    n = _check_dim(n)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    q = math.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * j / (2 * n))
    q[:, 0] = 1.0 / math.sqrt(n)
    return q


def make_dct(n, fast=True):
    """Orthonormal DCT-II operator.

    ``fast=True`` routes through ``scipy.fft`` in ``O(n log n)``; ``fast=False``
    multiplies by the precomputed dense matrix.
    """
    n = _check_dim(n)
    payload = None if fast else _frozen(dct_matrix(n))
    return OrthogonalOperator(Kind.DCT2, n, payload, fast=fast)


def is_power_of_two(n):
    return n >= 2 and (n & (n - 1)) == 0


def make_butterfly(n, seed=0):
    """Random orthogonal butterfly matrix of size ``n = 2**m``.

    Every 2x2 pair in every factor gets an independent angle uniform on
    ``[0, 2 pi)`` and an independent reflection bit.
    """
    n = _check_dim(n)
    if not is_power_of_two(n):
        raise UnsupportedDimensionError(f"butterfly requires n = 2**m with m >= 1, got {n}")
    levels = n.bit_length() - 1
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(levels, n // 2))
    refl = rng.integers(0, 2, size=(levels, n // 2)).astype(np.uint8)
    return OrthogonalOperator(Kind.BUTTERFLY, n, ButterflyFactorSet(n, angles, refl), seed=seed)


def make_operator(kind, n, seed=0):
    """Build a randomized operator of the given family (name or :class:`Kind`)."""
    if isinstance(kind, str):
        try:
            kind = KIND_NAMES[kind.lower()]
        except KeyError:
            raise UnsupportedKindError(f"unknown transform {kind!r}") from None
    if kind == Kind.RANDOM_DENSE:
        return make_random_orthogonal(n, seed)
    if kind == Kind.HOUSEHOLDER:
        return make_random_householder(n, seed)
    if kind == Kind.DCT2:
        return make_dct(n)
    if kind == Kind.BUTTERFLY:
        return make_butterfly(n, seed)
    raise UnsupportedKindError(f"unknown transform kind {kind!r}")


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def _as_input(op, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != op.dim:
        raise ShapeError(f"operator of dim {op.dim} cannot act on shape {x.shape}")
    return x


def _apply(op, x, adjoint):
    x = _as_input(op, x)
    ncols = 1 if x.ndim == 1 else x.shape[1]
    n = op.dim
    if op.kind == Kind.RANDOM_DENSE or (op.kind == Kind.DCT2 and not op.fast):
        m = op.payload.T if adjoint else op.payload
        _tally(n * n * ncols)
        return m @ x
    if op.kind == Kind.HOUSEHOLDER:
        y = op.payload
        _tally(2 * n * ncols)
        return x - 2.0 * np.outer(y, y @ x).reshape(x.shape)
    if op.kind == Kind.DCT2:
        _tally(0)
        if adjoint:
            return scipy.fft.dct(x, type=2, norm="ortho", axis=0)
        return scipy.fft.idct(x, type=2, norm="ortho", axis=0)
    if op.kind == Kind.BUTTERFLY:
        work = np.array(x.reshape(n, ncols), dtype=np.float64, order="C", copy=True)
        madds = _kernels.butterfly_apply(work, op.payload.coef, adjoint)
        _tally(madds)
        return work.reshape(x.shape)
    raise UnsupportedKindError(f"unknown transform kind {op.kind!r}")


def apply(op, x):
    """``Q @ x`` along the leading axis of ``x``."""
    return _apply(op, x, adjoint=False)


def apply_adjoint(op, x):
    """``Q.T @ x`` along the leading axis of ``x``."""
    return _apply(op, x, adjoint=True)


def to_dense(op, cap=DENSE_CAP):
    """Materialize ``Q`` as an ``n x n`` array (test oracle; refuses ``n > cap``)."""
    if op.dim > cap:
        raise ResourceLimitError(f"refusing to materialize {op.dim}x{op.dim} operator (cap {cap})")
    if op.kind == Kind.RANDOM_DENSE or (op.kind == Kind.DCT2 and not op.fast):
        return np.array(op.payload)
    return apply(op, np.eye(op.dim))


# ---------------------------------------------------------------------------
# compact parameter blobs (used by the file formats)
# ---------------------------------------------------------------------------

def param_blob(op):
    """Bytes that, together with ``(kind, dim, seed)``, recreate ``op`` exactly.

    Seeded random-dense operators store nothing and are regenerated from the
    seed; unseeded ones store the dense matrix.
    """
    if op.kind == Kind.RANDOM_DENSE:
        if op.seed is not None:
            return b""
        return np.ascontiguousarray(op.payload, dtype="<f8").tobytes()
    if op.kind == Kind.HOUSEHOLDER:
        return np.ascontiguousarray(op.payload, dtype="<f8").tobytes()
    if op.kind == Kind.DCT2:
        return b""
    if op.kind == Kind.BUTTERFLY:
        fs = op.payload
        return (np.ascontiguousarray(fs.angles, dtype="<f8").tobytes()
                + np.ascontiguousarray(fs.reflections, dtype=np.uint8).tobytes())
    raise UnsupportedKindError(f"unknown transform kind {op.kind!r}")


def from_params(kind, dim, seed, blob):
    """Inverse of :func:`param_blob`."""
    try:
        kind = Kind(kind)
    except ValueError:
        raise UnsupportedKindError(f"unknown transform kind code {kind}") from None
    if dim < 1:
        raise MalformedError(f"operator dimension must be positive, got {dim}")
    blob = bytes(blob)
    if kind == Kind.RANDOM_DENSE:
        if not blob:
            return make_random_orthogonal(dim, seed)
        if len(blob) != 8 * dim * dim:
            raise MalformedError("dense operator blob has the wrong length")
        m = np.frombuffer(blob, dtype="<f8").reshape(dim, dim)
        try:
            return from_dense(m)
        except (InvalidArgumentError, ShapeError) as exc:
            raise MalformedError(str(exc)) from None
    if kind == Kind.HOUSEHOLDER:
        if len(blob) != 8 * dim:
            raise MalformedError("householder blob has the wrong length")
        y = np.frombuffer(blob, dtype="<f8")
        if not np.all(np.isfinite(y)) or abs(np.linalg.norm(y) - 1.0) > 1e-10:
            raise MalformedError("householder vector is not a finite unit vector")
        return OrthogonalOperator(Kind.HOUSEHOLDER, dim, _frozen(y), seed=seed)
    if kind == Kind.DCT2:
        if blob:
            raise MalformedError("DCT operators carry no parameters")
        return make_dct(dim)
    if not is_power_of_two(dim):
        raise MalformedError(f"butterfly dimension {dim} is not a power of two")
    if not blob:
        return make_butterfly(dim, seed)
    levels = dim.bit_length() - 1
    npar = levels * (dim // 2)
    if len(blob) != 9 * npar:
        raise MalformedError("butterfly blob has the wrong length")
    angles = np.frombuffer(blob[:8 * npar], dtype="<f8").reshape(levels, dim // 2).copy()
    refl = np.frombuffer(blob[8 * npar:], dtype=np.uint8).reshape(levels, dim // 2).copy()
    if not np.all(np.isfinite(angles)) or np.any(refl > 1):
        raise MalformedError("butterfly parameters out of range")
    return OrthogonalOperator(Kind.BUTTERFLY, dim, ButterflyFactorSet(dim, angles, refl), seed=seed)
