"""Codebook quantization of Kashin factors, plus direct baselines.

After decomposition ``X = scale * (U + Q1 V Q2.T + R)`` the entries of ``U``
and ``V`` concentrate around a few values.  Each factor is replaced by its
nearest centroid from a k-means codebook with ``2**bits`` entries, either
per factor (``PER_FACTOR``: two independent 1-D codebooks) or jointly on the
``(u, v)`` entry pairs (``JOINT_2D``).  The residual ``R`` is dropped.

Codes are bit-packed little-endian within bytes, row-major over the matrix.
Orthogonal operators are not stored; only their descriptors are kept and the
operators are regenerated at decode time.
"""

import enum
import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .decomp import MatrixDecomposition, rotate_in, rotate_out
from .errors import (
    ChecksumError,
    InvalidArgumentError,
    InvalidInputError,
    MalformedError,
    ShapeError,
    TruncatedError,
)
from .ortho import Kind, from_params, param_blob

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


class Mode(enum.IntEnum):
    PER_FACTOR = 0
    JOINT_2D = 1


MODE_NAMES = {"perfactor": Mode.PER_FACTOR, "per-factor": Mode.PER_FACTOR,
              "joint2d": Mode.JOINT_2D, "joint-2d": Mode.JOINT_2D}


def parse_mode(mode):
    if isinstance(mode, Mode):
        return mode
    if isinstance(mode, str) and mode.lower() in MODE_NAMES:
        return MODE_NAMES[mode.lower()]
    return Mode(mode)


@dataclass
class FitStats:
    inertia: float
    iterations: int
    seed: int
    degenerate: bool = False


@dataclass
class Codebook:
    """``centroids`` is ``(2, 2**bits)`` in PER_FACTOR mode (rows: U, V, each
    sorted ascending) and ``(2**bits, 2)`` pairs in JOINT_2D mode."""

    mode: Mode
    bits: int
    centroids: np.ndarray
    fit_stats: list = field(default_factory=list)

    @property
    def size(self):
        return 1 << self.bits


@dataclass
class TransformDescriptor:
    kind: Kind
    dim: int
    seed: int
    blob: bytes = b""

    @classmethod
    def from_operator(cls, op):
        return cls(op.kind, op.dim, 0 if op.seed is None else int(op.seed), param_blob(op))

    def build(self):
        return from_params(self.kind, self.dim, self.seed, self.blob)


@dataclass
class QuantizedTensor:
    shape: tuple
    q1: TransformDescriptor
    q2: TransformDescriptor
    scale: np.float32
    codebook: Codebook
    codes_u: np.ndarray
    codes_v: np.ndarray | None
    converged: bool = True
    tol: float | None = None
    iterations: int | None = None
    checksum: int = 0

    @property
    def mode(self):
        return self.codebook.mode

    @property
    def bits(self):
        return self.codebook.bits


def stream_nbytes(count, bits):
    return (count * bits + 7) // 8


def pack_codes(codes, bits):
    codes = np.asarray(codes)
    if not 1 <= bits <= 8:
        raise InvalidArgumentError(f"bits must lie in [1, 8], got {bits}")
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << bits)):
        raise InvalidArgumentError(f"codes do not fit in {bits} bits")
    return _kernels.pack_codes(codes.ravel().astype(np.uint8), bits)


def unpack_codes(buf, bits, count):
    buf = np.asarray(buf, dtype=np.uint8)
    if buf.size < stream_nbytes(count, bits):
        raise TruncatedError(f"code stream holds {buf.size} bytes, need {stream_nbytes(count, bits)}")
    return _kernels.unpack_codes(buf, bits, count)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def assign_1d(values, centroids):
    """Index of the nearest centroid for each value; ``centroids`` sorted ascending.

    Ties go to the lower index.
    """
    c = np.asarray(centroids, dtype=np.float64)
    x = np.asarray(values, dtype=np.float64)
    hi = np.clip(np.searchsorted(c, x), 0, c.size - 1)
    lo = np.clip(hi - 1, 0, c.size - 1)
    take_lo = np.abs(x - c[lo]) <= np.abs(c[hi] - x)
    idx = np.where(take_lo, lo, hi)
    # searchsorted lands on the first of a run of duplicates; walk back to it
    return np.searchsorted(c, c[idx]).astype(np.int64)


def _assign(points, centroids):
    if points.shape[1] == 1:
        order = np.argsort(centroids[:, 0], kind="stable")
        idx = assign_1d(points[:, 0], centroids[order, 0])
        labels = order[idx]
        d2 = (points[:, 0] - centroids[labels, 0]) ** 2
        return labels, d2
    return _kernels.nearest_centroid(points, centroids)


def _kmeans_pp(points, k, rng, weights=None):
    """k-means++ seeding; ``weights`` are point multiplicities (default 1)."""
    npts = points.shape[0]
    w = np.ones(npts) if weights is None else np.asarray(weights, dtype=np.float64)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.choice(npts, p=w / w.sum())]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        mass = d2 * w
        total = mass.sum()
        if total <= 0:
            centers[i] = points[rng.integers(npts)]
        else:
            centers[i] = points[rng.choice(npts, p=mass / total)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(points, k, seed=0, max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOL):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centroids, labels, stats)``.  Empty clusters are reseeded with
    the farthest point whose value is not already a centroid.  With fewer
    than ``k`` distinct points every distinct point becomes a centroid and the
    remaining slots repeat the centroid of the most populated cluster
    (``stats.degenerate``).  Scalar data is clustered as distinct values
    weighted by multiplicity, which gives the same iterates.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] == 0:
        raise InvalidArgumentError("cannot fit a codebook to an empty stream")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("codebook input contains non-finite values")
    rng = np.random.default_rng(seed)

    scalar = points.shape[1] == 1
    if scalar:
        distinct, counts = np.unique(points[:, 0], return_counts=True)
        distinct = distinct[:, None]
    else:
        distinct, counts = np.unique(points, axis=0, return_counts=True)
    if distinct.shape[0] <= k:
        fill = distinct[np.argmax(counts)]
        centers = np.vstack([distinct, np.repeat(fill[None, :], k - distinct.shape[0], axis=0)])
        labels, d2 = _assign(points, centers)
        return centers, labels, FitStats(float(d2.sum()), 0, seed, distinct.shape[0] < k)

    if scalar:
        centers = _kmeans_pp(distinct, k, rng, counts)
        centers, it = _lloyd_1d(distinct[:, 0], counts, centers[:, 0], max_iter, tol)
        centers = centers[:, None]
    else:
        centers, it = _lloyd(points, _kmeans_pp(points, k, rng), max_iter, tol)
    labels, d2 = _assign(points, centers)
    return centers, labels, FitStats(float(d2.sum()), it, seed)


def _reseed_empty(points, centers, d2, empty):
    """Move empty slots onto the farthest points whose values are not centroids yet.

    Returns ``False`` when there were too few such values to fill every slot.
    """
    used = {tuple(c) for c in centers[~empty]}
    slots = list(np.flatnonzero(empty))
    for i in np.argsort(-d2, kind="stable"):
        if not slots:
            break
        v = tuple(points[i])
        if v not in used:
            centers[slots.pop(0)] = points[i]
            used.add(v)
    return not slots


def _lloyd(points, centers, max_iter, tol):
    k = centers.shape[0]
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        labels, d2 = _assign(points, centers)
        inertia = float(d2.sum())
        counts = np.bincount(labels, minlength=k)
        new = np.empty_like(centers)
        for j in range(points.shape[1]):
            new[:, j] = np.bincount(labels, weights=points[:, j], minlength=k)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        settled = nonempty.all() or not _reseed_empty(points, new, d2, ~nonempty)
        centers = new
        if np.isfinite(prev) and prev - inertia <= tol * max(prev, 1e-300) and settled:
            break
        prev = inertia
    return centers, it


def _lloyd_1d(x, w, centers, max_iter, tol):
    """Lloyd iterations on sorted distinct scalars ``x`` with multiplicities ``w``.

    Nearest-centroid cells are intervals, so each cluster is a contiguous run
    found by binary search and its sums come from prefix sums.  Cell
    boundaries follow :func:`assign_1d` (ties and duplicate centroids resolve
    to the lower index).
    """
    w = w.astype(np.float64)
    npts = x.size
    cw = np.concatenate([[0.0], np.cumsum(w)])
    s1 = np.concatenate([[0.0], np.cumsum(w * x)])
    s2 = np.concatenate([[0.0], np.cumsum(w * x * x)])
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        c = np.sort(centers)
        cuts = np.searchsorted(x, 0.5 * (c[:-1] + c[1:]), side="right")
        # a duplicate centroid owns nothing; its run starts where the next distinct one does
        cuts[c[1:] == c[:-1]] = npts
        cuts = np.minimum.accumulate(cuts[::-1])[::-1]
        bounds = np.concatenate([[0], cuts, [npts]])
        cnt = np.diff(cw[bounds])
        sum1 = np.diff(s1[bounds])
        sum2 = np.diff(s2[bounds])
        inertia = float(np.maximum(sum2 - 2 * c * sum1 + cnt * c * c, 0.0).sum())
        new = c.copy()
        nonempty = cnt > 0
        new[nonempty] = sum1[nonempty] / cnt[nonempty]
        settled = True
        if not nonempty.all():
            owner = np.repeat(np.arange(c.size), np.diff(bounds))
            tmp = new[:, None]
            settled = not _reseed_empty(x[:, None], tmp, (x - c[owner]) ** 2, ~nonempty)
            new = tmp[:, 0]
        centers = new
        if np.isfinite(prev) and prev - inertia <= tol * max(prev, 1e-300) and settled:
            break
        prev = inertia
    return centers, it


def _canonical_1d(centers):
    return np.sort(centers[:, 0].astype(np.float32))


def fit_codebook(values, bits, mode=Mode.PER_FACTOR, seed=0):
    """Fit ``2**bits`` centroids to the factor entries.

    ``values`` is a pair ``(u_values, v_values)``; for PER_FACTOR a single
    stream is also accepted (it then serves both rows, mainly for testing).
    """
    mode = parse_mode(mode)
    if not 1 <= int(bits) <= 8:
        raise InvalidArgumentError(f"bits must lie in [1, 8], got {bits}")
    k = 1 << int(bits)
    if isinstance(values, np.ndarray) and values.ndim == 1:
        values = (values, values)
    u_vals, v_vals = (np.asarray(v, dtype=np.float64).ravel() for v in values)
    if u_vals.size == 0 or v_vals.size == 0:
        raise InvalidArgumentError("cannot fit a codebook to an empty stream")
    if mode == Mode.PER_FACTOR:
        cu, _, su = kmeans(u_vals, k, seed=[seed, 0])
        cv, _, sv = kmeans(v_vals, k, seed=[seed, 1])
        su.seed = sv.seed = seed
        cents = np.vstack([_canonical_1d(cu), _canonical_1d(cv)])
        return Codebook(mode, int(bits), cents, [su, sv])
    if u_vals.size != v_vals.size:
        raise ShapeError("joint codebook needs equally long U and V streams")
    pairs = np.column_stack([u_vals, v_vals])
    cents, _, st = kmeans(pairs, k, seed=[seed, 2])
    st.seed = seed
    cents = cents.astype(np.float32)
    cents = cents[np.lexsort((cents[:, 1], cents[:, 0]))]
    return Codebook(mode, int(bits), cents, [st])


def quantize_values(codebook, u_vals, v_vals):
    """Nearest-centroid codes for the given factor entries."""
    cb = codebook
    u_vals = np.asarray(u_vals, dtype=np.float64).ravel()
    v_vals = np.asarray(v_vals, dtype=np.float64).ravel()
    if cb.mode == Mode.PER_FACTOR:
        cu = assign_1d(u_vals, cb.centroids[0])
        cv = assign_1d(v_vals, cb.centroids[1])
        return cu.astype(np.uint8), cv.astype(np.uint8)
    labels, _ = _kernels.nearest_centroid(np.column_stack([u_vals, v_vals]),
                                          cb.centroids.astype(np.float64))
    return labels.astype(np.uint8), None


def lookup(codebook, codes_u, codes_v):
    """Centroid values for the codes, returned as float64 ``(u, v)`` streams."""
    cb = codebook
    cents = cb.centroids.astype(np.float64)
    if cb.mode == Mode.PER_FACTOR:
        return cents[0][codes_u], cents[1][codes_v]
    return cents[codes_u, 0], cents[codes_u, 1]


def _payload_crc(codebook, codes_u, codes_v):
    crc = zlib.crc32(np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes())
    crc = zlib.crc32(np.ascontiguousarray(codes_u, dtype=np.uint8).tobytes(), crc)
    if codes_v is not None:
        crc = zlib.crc32(np.ascontiguousarray(codes_v, dtype=np.uint8).tobytes(), crc)
    return crc


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------

def _scaled_factors(d):
    """Factors rescaled so that ``float32(scale)`` is exact; ``V`` in V-domain."""
    if d.q1 is None or d.q2 is None:
        raise InvalidInputError("decomposition does not carry its transform descriptors")
    if not np.isfinite(np.float32(d.scale)) and d.scale != 0:
        raise InvalidInputError(f"scale {d.scale} is not representable in float32")
    s32 = np.float32(d.scale)
    ratio = d.scale / float(s32) if s32 != 0 else 1.0
    U = d.U * ratio
    V = rotate_in(d.V_hat, d.q1, d.q2) * ratio
    return s32, U, V


def fit_shared_codebook(decomps, bits, mode=Mode.PER_FACTOR, seed=0):
    """One codebook for several tensors (entries of all factors stacked)."""
    us, vs = [], []
    for d in decomps:
        _, U, V = _scaled_factors(d)
        us.append(U.ravel())
        vs.append(V.ravel())
    return fit_codebook((np.concatenate(us), np.concatenate(vs)), bits, mode, seed)


def encode(d, bits=4, mode=Mode.PER_FACTOR, seed=0, codebook=None):
    """Quantize a :class:`MatrixDecomposition` into a :class:`QuantizedTensor`."""
    if not isinstance(d, MatrixDecomposition):
        raise InvalidInputError("encode expects a MatrixDecomposition")
    mode = parse_mode(mode)
    s32, U, V = _scaled_factors(d)
    if codebook is None:
        codebook = fit_codebook((U, V), bits, mode, seed)
    if d.report.poorly_converged:
        warnings.warn(
            f"poorly converged decomposition (relative residual {d.report.final_residual:.3g}); "
            "dropping the residual loses accuracy",
            RuntimeWarning,
            stacklevel=2,
        )
    cu, cv = quantize_values(codebook, U, V)
    packed_u = pack_codes(cu, codebook.bits)
    packed_v = None if cv is None else pack_codes(cv, codebook.bits)
    return QuantizedTensor(
        shape=tuple(d.shape),
        q1=TransformDescriptor.from_operator(d.q1),
        q2=TransformDescriptor.from_operator(d.q2),
        scale=s32,
        codebook=codebook,
        codes_u=packed_u,
        codes_v=packed_v,
        converged=bool(d.report.converged),
        tol=d.report.tol,
        iterations=d.report.iterations,
        checksum=_payload_crc(codebook, packed_u, packed_v),
    )


def validate(q):
    m, n = q.shape
    cb = q.codebook
    if not 1 <= cb.bits <= 8:
        raise MalformedError(f"bits {cb.bits} out of range")
    want = (2, cb.size) if cb.mode == Mode.PER_FACTOR else (cb.size, 2)
    if cb.centroids.shape != want:
        raise MalformedError(f"codebook shape {cb.centroids.shape}, expected {want}")
    if (q.q1.dim, q.q2.dim) != (m, n):
        raise MalformedError("transform dimensions do not match the tensor shape")
    need = stream_nbytes(m * n, cb.bits)
    streams = [q.codes_u] if cb.mode == Mode.JOINT_2D else [q.codes_u, q.codes_v]
    for s in streams:
        if s is None or len(s) < need:
            raise TruncatedError(f"code stream shorter than {need} bytes")
        if len(s) > need:
            raise MalformedError("code stream longer than expected")
    if _payload_crc(cb, q.codes_u, q.codes_v) != q.checksum:
        raise ChecksumError("payload checksum mismatch")


def dequantize_factors(q):
    """``(U_q, V_q, Q1, Q2)`` with quantized factors as float64 matrices."""
    validate(q)
    m, n = q.shape
    cu = unpack_codes(q.codes_u, q.bits, m * n)
    cv = None if q.codes_v is None or q.mode == Mode.JOINT_2D else unpack_codes(q.codes_v, q.bits, m * n)
    u, v = lookup(q.codebook, cu, cv)
    q1 = q.q1.build()
    q2 = q.q2.build()
    return u.reshape(m, n), v.reshape(m, n), q1, q2


def decode(q):
    """``scale * (U_q + Q1 V_q Q2.T)`` with operators regenerated from descriptors."""
    Uq, Vq, q1, q2 = dequantize_factors(q)
    return float(q.scale) * (Uq + rotate_out(Vq, q1, q2))


def requantize(q):
    """Decode the quantized factors and encode them again with the same codebook."""
    Uq, Vq, q1, q2 = dequantize_factors(q)
    from .decomp import ConvergenceReport

    d = MatrixDecomposition(Uq, rotate_out(Vq, q1, q2), np.zeros(q.shape), float(q.scale),
                            ConvergenceReport(residual_norms=[0.0], converged=True), q1, q2)
    return encode(d, codebook=q.codebook)


# ---------------------------------------------------------------------------
# baselines and statistics
# ---------------------------------------------------------------------------

def direct_uniform(X, bits):
    """Round to the nearest of ``2**bits`` evenly spaced levels over ``[min, max]``."""
    if not 1 <= int(bits) <= 8:
        raise InvalidArgumentError(f"bits must lie in [1, 8], got {bits}")
    X = np.asarray(X, dtype=np.float64)
    lo, hi = float(X.min()), float(X.max())
    if hi == lo:
        return np.full_like(X, lo)
    levels = (1 << int(bits)) - 1
    step = (hi - lo) / levels
    idx = np.clip(np.rint((X - lo) / step), 0, levels)
    return lo + idx * step


def direct_kmeans(X, bits, seed=0):
    """Replace every entry by its nearest centroid from a 1-D k-means codebook."""
    if not 1 <= int(bits) <= 8:
        raise InvalidArgumentError(f"bits must lie in [1, 8], got {bits}")
    X = np.asarray(X, dtype=np.float64)
    centers, _, _ = kmeans(X.ravel(), 1 << int(bits), seed=seed)
    c = np.sort(centers[:, 0])
    return c[assign_1d(X.ravel(), c)].reshape(X.shape)


@dataclass
class ErrorStats:
    rel_frobenius: float
    max_abs: float
    u_inf: float | None = None
    v_inf: float | None = None
    bits_per_weight: float | None = None
    artifact_bytes: int | None = None

    def as_dict(self):
        return dict(self.__dict__)


def error_stats(X, X_hat, q=None):
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ShapeError(f"shape mismatch {X.shape} vs {X_hat.shape}")
    diff = X - X_hat
    ref = np.linalg.norm(X)
    err = np.linalg.norm(diff)
    rel = 0.0 if err == 0 else (math.inf if ref == 0 else float(err / ref))
    stats = ErrorStats(rel, float(np.abs(diff).max()) if diff.size else 0.0)
    if q is not None:
        from .tensorio import kqtz_bytes

        Uq, Vq, _, _ = dequantize_factors(q)
        stats.u_inf = float(abs(q.scale) * np.abs(Uq).max())
        stats.v_inf = float(abs(q.scale) * np.abs(Vq).max())
        nbytes = len(kqtz_bytes(q))
        stats.artifact_bytes = nbytes
        stats.bits_per_weight = 8.0 * nbytes / X.size
    return stats
