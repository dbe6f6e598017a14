"""Greedy Kashin decomposition of vectors and matrices.

A unit-normalized input ``x`` is split as ``x = u + v_hat + r`` where ``u``
accumulates projections onto sign vectors in the standard basis, ``v_hat``
accumulates projections onto ``Q @ sign(Q.T @ x)``, and ``r`` is the final
residual.  At every step the candidate with the larger 1-norm wins, which
shrinks the squared residual by ``max(|x|_1, |Q.T x|_1)**2 / n``.

For matrices the rotated basis is ``Q1 @ S @ Q2.T`` and the rotated coordinates
are ``Q1.T @ X @ Q2``; both are computed with the operator fast paths, so the
``mn x mn`` Kronecker matrix is never built.
"""

import enum
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError, ShapeError
from .ortho import OrthogonalOperator

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 1000
#: Relative residual above which a non-converged run is "poorly converged".
POOR_CONVERGENCE = 1e-2

_DEBUG = os.environ.get("KASHINQ_DEBUG", "0") not in ("", "0")


class Branch(enum.IntEnum):
    IDENTITY = 0
    ROTATED = 1


@dataclass
class ConvergenceReport:
    residual_norms: list = field(default_factory=list)
    branch_choices: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    contraction_estimate: float = 0.0
    poorly_converged: bool = False
    elapsed_ns: list = field(default_factory=list)
    tol: float | None = None
    #: winning 1-norm ``max(|x_k|_1, |Q.T x_k|_1)`` of every step
    step_l1: list = field(default_factory=list)

    @property
    def final_residual(self):
        return self.residual_norms[-1] if self.residual_norms else 0.0


@dataclass
class VectorDecomposition:
    u: np.ndarray
    v_hat: np.ndarray
    residual: np.ndarray
    scale: float
    report: ConvergenceReport
    q: OrthogonalOperator | None = None

    @property
    def v(self):
        """Coefficients in the rotated basis, ``Q.T @ v_hat``."""
        return self.q.apply_adjoint(self.v_hat)


@dataclass
class MatrixDecomposition:
    U: np.ndarray
    V_hat: np.ndarray
    residual: np.ndarray
    scale: float
    report: ConvergenceReport
    q1: OrthogonalOperator | None = None
    q2: OrthogonalOperator | None = None

    @property
    def shape(self):
        return self.U.shape

    @property
    def V(self):
        """``Q1.T @ V_hat @ Q2``."""
        return rotate_in(self.V_hat, self.q1, self.q2)


def sign_vector(x):
    """Entrywise sign with ``sign(0) = +1``, so the squared norm equals ``x.size``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def project(x, y):
    """Orthogonal projection of ``x`` onto the line spanned by ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"cannot project shape {x.shape} onto shape {y.shape}")
    yy = float(np.vdot(y, y))
    if yy == 0.0:
        raise InvalidArgumentError("cannot project onto the zero vector")
    return (float(np.vdot(x, y)) / yy) * y


def rotate_in(X, q1, q2):
    """``Q1.T @ X @ Q2`` via operator applies on columns, then rows."""
    return q2.apply_adjoint(q1.apply_adjoint(X).T).T


def rotate_out(S, q1, q2):
    """``Q1 @ S @ Q2.T`` via operator applies on rows, then columns."""
    return q1.apply(q2.apply(S.T).T)


def _finish(report, tol, max_iter):
    norms = report.residual_norms
    k = report.iterations
    report.tol = tol
    report.converged = norms[-1] <= tol
    report.poorly_converged = (not report.converged) and norms[-1] > POOR_CONVERGENCE
    if k == 0:
        report.contraction_estimate = 0.0
    elif norms[-1] == 0.0:
        report.contraction_estimate = 0.0
    else:
        report.contraction_estimate = (norms[-1] / norms[0]) ** (1.0 / k)
    return report


def _check_params(tol, max_iter):
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    if int(max_iter) < 0:
        raise InvalidArgumentError(f"max_iter must be non-negative, got {max_iter}")


def _greedy(x, rot_in, rot_out, tol, max_iter):
    """Shared greedy loop; ``x`` is unit-normalized and modified in place."""
    n = x.size
    u = np.zeros_like(x)
    v_hat = np.zeros_like(x)
    report = ConvergenceReport()
    norm = float(np.linalg.norm(x))
    report.residual_norms.append(norm)
    t0 = time.perf_counter_ns()
    report.elapsed_ns.append(0)
    while norm > tol and report.iterations < max_iter:
        y = rot_in(x)
        l1_x = float(np.abs(x).sum())
        l1_y = float(np.abs(y).sum())
        if l1_x >= l1_y:
            pi = project(x, sign_vector(x))
            u += pi
            report.branch_choices.append(Branch.IDENTITY)
        else:
            pi = project(x, rot_out(sign_vector(y)))
            v_hat += pi
            report.branch_choices.append(Branch.ROTATED)
        report.step_l1.append(max(l1_x, l1_y))
        x -= pi
        norm = float(np.linalg.norm(x))
        report.iterations += 1
        report.residual_norms.append(norm)
        report.elapsed_ns.append(time.perf_counter_ns() - t0)
        if _DEBUG:
            assert abs(norm ** 2 - (report.residual_norms[-2] ** 2 - max(l1_x, l1_y) ** 2 / n)) < 1e-9
    return u, v_hat, x, _finish(report, tol, max_iter)


def _zero_result(shape, tol):
    report = _finish(ConvergenceReport(residual_norms=[0.0], elapsed_ns=[0]), tol, 0)
    z = np.zeros(shape)
    return z, z.copy(), z.copy(), report


def kashin_vector(x, q, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Decompose ``x ~ scale * (u + v_hat)`` with ``v_hat = Q v``.

    ``tol`` is relative: iteration stops once the residual of the
    unit-normalized input drops to ``tol`` or ``max_iter`` steps have run.
    """
    _check_params(tol, max_iter)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != q.dim:
        raise ShapeError(f"vector of shape {x.shape} does not match operator dim {q.dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    scale = float(np.linalg.norm(x))
    if scale == 0.0:
        u, v_hat, r, report = _zero_result(x.shape, tol)
        return VectorDecomposition(u, v_hat, r, 0.0, report, q)
    u, v_hat, r, report = _greedy(x / scale, q.apply_adjoint, q.apply, tol, max_iter)
    return VectorDecomposition(u, v_hat, r, scale, report, q)


def kashin_matrix(X, q1, q2, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Decompose ``X ~ scale * (U + Q1 V Q2.T)``; see :func:`kashin_vector`."""
    _check_params(tol, max_iter)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape != (q1.dim, q2.dim):
        raise ShapeError(f"matrix of shape {X.shape} does not match operators ({q1.dim}, {q2.dim})")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("input contains non-finite values")
    scale = float(np.linalg.norm(X))
    if scale == 0.0:
        U, V_hat, R, report = _zero_result(X.shape, tol)
        return MatrixDecomposition(U, V_hat, R, 0.0, report, q1, q2)
    U, V_hat, R, report = _greedy(
        X / scale,
        lambda A: rotate_in(A, q1, q2),
        lambda S: rotate_out(S, q1, q2),
        tol,
        max_iter,
    )
    return MatrixDecomposition(U, V_hat, R, scale, report, q1, q2)


def reconstruct(d, q=None, include_residual=False):
    """``scale * (u + v_hat)`` (plus the residual when requested).

    ``q`` may be an operator (vector case) or an ``(Q1, Q2)`` pair; it is only
    used to check dimensions.
    """
    if isinstance(d, VectorDecomposition):
        u, v_hat, r = d.u, d.v_hat, d.residual
        if q is not None and q.dim != u.size:
            raise ShapeError(f"operator dim {q.dim} does not match decomposition size {u.size}")
    else:
        u, v_hat, r = d.U, d.V_hat, d.residual
        if q is not None:
            q1, q2 = q
            if (q1.dim, q2.dim) != u.shape:
                raise ShapeError(f"operators ({q1.dim}, {q2.dim}) do not match shape {u.shape}")
    total = u + v_hat
    if include_residual:
        total = total + r
    return d.scale * total


def kronecker_operator(q1, q2):
    """Dense vector-form operator equivalent to the matrix algorithm.

    With column-major ``vec``, ``vec(Q1.T X Q2) = (Q2.T kron Q1.T) vec(X)``, so
    the matrix algorithm equals the vector algorithm run with
    ``Q = Q2 kron Q1`` (whose transpose is ``Q2.T kron Q1.T``).
    """
    from .ortho import from_dense

    return from_dense(np.kron(q2.to_dense(), q1.to_dense()), atol=1e-9)


def vec(X):
    """Column-major vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def infinity_bound(d):
    """``max(|u|_inf, |v_hat|_inf) * sqrt(N)`` on the unit-normalized factors."""
    if isinstance(d, VectorDecomposition):
        u, v_hat = d.u, d.v_hat
    else:
        u, v_hat = d.U, d.V_hat
    return max(np.abs(u).max(), np.abs(v_hat).max()) * math.sqrt(u.size)
