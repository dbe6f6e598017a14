"""Convergence diagnostics: worst-case eigenvector probe, step bound, benchmarks.

The greedy step shrinks the squared residual of a unit vector ``x`` by
``max(|x|_1, |Q.T x|_1)**2 / n``.  A small value of that maximum means slow
progress, and the eigenvectors of ``Q`` are natural candidates for small
values because ``Q.T`` merely rescales them.  :func:`minmax_eig_estimate`
searches the real parts of those eigenvectors.
"""

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .decomp import DEFAULT_MAX_ITER, kashin_matrix, kashin_vector, kronecker_operator, vec
from .errors import InvalidArgumentError, ResourceLimitError
from .ortho import DENSE_CAP, KIND_NAMES, make_operator, to_dense

TABLE1_FAMILIES = ("qr", "householder", "dct", "butterfly")
TABLE1_LABELS = {"qr": "Random", "householder": "Householder", "dct": "DCT", "butterfly": "Butterfly"}
CSV_COLUMNS = ("family", "n", "trial", "iteration", "residual", "wall_ns")


@dataclass
class MinMaxEstimate:
    operator_kind: str
    n: int
    trials: int
    per_trial_values: list
    mean: float
    std: float
    note: str = ""


def nearest_power_of_two(n):
    return 1 << max(1, int(round(math.log2(n))))


def real_eigvecs(q):
    """Real parts of the eigenvectors of ``q`` (columns) and the largest imaginary part seen."""
    _, vecs = np.linalg.eig(q)
    imag = float(np.abs(vecs.imag).max()) if np.iscomplexobj(vecs) else 0.0
    return np.real(vecs), imag


def minmax_eig_estimate(op, cap=DENSE_CAP, normalize=False):
    """``min over eigenvectors y of max(|x|_1, |Q.T x|_1) / sqrt(n)`` for ``x = Re(y)``.

    Eigenvectors come back with unit 2-norm; by default their real parts are
    used as they are (a complex pair splits its norm between real and
    imaginary parts).  ``normalize=True`` rescales each real part to unit norm
    instead.  Real parts with norm below ``1e-8`` are discarded.
    """
    if op.dim > cap:
        raise ResourceLimitError(f"eigendecomposition needs a dense {op.dim}x{op.dim} matrix (cap {cap})")
    q = to_dense(op, cap)
    x, _ = real_eigvecs(q)
    norms = np.linalg.norm(x, axis=0)
    keep = norms >= 1e-8
    x = x[:, keep]
    if normalize:
        x = x / norms[keep]
    l1 = np.abs(x).sum(axis=0)
    l1_rot = np.abs(q.T @ x).sum(axis=0)
    return float(np.maximum(l1, l1_rot).min() / math.sqrt(op.dim))


def _trial_seeds(seed, family, trials):
    rng = np.random.default_rng([seed, int(KIND_NAMES[family])])
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=trials)]


def minmax_table(n, trials=20, seed=0, families=TABLE1_FAMILIES, normalize=False):
    """Table of eigenvector min-max estimates per operator family.

    Random families are averaged over ``trials`` operators; the DCT is
    deterministic and evaluated once.  Butterfly needs a power of two, so it
    is evaluated at the nearest one.
    """
    if n < 2:
        raise InvalidArgumentError("n must be at least 2")
    out = {}
    for fam in families:
        dim, note = n, ""
        if fam == "butterfly" and (n & (n - 1)):
            dim = nearest_power_of_two(n)
            note = f"evaluated at n={dim} (butterfly needs a power of two)"
        count = 1 if fam == "dct" else trials
        values = [minmax_eig_estimate(make_operator(fam, dim, s), normalize=normalize)
                  for s in _trial_seeds(seed, fam, count)]
        arr = np.asarray(values)
        out[fam] = MinMaxEstimate(
            fam, dim, count, values,
            float(arr.mean()) if arr.size else math.nan,
            float(arr.std()) if arr.size else math.nan,
            note,
        )
    return out


def format_table(estimates, fmt="table"):
    rows = [
        {"family": TABLE1_LABELS.get(k, k), "n": e.n, "trials": e.trials,
         "mean": e.mean, "std": e.std, "note": e.note}
        for k, e in estimates.items()
    ]
    if fmt == "json":
        return json.dumps(rows, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else ["family"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    lines = [f"{'Q':<12} {'n':>5} {'trials':>6} {'min max(|x|1,|Q^T x|1)/sqrt(n)':>32} {'std':>8}"]
    for r in rows:
        lines.append(f"{r['family']:<12} {r['n']:>5} {r['trials']:>6} {r['mean']:>32.3f} {r['std']:>8.3f}"
                     + (f"  # {r['note']}" if r["note"] else ""))
    return "\n".join(lines)


def step_bound(x, op):
    """Squared residual after one greedy step from unit vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (op.dim,):
        raise InvalidArgumentError(f"expected a vector of length {op.dim}, got shape {x.shape}")
    if abs(np.linalg.norm(x) - 1.0) > 1e-10:
        raise InvalidArgumentError("step_bound needs a unit vector")
    best = max(np.abs(x).sum(), np.abs(op.apply_adjoint(x)).sum())
    return max(0.0, 1.0 - best * best / op.dim)


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------

@dataclass
class BenchConfig:
    sizes: tuple = (1000,)
    families: tuple = ("qr", "dct", "butterfly", "householder")
    trials: int = 23
    tol: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    jobs: int = 1


@dataclass
class BenchRecord:
    operator_kind: str
    n: int
    trial: int
    seed: int
    source: str
    residual_norms: list
    elapsed_ns: list
    wall_ns: int
    iterations: int
    iterations_to_tol: int | None
    path: str = "vector"
    note: str = ""

    @property
    def final_residual(self):
        return self.residual_norms[-1]


def _to_tol(norms, tol):
    for i, r in enumerate(norms):
        if r <= tol:
            return i
    return None


def _vector_trial(fam, n, trial, seed, tol, max_iter):
    dim = n
    note = ""
    if fam == "butterfly" and (n & (n - 1)):
        dim = nearest_power_of_two(n)
        note = f"butterfly evaluated at n={dim}"
    rng = np.random.default_rng([seed, trial])
    x = rng.standard_normal(dim)
    op = make_operator(fam, dim, seed=int(rng.integers(0, 2**63 - 1)))
    t0 = time.perf_counter_ns()
    d = kashin_vector(x, op, tol=tol, max_iter=max_iter)
    wall = time.perf_counter_ns() - t0
    rep = d.report
    return BenchRecord(fam, dim, trial, seed, "gaussian", list(rep.residual_norms), list(rep.elapsed_ns),
                       wall, rep.iterations, _to_tol(rep.residual_norms, tol), "vector", note)


def bench_convergence(config):
    """Residual curves of the vector algorithm over sizes x families x trials."""
    tasks = [(fam, n, t) for n in config.sizes for fam in config.families for t in range(config.trials)]
    run = lambda task: _vector_trial(*task, config.seed, config.tol, config.max_iter)  # noqa: E731
    if config.jobs > 1 and tasks:
        with ThreadPoolExecutor(config.jobs) as ex:
            records = list(ex.map(run, tasks))
    else:
        records = [run(t) for t in tasks]
    records.sort(key=lambda r: (r.n, r.operator_kind, r.trial))
    return records


def bench_matrix_vs_vector(shape=(64, 32), families=("qr",), trials=3, tol=1e-6,
                           max_iter=DEFAULT_MAX_ITER, seed=0, cap=DENSE_CAP):
    """Time the matrix algorithm against the vector algorithm on the dense Kronecker operator.

    Both paths see the same inputs and operators; the Kronecker matrix is
    built outside the timed region.
    """
    m, n = shape
    if m * n > cap:
        raise ResourceLimitError(f"dense Kronecker operator of size {m * n} exceeds cap {cap}")
    records = []
    for fam in families:
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, int(KIND_NAMES[fam])])
            X = rng.standard_normal((m, n))
            q1 = make_operator(fam, m, seed=int(rng.integers(0, 2**63 - 1)))
            q2 = make_operator(fam, n, seed=int(rng.integers(0, 2**63 - 1)))
            kron = kronecker_operator(q1, q2)
            t0 = time.perf_counter_ns()
            dm = kashin_matrix(X, q1, q2, tol=tol, max_iter=max_iter)
            t_mat = time.perf_counter_ns() - t0
            t0 = time.perf_counter_ns()
            dv = kashin_vector(vec(X), kron, tol=tol, max_iter=max_iter)
            t_vec = time.perf_counter_ns() - t0
            for path, d, wall in (("matrix", dm, t_mat), ("kron-vector", dv, t_vec)):
                rep = d.report
                records.append(BenchRecord(fam, m * n, trial, seed, f"gaussian {m}x{n}",
                                           list(rep.residual_norms), list(rep.elapsed_ns), wall,
                                           rep.iterations, _to_tol(rep.residual_norms, tol), path))
    return records


def write_csv(records, fh):
    """Emit one row per (record, iteration) with the fixed plotting schema."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        family = r.operator_kind if r.path == "vector" else f"{r.operator_kind}:{r.path}"
        for it, (res, ns) in enumerate(zip(r.residual_norms, r.elapsed_ns)):
            w.writerow((family, r.n, r.trial, it, repr(float(res)), int(ns)))


def summarize(records):
    """Per-family summary: median final residual, mean iterations, fraction reaching tol."""
    out = {}
    for r in records:
        key = (r.operator_kind, r.path, r.n)
        out.setdefault(key, []).append(r)
    rows = []
    for (fam, path, n), recs in sorted(out.items()):
        rows.append({
            "family": fam, "path": path, "n": n, "trials": len(recs),
            "median_final_residual": float(np.median([r.final_residual for r in recs])),
            "mean_iterations": float(np.mean([r.iterations for r in recs])),
            "fraction_converged": float(np.mean([r.iterations_to_tol is not None for r in recs])),
            "mean_wall_ms": float(np.mean([r.wall_ns for r in recs]) / 1e6),
        })
    return rows


__all__ = [
    "MinMaxEstimate", "BenchConfig", "BenchRecord", "minmax_eig_estimate", "minmax_table",
    "format_table", "step_bound", "bench_convergence", "bench_matrix_vs_vector", "write_csv",
    "summarize", "real_eigvecs", "nearest_power_of_two",
]
