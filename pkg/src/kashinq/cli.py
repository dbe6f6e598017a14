"""Command-line front end.

Exit codes: 0 success, 1 error (I/O, shape, format), 2 finished but the
decomposition did not reach its tolerance (artifact still written, flagged
``converged=false``).  Requested tables/CSV/JSON go to stdout; diagnostics go
to stderr.
"""

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, tensorio
from .decomp import DEFAULT_MAX_ITER, DEFAULT_TOL, kashin_matrix
from .errors import KashinError
from .ortho import KIND_NAMES, make_operator
from .quantize import decode, direct_kmeans, direct_uniform, encode, error_stats

EXIT_OK, EXIT_ERROR, EXIT_UNCONVERGED = 0, 1, 2


def _err(msg):
    print(f"kashinq: {msg}", file=sys.stderr)


def _as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def _operators(shape, left, right, seed):
    m, n = shape
    return make_operator(left, m, seed=seed), make_operator(right, n, seed=seed + 1)


def _sides(args):
    left = args.transform_left or args.transform
    right = args.transform_right or args.transform
    return left, right


def _decompose_file(path, left, right, seed, tol, max_iter):
    if str(path).endswith(".kqd"):
        return tensorio.read_decomposition(path)
    X = _as_matrix(tensorio.read_tensor(path))
    q1, q2 = _operators(X.shape, left, right, seed)
    return kashin_matrix(X, q1, q2, tol=tol, max_iter=max_iter)


def _summary(path, d):
    rep = d.report
    status = "converged" if rep.converged else ("poorly converged" if rep.poorly_converged else "not converged")
    m, n = d.shape
    return (f"{path}: shape {m}x{n} iterations {rep.iterations} "
            f"relative_residual {rep.final_residual:.3e} tol {rep.tol:g} {status}")


def _job(kind, src, dst, opts):
    """Process one input file; returns ``(summary, converged)``.  Top level so it pickles."""
    d = _decompose_file(src, opts["left"], opts["right"], opts["seed"], opts["tol"], opts["max_iter"])
    if kind == "decompose":
        tensorio.write_decomposition(dst, d)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            q = encode(d, bits=opts["bits"], mode=opts["mode"], seed=opts["seed"])
        tensorio.write_kqtz(dst, q)
    return _summary(src, d), bool(d.report.converged)


def _outputs(inputs, output, out_dir, ext):
    if len(inputs) == 1 and output:
        return [Path(output)]
    if output and len(inputs) > 1:
        raise KashinError("-o/--output takes a single input; use --out-dir for batches")
    base = Path(out_dir) if out_dir else None
    if base:
        base.mkdir(parents=True, exist_ok=True)
    return [(base or Path(p).parent) / (Path(p).stem + ext) for p in inputs]


def _batch(args, kind, ext):
    left, right = _sides(args)
    opts = dict(left=left, right=right, seed=args.seed, tol=args.tol, max_iter=args.max_iter,
                bits=getattr(args, "bits", None), mode=getattr(args, "mode", None))
    outs = _outputs(args.inputs, args.output, args.out_dir, ext)
    tasks = list(zip(args.inputs, outs))
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_job, [kind] * len(tasks), args.inputs, outs, [opts] * len(tasks)))
    else:
        results = [_job(kind, src, dst, opts) for src, dst in tasks]
    code = EXIT_OK
    for (summary, converged), dst in zip(results, outs):
        print(f"{summary} -> {dst}")
        if not converged:
            _err(f"{summary}; artifact written with converged=false")
            code = EXIT_UNCONVERGED
    return code


def cmd_decompose(args):
    return _batch(args, "decompose", ".kqd")


def cmd_quantize(args):
    return _batch(args, "quantize", ".kqtz")


def cmd_dequantize(args):
    q = tensorio.read_kqtz(args.input)
    X = decode(q)
    out = args.output or str(Path(args.input).with_suffix(".kden"))
    tensorio.write_dense(out, X.astype(np.float32) if args.float32 else X)
    print(f"{args.input}: shape {q.shape[0]}x{q.shape[1]} -> {out}")
    return EXIT_OK


def _emit_rows(rows, fmt):
    if fmt == "json":
        print(json.dumps(rows, indent=2))
        return
    if fmt == "csv":
        keys = list(rows[0])
        print(",".join(keys))
        for r in rows:
            print(",".join("" if r[k] is None else str(r[k]) for k in keys))
        return
    keys = list(rows[0])
    widths = {k: max(len(k), *(len(_fmt(r[k])) for r in rows)) for k in keys}
    print("  ".join(k.ljust(widths[k]) for k in keys))
    for r in rows:
        print("  ".join(_fmt(r[k]).ljust(widths[k]) for k in keys))


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_stats(args):
    X = _as_matrix(tensorio.read_tensor(args.dense))
    q = tensorio.read_kqtz(args.kqtz)
    if tuple(X.shape) != tuple(q.shape):
        raise KashinError(f"shape mismatch: {X.shape} vs artifact {q.shape}")
    s = error_stats(X, decode(q), q)
    rows = [dict(method=f"kashin-{q.bits}bit-{q.mode.name.lower()}", rel_frobenius=s.rel_frobenius,
                 max_abs=s.max_abs, u_inf=s.u_inf, v_inf=s.v_inf, bits_per_weight=s.bits_per_weight,
                 converged=q.converged)]
    if not args.no_baselines:
        for name, Xh in ((f"uniform-{q.bits}bit", direct_uniform(X, q.bits)),
                         (f"kmeans-{q.bits}bit", direct_kmeans(X, q.bits, seed=args.seed))):
            b = error_stats(X, Xh)
            rows.append(dict(method=name, rel_frobenius=b.rel_frobenius, max_abs=b.max_abs, u_inf=None,
                             v_inf=None, bits_per_weight=float(q.bits), converged=None))
    _emit_rows(rows, args.emit)
    return EXIT_OK


def cmd_estimate(args):
    est = analysis.minmax_table(args.n, trials=args.trials, seed=args.seed,
                                families=tuple(args.families.split(",")), normalize=args.normalize)
    print(analysis.format_table(est, args.emit))
    return EXIT_OK


def _parse_shape(text):
    try:
        m, n = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}") from None
    return m, n


def cmd_bench(args):
    families = tuple(args.families.split(","))
    if args.matrix_vs_vector:
        records = analysis.bench_matrix_vs_vector(args.shape, families=families, trials=args.trials,
                                                  tol=args.tol, max_iter=args.max_iter, seed=args.seed)
    else:
        cfg = analysis.BenchConfig(sizes=tuple(args.sizes), families=families, trials=args.trials,
                                   tol=args.tol, max_iter=args.max_iter, seed=args.seed, jobs=args.jobs)
        records = analysis.bench_convergence(cfg)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            analysis.write_csv(records, fh)
    else:
        analysis.write_csv(records, sys.stdout)
    for row in analysis.summarize(records):
        _err(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    return EXIT_OK


def _add_decomp_flags(p):
    kinds = sorted(KIND_NAMES)
    p.add_argument("--transform", choices=kinds, default="qr", help="orthogonal family for both sides")
    p.add_argument("--transform-left", choices=kinds, help="family for Q1 (rows)")
    p.add_argument("--transform-right", choices=kinds, help="family for Q2 (columns)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="kashinq", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="Kashin-decompose matrices into .kqd files")
    p.add_argument("inputs", nargs="+", help="KDEN or NPY input(s)")
    _add_decomp_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("quantize", help="decompose and quantize into .kqtz artifacts")
    p.add_argument("inputs", nargs="+", help="KDEN / NPY input(s), or .kqd decompositions")
    _add_decomp_flags(p)
    p.add_argument("--bits", type=int, default=4, choices=range(1, 9))
    p.add_argument("--mode", choices=["perfactor", "joint2d"], default="perfactor")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct a dense matrix from a .kqtz artifact")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--float32", action="store_true", help="store the result as float32")
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("stats", help="error and compression report for an artifact")
    p.add_argument("dense")
    p.add_argument("kqtz")
    p.add_argument("--emit", choices=["table", "csv", "json"], default="table")
    p.add_argument("--no-baselines", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("estimate", help="eigenvector min-max estimate per operator family")
    p.add_argument("--table1", action="store_true", help="all four families (the default set)")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--families", default=",".join(analysis.TABLE1_FAMILIES))
    p.add_argument("--normalize", action="store_true", help="rescale real parts to unit norm")
    p.add_argument("--emit", choices=["table", "csv", "json"], default="table")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="convergence curves as CSV")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--convergence", action="store_true", help="vector algorithm over families (default)")
    g.add_argument("--matrix-vs-vector", action="store_true")
    p.add_argument("--sizes", type=int, nargs="+", default=[1000])
    p.add_argument("--shape", type=_parse_shape, default=(64, 32))
    p.add_argument("--families", default="qr,dct,butterfly,householder")
    p.add_argument("--trials", type=int, default=23)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KashinError, OSError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
