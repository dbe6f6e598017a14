"""Acceptance gate, one test per criterion at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` to see the PASS/FAIL summary lines.
"""

import json
import math
import os
import struct
import subprocess
import sys
import time
import warnings
import zlib

import numpy as np
import pytest

from kashinq import analysis, tensorio
from kashinq.cli import main
from kashinq.decomp import infinity_bound, kashin_matrix, kashin_vector, kronecker_operator, vec
from kashinq.errors import KashinError
from kashinq.ortho import count_ops, make_butterfly, make_operator
from kashinq.quantize import decode, direct_uniform, encode

FAMILIES = ("qr", "householder", "dct", "butterfly")


# --- C1 ---------------------------------------------------------------------

@pytest.mark.criterion("C1", "eigenvector min-max table at n=500, 20 trials")
def test_c1_table(capsys, measured):
    t0 = time.perf_counter()
    code = main(["estimate", "--table1", "--n", "500", "--trials", "20", "--seed", "0", "--emit", "json"])
    elapsed = time.perf_counter() - t0
    rows = {r["family"]: r for r in json.loads(capsys.readouterr().out)}
    means = {k: rows[k]["mean"] for k in ("Random", "Householder", "DCT", "Butterfly")}
    measured(" ".join(f"{k}={v:.3f}" for k, v in means.items()) + f" time={elapsed:.1f}s")
    assert code == 0
    assert rows["Butterfly"]["n"] == 512
    assert 0.50 <= means["Random"] <= 0.60
    assert 0.03 <= means["Householder"] <= 0.15
    assert 0.31 <= means["DCT"] <= 0.35
    assert 0.50 <= means["Butterfly"] <= 0.60
    assert min(means["Random"], means["Butterfly"]) > means["DCT"] > means["Householder"]
    assert means["Random"] - means["DCT"] > 0.1 and means["DCT"] - means["Householder"] > 0.1
    assert elapsed <= 300


# --- C2 ---------------------------------------------------------------------

@pytest.mark.criterion("C2", "matrix algorithm equals vector algorithm on the Kronecker operator")
def test_c2_kronecker(measured):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(20):
        fam = FAMILIES[case % 4]
        m, n = (int(v) for v in rng.choice([2, 4, 8], size=2))
        q1 = make_operator(fam, m, int(rng.integers(2**32)))
        q2 = make_operator(fam, n, int(rng.integers(2**32)))
        X = rng.standard_normal((m, n))
        dm = kashin_matrix(X, q1, q2)
        dv = kashin_vector(vec(X), kronecker_operator(q1, q2))
        assert dm.report.branch_choices == dv.report.branch_choices, (case, fam, m, n)
        assert len(dm.report.residual_norms) == len(dv.report.residual_norms)
        diff = np.abs(np.subtract(dm.report.residual_norms, dv.report.residual_norms)).max()
        worst = max(worst, float(diff))
        assert diff <= 1e-8
    measured(f"max residual gap {worst:.1e}")


# --- C3 ---------------------------------------------------------------------

@pytest.mark.criterion("C3", "per-iteration Pythagorean step identity in R^256")
def test_c3_pythagorean(measured):
    n = 256
    worst = 0.0
    steps = 0
    for fam in FAMILIES:
        op = make_operator(fam, n, 3)
        for trial in range(50):
            x = np.random.default_rng([trial, 7]).standard_normal(n)
            x /= np.linalg.norm(x)
            rep = kashin_vector(x, op, max_iter=300).report
            r = np.asarray(rep.residual_norms)
            l1 = np.asarray(rep.step_l1)
            gap = np.abs(r[1:] ** 2 - (r[:-1] ** 2 - l1 ** 2 / n))
            worst = max(worst, float(gap.max()))
            steps += gap.size
    measured(f"{steps} steps, max gap {worst:.1e}")
    assert worst <= 1e-9


# --- C4 ---------------------------------------------------------------------

@pytest.mark.criterion("C4", "convergence ordering at n=1000, 23 trials, 200 iterations")
def test_c4_convergence(measured):
    cfg = analysis.BenchConfig(sizes=(1000,), families=("qr", "householder"), trials=23, tol=1e-6, max_iter=200)
    recs = analysis.bench_convergence(cfg)
    qr = [r for r in recs if r.operator_kind == "qr"]
    hh = [r for r in recs if r.operator_kind == "householder"]
    qr_ok = np.mean([r.final_residual <= 1e-6 for r in qr])
    hh_stuck = np.mean([r.final_residual >= 1e-2 for r in hh])
    measured(f"qr reached 1e-6 in {qr_ok:.0%}; householder final >= 1e-2 in {hh_stuck:.0%} "
             f"(median {np.median([r.final_residual for r in hh]):.3f})")
    assert len(qr) == len(hh) == 23
    assert qr_ok >= 0.95
    assert hh_stuck >= 0.50


# --- C5 ---------------------------------------------------------------------

@pytest.mark.criterion("C5", "4-bit Kashin beats 4-bit uniform; error monotone over bits")
def test_c5_quantization(measured):
    X = np.random.default_rng(0).standard_normal((500, 200))
    d = kashin_matrix(X, make_operator("qr", 500, 0), make_operator("qr", 200, 1))
    rel = lambda Y: float(np.linalg.norm(Y - X) / np.linalg.norm(X))  # noqa: E731
    errs = {b: rel(decode(encode(d, bits=b, mode="perfactor"))) for b in range(2, 7)}
    uniform4 = rel(direct_uniform(X, 4))
    measured(f"kashin4={errs[4]:.4f} uniform4={uniform4:.4f} "
             + "curve=" + ",".join(f"{errs[b]:.4f}" for b in range(2, 7)))
    assert errs[4] < uniform4
    assert all(errs[b + 1] < errs[b] for b in range(2, 6))


# --- C6 ---------------------------------------------------------------------

@pytest.mark.criterion("C6", "infinity-norm concentration in R^512, 50 trials")
def test_c6_infinity_norm(measured):
    vals = []
    for trial in range(50):
        rng = np.random.default_rng([6, trial])
        x = rng.standard_normal(512)
        x /= np.linalg.norm(x)
        d = kashin_vector(x, make_operator("qr", 512, int(rng.integers(2**32))), tol=1e-6)
        assert d.report.converged
        vals.append(infinity_bound(d))
    v = np.asarray(vals)
    measured(f"min {v.min():.2f} median {np.median(v):.2f} p90 {np.quantile(v, 0.9):.2f} max {v.max():.2f}")
    assert v.max() <= 5.0


# --- C7 ---------------------------------------------------------------------

@pytest.mark.criterion("C7", "butterfly multiply-add budget; matrix path faster than Kronecker path")
def test_c7_fast_paths(measured):
    counts = []
    for n in (256, 1024, 4096):
        op = make_butterfly(n, 0)
        x = np.random.default_rng(n).standard_normal(n)
        for fn in (op.apply, op.apply_adjoint):
            with count_ops() as c:
                fn(x)
            assert 0 < c.multiply_adds <= 4 * n * math.log2(n)
            assert c.dense_materializations == 0
        counts.append(f"n={n}:{c.multiply_adds}/{int(4 * n * math.log2(n))}")
    recs = analysis.bench_matrix_vs_vector((64, 32), families=("qr", "dct"), trials=3)
    wall = {}
    for r in recs:
        wall.setdefault(r.path, []).append(r.wall_ns)
    mat, kron = np.median(wall["matrix"]), np.median(wall["kron-vector"])
    measured(" ".join(counts) + f"; matrix {mat / 1e6:.1f} ms vs kron {kron / 1e6:.1f} ms")
    assert mat < kron


# --- C8 ---------------------------------------------------------------------

def _fuzz_bases():
    rng = np.random.default_rng(8)
    bases = []
    for fam, mode, bits in (("butterfly", "perfactor", 3), ("householder", "joint2d", 2),
                            ("qr", "perfactor", 1), ("dct", "joint2d", 5)):
        X = rng.standard_normal((4, 8))
        d = kashin_matrix(X, make_operator(fam, 4, 1), make_operator(fam, 8, 2), max_iter=60)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            bases.append(("kqtz", tensorio.kqtz_bytes(encode(d, bits=bits, mode=mode))))
    bases.append(("kden", tensorio.dense_bytes(rng.standard_normal((3, 5)))))
    bases.append(("kden", tensorio.dense_bytes(rng.standard_normal(7).astype(np.float32))))
    return bases


def _recrc(body):
    return body + struct.pack("<I", zlib.crc32(body))


def run_fuzz(cases=10_000, seed=0):
    """Mutate valid files and feed them to the readers.

    Returns ``(outcome counts, list of failures)``.  A failure is any
    exception outside the library's typed errors, or a read that succeeds on
    corrupted bytes but returns something different from the original.
    """
    rng = np.random.default_rng(seed)
    bases = _fuzz_bases()
    readers = {"kqtz": tensorio.kqtz_from_bytes, "kden": tensorio.dense_from_bytes}
    outcomes, failures = {}, []
    for case in range(cases):
        kind, base = bases[case % len(bases)]
        buf = bytearray(base)
        op = case % 5
        crc_fixed = False
        if op == 0:  # random byte flips
            for _ in range(int(rng.integers(1, 5))):
                buf[int(rng.integers(len(buf)))] ^= int(rng.integers(1, 256))
        elif op == 1:  # truncation
            buf = buf[:int(rng.integers(0, len(buf)))]
        elif op == 2:  # garbage, sometimes behind a valid magic
            buf = bytearray(rng.integers(0, 256, size=int(rng.integers(0, 200)), dtype=np.uint8).tobytes())
            if rng.random() < 0.5:
                buf[:4] = base[:4]
        elif op == 3:  # header mutation with a recomputed CRC
            body = bytearray(base[:-4])
            pos = int(rng.integers(0, min(len(body), 48)))
            body[pos] = int(rng.integers(0, 256))
            buf = bytearray(_recrc(bytes(body)))
            crc_fixed = True
        else:  # insert or append bytes
            pos = int(rng.integers(0, len(buf) + 1))
            buf[pos:pos] = rng.integers(0, 256, size=int(rng.integers(1, 9)), dtype=np.uint8).tobytes()
        data = bytes(buf)
        try:
            obj = readers[kind](data)
        except KashinError as exc:
            name = type(exc).__name__
            outcomes[name] = outcomes.get(name, 0) + 1
            continue
        except Exception as exc:  # noqa: BLE001 - anything untyped is a failure
            failures.append((case, op, repr(exc)))
            continue
        if data == base:
            outcomes["unchanged"] = outcomes.get("unchanged", 0) + 1
            continue
        if not crc_fixed:
            failures.append((case, op, "corrupted bytes were accepted"))
            continue
        # a consistent file with a different header: using it must stay typed too
        try:
            out = decode(obj) if kind == "kqtz" else obj
            assert np.asarray(out).size > 0
            outcomes["accepted-consistent"] = outcomes.get("accepted-consistent", 0) + 1
        except KashinError as exc:
            name = "decode:" + type(exc).__name__
            outcomes[name] = outcomes.get(name, 0) + 1
        except Exception as exc:  # noqa: BLE001
            failures.append((case, op, "decode " + repr(exc)))
    return outcomes, failures


_STABILITY_SCRIPT = r"""
import hashlib, sys, warnings
import numpy as np
from kashinq import tensorio
from kashinq.decomp import kashin_matrix
from kashinq.ortho import make_operator
from kashinq.quantize import decode, encode
h = hashlib.sha256()
rng = np.random.default_rng(1)
for fam in ("qr", "householder", "dct", "butterfly"):
    for mode in ("perfactor", "joint2d"):
        X = rng.standard_normal((16, 32))
        d = kashin_matrix(X, make_operator(fam, 16, 3), make_operator(fam, 32, 4), max_iter=200)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            buf = tensorio.kqtz_bytes(encode(d, bits=4, mode=mode))
        h.update(buf)
        h.update(decode(tensorio.kqtz_from_bytes(buf)).tobytes())
        h.update(tensorio.decomposition_bytes(d))
        h.update(tensorio.dense_from_bytes(tensorio.dense_bytes(X)).tobytes())
print(h.hexdigest())
"""


@pytest.mark.criterion("C8", "10,000-case reader fuzz; bitwise-stable round trips across runs")
def test_c8_format_robustness(measured):
    outcomes, failures = run_fuzz(10_000, seed=0)
    total = sum(outcomes.values()) + len(failures)
    measured(f"{total} cases, {len(failures)} untyped/corrupt, outcomes {dict(sorted(outcomes.items()))}")
    assert total == 10_000
    assert failures == []
    digests = [
        subprocess.run([sys.executable, "-c", _STABILITY_SCRIPT], capture_output=True, text=True,
                       check=True, env=dict(os.environ)).stdout.strip()
        for _ in range(2)
    ]
    measured(f"round-trip digest {digests[0][:12]}")
    assert digests[0] == digests[1]
    assert len(digests[0]) == 64
