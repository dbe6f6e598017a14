import json

import numpy as np
import pytest

from kashinq import tensorio
from kashinq.cli import main
from kashinq.quantize import decode


@pytest.fixture
def gauss(tmp_path):
    def make(m, n, seed=0, name="x.kden"):
        p = tmp_path / name
        tensorio.write_dense(p, np.random.default_rng(seed).standard_normal((m, n)))
        return p
    return make


def test_decompose_converges(gauss, capsys):
    src = gauss(128, 128)
    out = src.with_suffix(".kqd")
    assert main(["decompose", str(src), "--transform", "qr", "-o", str(out)]) == 0
    line = capsys.readouterr().out.strip()
    assert "iterations" in line and "converged" in line
    resid = float(line.split("relative_residual ")[1].split()[0])
    assert resid <= 1e-6
    d = tensorio.read_decomposition(out)
    assert d.report.converged and d.shape == (128, 128)


def test_decompose_butterfly_500_fails(gauss, capsys):
    src = gauss(500, 500)
    assert main(["decompose", str(src), "--transform", "butterfly"]) == 1
    assert "UnsupportedDimensionError" in capsys.readouterr().err


def test_decompose_zero_matrix(tmp_path, capsys):
    src = tmp_path / "z.kden"
    tensorio.write_dense(src, np.zeros((4, 6)))
    assert main(["decompose", str(src)]) == 0
    assert "iterations 0 " in capsys.readouterr().out


def test_unconverged_exit_2_and_artifact_written(gauss, capsys):
    src = gauss(64, 64)
    out = src.with_suffix(".kqtz")
    code = main(["quantize", str(src), "--transform", "householder", "--max-iter", "3", "-o", str(out)])
    cap = capsys.readouterr()
    assert code == 2
    assert "poorly converged" in cap.err
    assert not tensorio.read_kqtz(out).converged


def test_missing_input_exit_1(tmp_path, capsys):
    assert main(["decompose", str(tmp_path / "nope.kden")]) == 1
    assert capsys.readouterr().err.startswith("kashinq:")


def test_corrupt_artifact_exit_1(gauss, capsys):
    src = gauss(8, 8)
    out = src.with_suffix(".kqtz")
    assert main(["quantize", str(src), "-o", str(out)]) == 0
    raw = bytearray(out.read_bytes())
    raw[20] ^= 0xFF
    out.write_bytes(bytes(raw))
    assert main(["dequantize", str(out)]) == 1
    assert "ChecksumError" in capsys.readouterr().err


def test_quantize_stats_beats_uniform(gauss, capsys):
    src = gauss(500, 200)
    out = src.with_suffix(".kqtz")
    assert main(["quantize", str(src), "--bits", "4", "-o", str(out)]) == 0
    capsys.readouterr()
    assert main(["stats", str(src), str(out), "--emit", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    err = {r["method"].split("-")[0]: r["rel_frobenius"] for r in rows}
    assert err["kashin"] < err["uniform"]
    assert set(err) == {"kashin", "uniform", "kmeans"}


@pytest.mark.parametrize("emit", ["table", "csv"])
def test_stats_formats(gauss, capsys, emit):
    src = gauss(16, 8)
    out = src.with_suffix(".kqtz")
    main(["quantize", str(src), "-o", str(out)])
    capsys.readouterr()
    assert main(["stats", str(src), str(out), "--emit", emit, "--no-baselines"]) == 0
    text = capsys.readouterr().out
    assert "rel_frobenius" in text and "kashin" in text


def test_dequantize_constant_exact(tmp_path, capsys):
    src = tmp_path / "c.kden"
    X = np.full((6, 10), 1.25)
    tensorio.write_dense(src, X)
    q = tmp_path / "c.kqtz"
    dst = tmp_path / "c_out.kden"
    assert main(["quantize", str(src), "--bits", "1", "-o", str(q)]) == 0
    assert main(["dequantize", str(q), "-o", str(dst)]) == 0
    np.testing.assert_allclose(tensorio.read_dense(dst), X, atol=1e-6)
    assert main(["dequantize", str(q), "-o", str(dst), "--float32"]) == 0
    assert tensorio.read_dense(dst).dtype == np.float32


def test_npy_input_and_mixed_sides(tmp_path, capsys):
    src = tmp_path / "w.npy"
    np.save(src, np.random.default_rng(1).standard_normal((16, 24)))
    out = tmp_path / "w.kqtz"
    assert main(["quantize", str(src), "--transform-left", "butterfly", "--transform-right", "dct",
                 "--mode", "joint2d", "--bits", "6", "-o", str(out)]) == 0
    q = tensorio.read_kqtz(out)
    assert (int(q.q1.kind), int(q.q2.kind)) == (3, 2)
    assert decode(q).shape == (16, 24)


def test_quantize_from_kqd(gauss, capsys):
    src = gauss(12, 20)
    kqd = src.with_suffix(".kqd")
    assert main(["decompose", str(src), "-o", str(kqd)]) == 0
    a, b = src.parent / "a.kqtz", src.parent / "b.kqtz"
    assert main(["quantize", str(kqd), "-o", str(a)]) == 0
    assert main(["quantize", str(src), "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_byte_reproducible(gauss, tmp_path, capsys):
    src = gauss(32, 64)
    outs, codes = [], []
    for i in range(2):
        o = tmp_path / f"r{i}.kqtz"
        code = main(["quantize", str(src), "--transform", "butterfly", "--seed", "5", "--max-iter", "40",
                     "-o", str(o)])
        assert code in (0, 2)
        codes.append(code)
        outs.append(o.read_bytes())
    assert codes[0] == codes[1]
    assert outs[0] == outs[1]


def test_batch_jobs_naming_and_reproducibility(gauss, tmp_path, capsys):
    srcs = [gauss(8, 16, seed=s, name=f"t{s}.kden") for s in range(3)]
    d1, d2 = tmp_path / "serial", tmp_path / "parallel"
    assert main(["quantize", *map(str, srcs), "--out-dir", str(d1)]) == 0
    assert main(["quantize", *map(str, srcs), "--out-dir", str(d2), "--jobs", "2"]) == 0
    for s in range(3):
        assert (d1 / f"t{s}.kqtz").read_bytes() == (d2 / f"t{s}.kqtz").read_bytes()
    assert main(["quantize", *map(str, srcs), "-o", str(tmp_path / "x.kqtz")]) == 1


def test_estimate_emits_json_on_stdout_only(capsys):
    assert main(["estimate", "--n", "16", "--trials", "2", "--emit", "json"]) == 0
    cap = capsys.readouterr()
    rows = json.loads(cap.out)
    assert [r["family"] for r in rows] == ["Random", "Householder", "DCT", "Butterfly"]
    assert cap.err == ""


def test_bench_csv_stdout_summary_stderr(capsys):
    assert main(["bench", "--convergence", "--sizes", "32", "--families", "qr,dct", "--trials", "2",
                 "--max-iter", "10"]) == 0
    cap = capsys.readouterr()
    lines = cap.out.strip().splitlines()
    assert lines[0] == "family,n,trial,iteration,residual,wall_ns"
    assert all(line.count(",") == 5 for line in lines)
    assert "median_final_residual" in cap.err


def test_bench_matrix_vs_vector_to_file(tmp_path, capsys):
    out = tmp_path / "mv.csv"
    assert main(["bench", "--matrix-vs-vector", "--shape", "8x4", "--families", "qr", "--trials", "1",
                 "--out", str(out)]) == 0
    text = out.read_text()
    assert "qr:matrix" in text and "qr:kron-vector" in text
    assert capsys.readouterr().out == ""


def test_bench_shape_too_large(capsys):
    assert main(["bench", "--matrix-vs-vector", "--shape", "128x128"]) == 1
