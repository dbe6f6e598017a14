import os
import subprocess
import sys

import numpy as np
import pytest

from kashinq import _kernels as k
from kashinq.ortho import make_butterfly

pytestmark = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("n,cols", [(2, 1), (16, 3), (1024, 7)])
@pytest.mark.parametrize("adjoint", [False, True])
def test_butterfly_backends_agree(n, cols, adjoint):
    coef = make_butterfly(n, seed=n).payload.coef
    x = np.random.default_rng(0).standard_normal((n, cols))
    a, b = x.copy(), x.copy()
    ca = k.butterfly_apply_numpy(a, coef, adjoint)
    cb = k.butterfly_apply_numba(b, coef, adjoint)
    assert ca == cb
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


@pytest.mark.parametrize("bits", range(1, 9))
def test_pack_backends_agree(bits):
    rng = np.random.default_rng(bits)
    for count in (0, 1, 7, 8, 9, 257):
        codes = rng.integers(0, 1 << bits, size=count).astype(np.uint8)
        pa = k.pack_codes_numpy(codes, bits)
        pb = k.pack_codes_numba(codes, bits)
        assert pa.tobytes() == pb.tobytes()
        assert len(pa) == (count * bits + 7) // 8
        assert np.array_equal(k.unpack_codes_numpy(pa, bits, count), codes)
        assert np.array_equal(k.unpack_codes_numba(pa, bits, count), codes)


def test_pack_layout_is_little_endian():
    # two 4-bit codes 0x1, 0xA share one byte, first code in the low nibble
    assert k.pack_codes_numpy(np.array([1, 10], np.uint8), 4).tolist() == [0xA1]
    assert k.pack_codes_numba(np.array([1, 0, 1], np.uint8), 1).tolist() == [0b101]


@pytest.mark.parametrize("d", [1, 2])
def test_nearest_centroid_backends_agree(d):
    rng = np.random.default_rng(d)
    pts = rng.standard_normal((20000, d))
    cen = rng.standard_normal((16, d))
    la, da = k.nearest_centroid_numpy(pts, cen)
    lb, db = k.nearest_centroid_numba(pts, cen)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(da, db, atol=1e-12)
    brute = ((pts[:, None, :] - cen[None]) ** 2).sum(-1).argmin(1)
    assert np.array_equal(la, brute)


def test_nearest_centroid_tie_takes_lowest_index():
    pts = np.array([[0.0]])
    cen = np.array([[-1.0], [1.0]])
    assert k.nearest_centroid_numpy(pts, cen)[0][0] == 0
    assert k.nearest_centroid_numba(pts, cen)[0][0] == 0


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, KASHINQ_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import kashinq; print(kashinq.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
