"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The numba path is used when numba imports cleanly and the environment variable
``KASHINQ_DISABLE_NUMBA`` is unset (or ``0``).  Both implementations are always
importable under explicit names so tests and ``benchmarks/bench_kernels.py`` can
compare them in one process.

Kernels:

* ``butterfly_apply`` -- in-place application of a stack of butterfly factor
  matrices to the columns of an ``(n, b)`` array.  Returns the number of scalar
  multiply-adds executed.
* ``pack_codes`` / ``unpack_codes`` -- little-endian bit packing of small
  integer codes.
* ``nearest_centroid`` -- brute-force nearest-centroid search for points in
  ``R^d``; ties resolve to the lowest centroid index.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("KASHINQ_DISABLE_NUMBA", "0") in ("", "0")

_CHUNK = 8192


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def butterfly_apply_numpy(x, coef, adjoint):
    """Apply ``B_n ... B_2`` (or its transpose) to the columns of ``x`` in place.

    ``coef`` has shape ``(levels, 4, n // 2)``; row ``l`` holds the 2x2 entries
    ``(a, b, c, d)`` of every pair rotated at block size ``2 ** (l + 1)``.
    """
    n, ncols = x.shape
    levels = coef.shape[0]
    order = range(levels - 1, -1, -1) if adjoint else range(levels)
    for lvl in order:
        k = 2 << lvl
        h = k >> 1
        xr = x.reshape(n // k, 2, h, ncols)
        a = coef[lvl, 0].reshape(n // k, h, 1)
        b = coef[lvl, 1].reshape(n // k, h, 1)
        c = coef[lvl, 2].reshape(n // k, h, 1)
        d = coef[lvl, 3].reshape(n // k, h, 1)
        if adjoint:
            b, c = c, b
        x0 = xr[:, 0].copy()
        x1 = xr[:, 1]
        xr[:, 0] = a * x0 + b * x1
        xr[:, 1] = c * x0 + d * x1
    return 2 * n * ncols * levels


def pack_codes_numpy(codes, bits):
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    if codes.size == 0:
        return np.zeros(0, dtype=np.uint8)
    shifts = np.arange(bits, dtype=np.uint8)
    bitmat = ((codes[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(bitmat, bitorder="little")


def unpack_codes_numpy(buf, bits, count):
    buf = np.ascontiguousarray(buf, dtype=np.uint8)
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    flat = np.unpackbits(buf, bitorder="little", count=count * bits)
    weights = (1 << np.arange(bits, dtype=np.uint16)).astype(np.uint16)
    return (flat.reshape(count, bits).astype(np.uint16) @ weights).astype(np.uint8)


def nearest_centroid_numpy(points, centroids):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    npts = points.shape[0]
    labels = np.empty(npts, dtype=np.int64)
    dist = np.empty(npts, dtype=np.float64)
    for start in range(0, npts, _CHUNK):
        blk = points[start:start + _CHUNK]
        diff = blk[:, None, :] - centroids[None, :, :]
        d2 = np.zeros(diff.shape[:2])
        for j in range(diff.shape[2]):
            d2 += diff[:, :, j] * diff[:, :, j]
        idx = np.argmin(d2, axis=1)
        labels[start:start + len(blk)] = idx
        dist[start:start + len(blk)] = d2[np.arange(len(blk)), idx]
    return labels, dist


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _butterfly_apply_nb(x, coef, adjoint):
        n, ncols = x.shape
        levels = coef.shape[0]
        count = 0
        for step in range(levels):
            lvl = levels - 1 - step if adjoint else step
            k = 2 << lvl
            h = k >> 1
            for p in range(n >> 1):
                blk = p // h
                j = p - blk * h
                i0 = blk * k + j
                i1 = i0 + h
                a = coef[lvl, 0, p]
                d = coef[lvl, 3, p]
                if adjoint:
                    b = coef[lvl, 2, p]
                    c = coef[lvl, 1, p]
                else:
                    b = coef[lvl, 1, p]
                    c = coef[lvl, 2, p]
                for col in range(ncols):
                    x0 = x[i0, col]
                    x1 = x[i1, col]
                    x[i0, col] = a * x0 + b * x1
                    x[i1, col] = c * x0 + d * x1
                count += 4 * ncols
        return count

    @numba.njit(cache=True)
    def _pack_codes_nb(codes, bits, out):
        mask = (1 << bits) - 1
        acc = 0
        nacc = 0
        o = 0
        for i in range(codes.shape[0]):
            acc |= (np.int64(codes[i]) & mask) << nacc
            nacc += bits
            while nacc >= 8:
                out[o] = acc & 0xFF
                acc >>= 8
                nacc -= 8
                o += 1
        if nacc > 0:
            out[o] = acc & 0xFF

    @numba.njit(cache=True)
    def _unpack_codes_nb(buf, bits, count, out):
        mask = (1 << bits) - 1
        acc = 0
        nacc = 0
        o = 0
        for i in range(count):
            while nacc < bits:
                acc |= np.int64(buf[o]) << nacc
                nacc += 8
                o += 1
            out[i] = acc & mask
            acc >>= bits
            nacc -= bits

    @numba.njit(cache=True)
    def _nearest_centroid_nb(points, centroids, labels, dist):
        npts, dim = points.shape
        k = centroids.shape[0]
        for i in range(npts):
            best = np.inf
            arg = 0
            for c in range(k):
                s = 0.0
                for j in range(dim):
                    t = points[i, j] - centroids[c, j]
                    s += t * t
                if s < best:
                    best = s
                    arg = c
            labels[i] = arg
            dist[i] = best


def butterfly_apply_numba(x, coef, adjoint):
    return int(_butterfly_apply_nb(x, coef, adjoint))


def pack_codes_numba(codes, bits):
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    out = np.zeros((codes.size * bits + 7) // 8, dtype=np.uint8)
    _pack_codes_nb(codes, bits, out)
    return out


def unpack_codes_numba(buf, bits, count):
    out = np.empty(count, dtype=np.uint8)
    _unpack_codes_nb(np.ascontiguousarray(buf, dtype=np.uint8), bits, count, out)
    return out


def nearest_centroid_numba(points, centroids):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    labels = np.empty(points.shape[0], dtype=np.int64)
    dist = np.empty(points.shape[0], dtype=np.float64)
    _nearest_centroid_nb(points, centroids, labels, dist)
    return labels, dist


if USE_NUMBA:
    butterfly_apply = butterfly_apply_numba
    pack_codes = pack_codes_numba
    unpack_codes = unpack_codes_numba
    nearest_centroid = nearest_centroid_numba
else:
    butterfly_apply = butterfly_apply_numpy
    pack_codes = pack_codes_numpy
    unpack_codes = unpack_codes_numpy
    nearest_centroid = nearest_centroid_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
