"""Binary containers: KDEN (dense tensors), KQDC (decompositions), KQTZ (quantized).

All integers and floats are little-endian.  Every container ends with a CRC32
of all preceding bytes.  Readers check structure first (so a short file is
reported as truncated), then the checksum, then semantic constraints, and
never allocate more than the input size.

KDEN v1::

    magic "KDEN" | version u16 | dtype u8 (0=f64, 1=f32) | rank u8 (1|2)
    | dims u32 x rank | payload (row-major) | crc32 u32

KQTZ v1::

    magic "KQTZ" | version u16 | m u32 | n u32
    | 2 x [kind u8 | dim u32 | seed u64 | blob_len u32 | blob]
    | scale f32 | mode u8 | bits u8 | count u16 | count x f32 centroids
    | codes_u ceil(m*n*bits/8) bytes | codes_v (same length, PER_FACTOR only)
    | converged u8 | crc32 u32

PER_FACTOR centroids are stored as the ``2**bits`` U values followed by the
``2**bits`` V values; JOINT_2D centroids as interleaved ``(u, v)`` pairs.

KQDC v1 (full-precision decomposition)::

    magic "KQDC" | version u16 | m u32 | n u32 | 2 x descriptor (as KQTZ)
    | scale f64 | tol f64 | iterations u32 | converged u8 | poorly u8
    | U, V_hat, residual (f64, m*n each) | iterations+1 x f64 residual norms
    | iterations x u8 branch choices | crc32 u32
"""

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .decomp import Branch, ConvergenceReport, MatrixDecomposition
from .errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    MalformedError,
    TruncatedError,
    UnsupportedKindError,
    UnsupportedVersionError,
)
from .ortho import Kind
from .quantize import (
    Codebook,
    Mode,
    QuantizedTensor,
    TransformDescriptor,
    _payload_crc,
    stream_nbytes,
)

KDEN_MAGIC = b"KDEN"
KQTZ_MAGIC = b"KQTZ"
KQDC_MAGIC = b"KQDC"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, nbytes):
        if nbytes < 0 or self.pos + nbytes > len(self.buf):
            raise TruncatedError(f"need {nbytes} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def remaining(self):
        return len(self.buf) - self.pos


def _header(r, magic):
    head = bytes(r.buf[:4])
    if len(head) < 4:
        if magic.startswith(head):
            raise TruncatedError("file shorter than its magic number")
        raise BadMagicError(f"bad magic {head!r}")
    if head != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {head!r}")
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported {magic.decode()} version {version}")


def _finish_crc(r):
    if r.remaining() < 4:
        raise TruncatedError("missing CRC32 trailer")
    if r.remaining() > 4:
        raise MalformedError(f"{r.remaining() - 4} trailing bytes after payload")
    body = r.buf[:r.pos]
    (stored,) = r.unpack("<I")
    if zlib.crc32(body) != stored:
        raise ChecksumError("CRC32 mismatch")


def _atomic_write(path, data):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _with_crc(parts):
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


# ---------------------------------------------------------------------------
# KDEN
# ---------------------------------------------------------------------------

def dense_bytes(array):
    a = np.asarray(array)
    if a.ndim not in (1, 2) or a.size == 0:
        raise MalformedError(f"KDEN stores non-empty rank-1 or rank-2 arrays, got shape {a.shape}")
    if a.dtype == np.float32:
        code = 1
    else:
        code = 0
        a = a.astype(np.float64)
    header = KDEN_MAGIC + struct.pack("<HBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    payload = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
    return _with_crc([header, payload])


def dense_from_bytes(buf):
    r = _Reader(buf)
    _header(r, KDEN_MAGIC)
    code, rank = r.unpack("<BB")
    if code not in _DTYPES:
        raise MalformedError(f"unknown dtype code {code}")
    if rank not in (1, 2):
        raise MalformedError(f"unsupported rank {rank}")
    dims = r.unpack(f"<{rank}I")
    if 0 in dims:
        raise MalformedError("zero-length dimension")
    nbytes = int(np.prod(dims, dtype=np.int64)) * _DTYPES[code].itemsize
    if r.remaining() < nbytes + 4:
        raise TruncatedError(f"payload needs {nbytes} bytes plus CRC, have {r.remaining()}")
    payload = r.take(nbytes)
    _finish_crc(r)
    return np.frombuffer(payload, dtype=_DTYPES[code]).reshape(dims).astype(_DTYPES[code].newbyteorder("="))


def write_dense(path, array):
    _atomic_write(path, dense_bytes(array))


def read_dense(path):
    return dense_from_bytes(Path(path).read_bytes())


def read_npy(path):
    """Import an NPY v1 file holding a C-ordered float32/float64 array."""
    with open(path, "rb") as fh:
        try:
            version = np.lib.format.read_magic(fh)
        except ValueError as exc:
            raise BadMagicError(str(exc)) from None
        if version != (1, 0):
            raise UnsupportedVersionError(f"only NPY v1.0 is supported, got {version}")
        try:
            shape, fortran, dtype = np.lib.format.read_array_header_1_0(fh)
        except ValueError as exc:
            raise MalformedError(str(exc)) from None
        if fortran:
            raise MalformedError("Fortran-ordered NPY arrays are not supported")
        if dtype.kind != "f" or dtype.itemsize not in (4, 8):
            raise MalformedError(f"unsupported NPY dtype {dtype}")
        count = int(np.prod(shape, dtype=np.int64))
        data = fh.read(count * dtype.itemsize)
    if len(data) < count * dtype.itemsize:
        raise TruncatedError("NPY payload is truncated")
    return np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def read_tensor(path):
    """Read a KDEN or NPY file (chosen by magic number)."""
    with open(path, "rb") as fh:
        head = fh.read(6)
    if head.startswith(b"\x93NUMPY"):
        return read_npy(path)
    return read_dense(path)


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

def _desc_bytes(d):
    blob = bytes(d.blob)
    return struct.pack("<BIQI", int(d.kind), d.dim, d.seed & 0xFFFFFFFFFFFFFFFF, len(blob)) + blob


def _read_desc(r):
    kind, dim, seed, blen = r.unpack("<BIQI")
    blob = bytes(r.take(blen))
    return kind, dim, seed, blob


def _check_desc(raw, expect_dim):
    kind, dim, seed, blob = raw
    try:
        kind = Kind(kind)
    except ValueError:
        raise UnsupportedKindError(f"unknown transform kind code {kind}") from None
    if dim != expect_dim:
        raise MalformedError(f"transform dimension {dim} does not match tensor dimension {expect_dim}")
    return TransformDescriptor(kind, dim, seed, blob)


# ---------------------------------------------------------------------------
# KQTZ
# ---------------------------------------------------------------------------

def kqtz_bytes(q):
    m, n = q.shape
    cb = q.codebook
    if cb.mode == Mode.PER_FACTOR:
        cents = np.concatenate([cb.centroids[0], cb.centroids[1]])
    else:
        cents = cb.centroids.reshape(-1)
    parts = [
        KQTZ_MAGIC,
        struct.pack("<HII", VERSION, m, n),
        _desc_bytes(q.q1),
        _desc_bytes(q.q2),
        struct.pack("<fBBH", float(q.scale), int(cb.mode), cb.bits, cents.size),
        np.ascontiguousarray(cents, dtype="<f4").tobytes(),
        bytes(np.asarray(q.codes_u, dtype=np.uint8)),
    ]
    if cb.mode == Mode.PER_FACTOR:
        parts.append(bytes(np.asarray(q.codes_v, dtype=np.uint8)))
    parts.append(struct.pack("<B", int(bool(q.converged))))
    return _with_crc(parts)


def kqtz_from_bytes(buf):
    r = _Reader(buf)
    _header(r, KQTZ_MAGIC)
    m, n = r.unpack("<II")
    raw1 = _read_desc(r)
    raw2 = _read_desc(r)
    (scale, mode, bits, count) = r.unpack("<fBBH")
    if mode not in (0, 1):
        raise MalformedError(f"unknown quantization mode {mode}")
    cents = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32)
    nbytes = stream_nbytes(m * n, bits)
    codes_u = np.frombuffer(r.take(nbytes), dtype=np.uint8).copy()
    codes_v = np.frombuffer(r.take(nbytes), dtype=np.uint8).copy() if mode == 0 else None
    (converged,) = r.unpack("<B")
    _finish_crc(r)

    if m == 0 or n == 0:
        raise MalformedError("empty tensor shape")
    if not 1 <= bits <= 8:
        raise MalformedError(f"bits {bits} out of range")
    if count != 2 * (1 << bits):
        raise MalformedError(f"codebook holds {count} values, expected {2 * (1 << bits)}")
    if converged > 1:
        raise MalformedError("converged flag must be 0 or 1")
    if not np.isfinite(scale) or not np.all(np.isfinite(cents)):
        raise MalformedError("non-finite scale or centroid")
    q1 = _check_desc(raw1, m)
    q2 = _check_desc(raw2, n)
    mode = Mode(mode)
    k = 1 << bits
    cent_arr = cents.reshape(2, k) if mode == Mode.PER_FACTOR else cents.reshape(k, 2)
    codebook = Codebook(mode, bits, cent_arr)
    return QuantizedTensor(
        shape=(m, n), q1=q1, q2=q2, scale=np.float32(scale), codebook=codebook,
        codes_u=codes_u, codes_v=codes_v, converged=bool(converged),
        checksum=_payload_crc(codebook, codes_u, codes_v),
    )


def write_kqtz(path, q):
    _atomic_write(path, kqtz_bytes(q))


def read_kqtz(path):
    return kqtz_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# KQDC
# ---------------------------------------------------------------------------

def decomposition_bytes(d):
    from .quantize import TransformDescriptor as TD

    m, n = d.shape
    rep = d.report
    parts = [
        KQDC_MAGIC,
        struct.pack("<HII", VERSION, m, n),
        _desc_bytes(TD.from_operator(d.q1)),
        _desc_bytes(TD.from_operator(d.q2)),
        struct.pack("<ddIBB", float(d.scale), float(rep.tol or 0.0), rep.iterations,
                    int(rep.converged), int(rep.poorly_converged)),
    ]
    for a in (d.U, d.V_hat, d.residual):
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    parts.append(np.asarray(rep.residual_norms, dtype="<f8").tobytes())
    parts.append(np.asarray(rep.branch_choices, dtype=np.uint8).tobytes())
    return _with_crc(parts)


def decomposition_from_bytes(buf):
    r = _Reader(buf)
    _header(r, KQDC_MAGIC)
    m, n = r.unpack("<II")
    raw1 = _read_desc(r)
    raw2 = _read_desc(r)
    scale, tol, iters, conv, poor = r.unpack("<ddIBB")
    mats = [np.frombuffer(r.take(8 * m * n), dtype="<f8").reshape(m, n).copy() for _ in range(3)]
    norms = np.frombuffer(r.take(8 * (iters + 1)), dtype="<f8").tolist()
    branches = bytes(r.take(iters))
    _finish_crc(r)
    if m == 0 or n == 0:
        raise MalformedError("empty tensor shape")
    if any(b > 1 for b in branches):
        raise MalformedError("invalid branch code")
    q1 = _check_desc(raw1, m).build()
    q2 = _check_desc(raw2, n).build()
    report = ConvergenceReport(
        residual_norms=norms,
        branch_choices=[Branch(b) for b in branches],
        iterations=iters,
        converged=bool(conv),
        poorly_converged=bool(poor),
        tol=tol,
    )
    if iters and norms[-1] > 0:
        report.contraction_estimate = (norms[-1] / norms[0]) ** (1.0 / iters)
    return MatrixDecomposition(mats[0], mats[1], mats[2], scale, report, q1, q2)


def write_decomposition(path, d):
    _atomic_write(path, decomposition_bytes(d))


def read_decomposition(path):
    return decomposition_from_bytes(Path(path).read_bytes())


__all__ = [
    "FormatError", "dense_bytes", "dense_from_bytes", "write_dense", "read_dense", "read_npy",
    "read_tensor", "kqtz_bytes", "kqtz_from_bytes", "write_kqtz", "read_kqtz",
    "decomposition_bytes", "decomposition_from_bytes", "write_decomposition", "read_decomposition",
]
