"""Binary file formats and atomic file writing.

Array file (".r2ta"): little-endian, 16-byte header
    magic "R2TA" | version u32 | ndim u32 | dim0 u32
followed by (ndim-1) further u32 dims when ndim > 1, then float32 payload
in row-major order.  Scene heatmaps are stored flat (ndim=1), which keeps
the header at exactly 16 bytes.

Checkpoint file (".r2tc"): little-endian
    magic "R2TC" | version u32 | count u32
then per array: name_len u32 | UTF-8 name | ndim u32 | dims u32* | float32
payload.  Readers reject unknown magic or version.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError

ARRAY_MAGIC = b"R2TA"
CKPT_MAGIC = b"R2TC"
FORMAT_VERSION = 1


def atomic_write_bytes(path, payload):
    """Write via a sibling temp file + rename so readers never see partials."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def _pack_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return struct.pack("<I", arr.ndim) + dims + arr.tobytes()


def write_array(path, arr):
    arr = np.asarray(arr)
    payload = ARRAY_MAGIC + struct.pack("<I", FORMAT_VERSION) + _pack_array(arr)
    atomic_write_bytes(path, payload)


def read_array(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != ARRAY_MAGIC:
        raise CheckpointError(f"{path}: bad array magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported array version {version}")
    arr, off = _unpack_array(raw, 8, path)
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after array payload")
    return arr


def _unpack_array(raw, off, path):
    (ndim,) = struct.unpack_from("<I", raw, off)
    off += 4
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    end = off + 4 * n
    if end > len(raw):
        raise CheckpointError(f"{path}: truncated array payload")
    arr = np.frombuffer(raw[off:end], dtype="<f4").reshape(dims).copy()
    return arr, end


def write_checkpoint(path, arrays):
    """Write an ordered name->ndarray mapping as a checkpoint file."""
    parts = [CKPT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        enc = name.encode()
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
        parts.append(_pack_array(arr))
    atomic_write_bytes(path, b"".join(parts))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        arrays[name], off = _unpack_array(raw, off, path)
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last array")
    return arrays
