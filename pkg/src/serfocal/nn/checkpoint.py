"""Binary checkpoint container.

Layout (little-endian)::

    magic   4s   b"SERC"
    version u32
    meta    u32 length + UTF-8 JSON
    count   u32
    count x record:
        name   u16 length + UTF-8
        ndim   u8
        dims   ndim x u32
        payload prod(dims) x f32
"""

import json
import struct

import numpy as np

from serfocal.errors import FormatError

MAGIC = b"SERC"
VERSION = 1


def save_checkpoint(path, arrays, meta=None):
    """Write ``{name: ndarray}`` (order preserved) plus a JSON metadata blob."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MAGIC, VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError("truncated checkpoint")
    return struct.unpack(fmt, buf)


def load_checkpoint(path):
    """Returns ``(arrays, meta)``; arrays are float32."""
    with open(path, "rb") as fh:
        magic, version, meta_len = _read(fh, "<4sII")
        if magic != MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = _read(fh, "<I")
        arrays = {}
        for _ in range(count):
            (name_len,) = _read(fh, "<H")
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = _read(fh, "<B")
            shape = _read(fh, f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise FormatError(f"truncated payload for {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return arrays, meta
