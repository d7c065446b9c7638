"""Writer (and reader, for round-trip checks) for the EMB1 store layout the
scoring toolkit consumes.

Layout, all little-endian: magic "EMB1", u32 dim, u32 count, then per record
a u16 id length, the UTF-8 id bytes, and dim float32 values.
"""

import os
import struct
import tempfile

import numpy as np

MAGIC = b"EMB1"


def write_store(table, path):
    """Write {id: float vector} to path. Records are sorted by id so the
    same table always produces the same bytes."""
    ids = sorted(table)
    dim = None
    for key in ids:
        vec = np.asarray(table[key], dtype=np.float32)
        if vec.ndim != 1:
            raise ValueError(f"vector for {key!r} is not 1-d")
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise ValueError(f"vector for {key!r} has dim {vec.shape[0]}, store has {dim}")
    if dim is None:
        raise ValueError("cannot write an empty store")

    chunks = [MAGIC, struct.pack("<II", dim, len(ids))]
    for key in ids:
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long: {key!r}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(np.asarray(table[key], dtype="<f4").tobytes())
    data = b"".join(chunks)

    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_store(path):
    """Inverse of write_store, used by the self-tests."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}")
    dim, count = struct.unpack_from("<II", data, 4)
    table = {}
    pos = 12
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        key = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        table[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).copy()
        pos += 4 * dim
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes")
    return table
