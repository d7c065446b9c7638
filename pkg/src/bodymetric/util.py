"""Small shared helpers: seeding, canonical JSON, atomic writes, thread caps."""

import hashlib
import json
import os
import tempfile

import numpy as np


def stage_seed(seed: int, label: str) -> int:
    """Derive a per-stage 64-bit seed from one global seed and a fixed label.

    Every random draw in the toolkit flows through this, so individual
    pipeline stages are reproducible in isolation.
    """
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stage_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(seed, label))


def canonical_json(obj) -> str:
    """Stable JSON encoding: sorted keys, no whitespace, UTF-8 passthrough."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def thread_count() -> int:
    """Parallelism cap from BODYMETRIC_THREADS; 0 or unset means auto."""
    raw = os.environ.get("BODYMETRIC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n
