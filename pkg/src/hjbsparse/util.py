"""Shared helpers: seeded counter-based RNG, file digests, JSON-safe conversion."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

RNG_NAME = "philox4x64"


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based 64-bit generator; every stochastic routine takes an explicit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            block = f.read(1 << 20)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dumps emits plain Python types.

    Floats go through float() and are therefore printed by json with the
    shortest round-trip representation.
    """
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj
