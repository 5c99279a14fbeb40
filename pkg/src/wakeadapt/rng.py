"""Named, counter-based random streams derived from one campaign seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *labels)``.

    Labels may be strings or non-negative integers; the same tuple always gives
    the same stream.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            words.append(zlib.crc32(label.encode()))
        else:
            words.append(int(label))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derived_seed(seed: int, *labels) -> int:
    """A 32-bit integer seed for APIs that take plain ints."""
    return int(stream(seed, *labels).integers(0, 2 ** 31 - 1))


def get_state(gen: np.random.Generator) -> dict:
    state = gen.bit_generator.state
    return _to_jsonable(state)


def from_state(state: dict) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = _from_jsonable(state)
    return np.random.Generator(bg)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": [int(v) for v in obj.ravel()], "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj
