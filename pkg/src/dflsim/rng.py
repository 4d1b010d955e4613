"""Deterministic per-purpose random streams.

Every stochastic choice in a run draws from a generator keyed by
(seed, node, round, purpose), so results are independent of scheduling
and worker count: any worker asking for the same key gets the same stream.
"""
from __future__ import annotations

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def _purpose_code(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, node: int = 0, round_idx: int = 0, purpose: str = "") -> np.random.Generator:
    """Return a fresh generator for the given (seed, node, round, purpose) key."""
    key = (seed & _U64, node & _U64, round_idx & _U64, _purpose_code(purpose))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
