"""Deterministic seed derivation for independent RNG streams.

Every stochastic stage derives its own stream from the experiment seed
and a stable label, so adding or reordering stages never perturbs the
randomness of unrelated ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(parent: int, name: str, index: int = 0) -> int:
    """Child seed = low 8 bytes of sha256 over 'parent/name/index'."""
    digest = hashlib.sha256(f"{parent}/{name}/{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(parent: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(parent, name, index))
