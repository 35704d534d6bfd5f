"""Deterministic seed derivation and stable hashing.

Python's builtin ``hash`` is salted per process, so every hash that feeds a
seed, a feature bucket or a data split goes through blake2b instead.  This is
what makes reruns of any verb byte-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = b"\x1f"


def stable_digest(*parts: object) -> bytes:
    """8-byte blake2b digest of the stringified parts."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(_SEP)
    return h.digest()


def stable_hash64(*parts: object) -> int:
    return int.from_bytes(stable_digest(*parts), "big")


def derive_seed(*parts: object) -> int:
    """Non-negative 63-bit seed derived deterministically from the parts."""
    return stable_hash64(*parts) & 0x7FFF_FFFF_FFFF_FFFF


def rng_from(*parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def stable_bucket(text: str, buckets: int) -> int:
    """Stable bucket index for the hashing trick used by feature maps."""
    return stable_hash64("bucket", text) % buckets
