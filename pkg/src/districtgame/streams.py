"""Derived random streams.

Every source of randomness in the engine is a ``random.Random`` seeded
through this module, so runs are reproducible bit for bit across platforms
and processes. Streams are derived by hashing a master seed together with
string/int tags (never Python's salted ``hash``).
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master_seed: int, *tags: object) -> int:
    """Stable 64-bit seed from a master seed and a tag tuple."""
    payload = repr((int(master_seed),) + tuple(tags)).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, *tags: object) -> random.Random:
    return random.Random(derive_seed(master_seed, *tags))
