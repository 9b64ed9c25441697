"""Deterministic seed derivation for independent random substreams.

Every source of randomness in a run (weight init per party, batch
shuffling, mask drawing, key generation, synthetic data) takes its own
substream derived from the run seed plus string tags. Derivation goes
through sha256 rather than Python's hash(), which is randomized per
process and would break cross-process reproducibility.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(base: int, *tags: object) -> int:
    """Map a base seed and a tag path to a stable 64-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(base)).encode("utf-8"))
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def substream(base: int, *tags: object) -> random.Random:
    """A fresh Random seeded from derive_seed(base, *tags)."""
    return random.Random(derive_seed(base, *tags))
