"""Named, reproducible random sub-streams derived from a single seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key parts must be non-negative, got {part}")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *names: int | str) -> np.random.Generator:
    """Return the generator for the stream ``(seed, *names)``.

    The mapping is a pure function of its arguments, so ``substream(7, "worker", 3)``
    yields the same sequence in every process and in every call order.
    """
    entropy = [_key_part(seed)] + [_key_part(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
