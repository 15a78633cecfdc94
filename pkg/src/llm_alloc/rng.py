"""Labeled random substreams so each experiment stage draws independently
from one global seed."""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *labels) -> np.random.Generator:
    key = tuple(
        int.from_bytes(hashlib.sha256(str(lab).encode()).digest()[:4], "little")
        for lab in labels)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**63 - 1),
                                                        spawn_key=key))
