"""Named counter-based RNG streams.

Every random consumer (feature draw, teacher weights, label noise, split
permutation, epoch shuffling, ...) gets its own Philox stream keyed by the
run seed plus a fixed stream id, so changing one consumer's draw count never
perturbs another's sequence.
"""

from __future__ import annotations

import numpy as np

FEATURES = 0
TRUE_WEIGHTS = 1
LABEL_NOISE = 2
SPLIT = 3
SHUFFLE = 4
MODEL_INIT = 5
DIAGNOSTICS = 6

_U64 = (1 << 64) - 1


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator identified by ``(seed, key...)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & _U64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
