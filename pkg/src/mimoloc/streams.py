"""Deterministic random-stream derivation.

Every random draw in the package comes from a counter-keyed substream of
the master seed, so results are reproducible bit-for-bit regardless of
execution order: stream (seed, tag, *indices) -> PCG64 generator seeded
with SeedSequence([seed, tag, *indices]).

Tags: 101 calibration noise, 102 trial noise, 103 trial phases,
105 hold-out noise, 106 scene synthesis for randomized tests.
"""
import numpy as np

TAG_CALIBRATION = 101
TAG_NOISE = 102
TAG_PHASE = 103
TAG_HOLDOUT = 105
TAG_SCENE = 106


def substream(master_seed: int, tag: int, *indices: int) -> np.random.Generator:
    key = [int(master_seed), int(tag), *map(int, indices)]
    if any(k < 0 for k in key):
        raise ValueError("stream keys must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
