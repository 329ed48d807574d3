"""Deterministic seed derivation.

Every random draw in the package flows from a single integer seed through
``numpy.random.SeedSequence`` spawn keys, so independent pipeline stages get
independent streams and any stage can be reproduced in isolation. Paths are
small integer tuples; the tag constants below name the tree branches.
"""

import numpy as np

TAG_DATASET = 1
TAG_INIT = 2
TAG_SHUFFLE = 3
TAG_GRAD = 4
TAG_EVAL_EPOCH = 5
TAG_PERTURB = 6
TAG_EVAL = 7
TAG_BASE = 8
TAG_FLIP = 9
TAG_EXPLAIN = 10
TAG_FIDELITY = 11
TAG_RANDOM = 12


def spawn_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and a derivation path."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


def spawn_seed(seed: int, *path: int) -> int:
    """Derived integer seed, usable as the root of a child derivation tree."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(1, np.uint64)
    return int(state[0])
