"""Deterministic sub-seed derivation.

Every random consumer gets its own stream derived from the single run seed,
so changing e.g. the dropout draw order can never perturb the weight init.
"""

import numpy as np

INIT = 0      # parameter initialization
SHUFFLE = 1   # epoch batch shuffling
DROPOUT = 2   # dropout masks
SPLIT = 3     # train/test stratified split


def derive_seed(master: int, consumer: int, *extra: int) -> int:
    """Collapse (master seed, consumer id, extras) into one integer seed."""
    seq = np.random.SeedSequence([int(master), int(consumer), *[int(e) for e in extra]])
    return int(seq.generate_state(1)[0])
