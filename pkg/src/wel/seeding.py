"""Order-independent random streams derived from one 64-bit seed."""

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for sub-task ``key`` of run ``seed``.

    Streams are split with ``SeedSequence.spawn_key``, so the numbers a
    sub-task sees do not depend on which other sub-tasks ran or in what
    order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
