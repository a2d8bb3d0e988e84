import numpy as np

_MASK_64 = (1 << 64) - 1


def derive_seed(master: int, *counters: int) -> int:
    """A 64-bit seed that depends only on `master` and the counters."""
    entropy = [master & _MASK_64, *(c & _MASK_64 for c in counters)]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def rng_for(master: int, *counters: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *counters))
