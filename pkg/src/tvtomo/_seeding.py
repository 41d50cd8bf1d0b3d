import numpy as np


def rng_for(seed, *tags) -> np.random.Generator:
    """Generator keyed by a (possibly nested) seed plus integer stream tags."""
    key = [int(k) for k in np.ravel(seed)] + [int(t) for t in tags]
    return np.random.default_rng(key)
