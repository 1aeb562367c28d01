"""Random number generation.

Every random draw in the package goes through :func:`make_rng`, which returns a
NumPy ``Generator`` backed by the counter-based Philox-4x64 bit generator.
Philox output is defined by its key and counter alone, so a seed produces the
same stream on every platform. Gaussian variates use NumPy's ziggurat
transform of that stream (``Generator.standard_normal``).
"""

import numpy as np


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn_seeds(master_seed, n):
    """Derive ``n`` independent 64-bit child seeds from ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n)]
