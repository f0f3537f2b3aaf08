"""Per-episode random streams.

Every episode draws from its own PCG64 generator seeded by a numpy
``SeedSequence`` whose spawn key is ``(purpose, iteration, index)``.  An
episode's randomness therefore depends only on the run seed and its
coordinates, never on how a batch is split across workers.
"""

import numpy as np

TRAIN = 0
EVALUATE = 1
ROLLOUT = 2


def episode_rng(seed, purpose=TRAIN, iteration=0, index=0):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(iteration), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def episode_rngs(seed, count, purpose=TRAIN, iteration=0, start=0):
    return [episode_rng(seed, purpose, iteration, start + n) for n in range(count)]


def cdf_table(probs):
    """Cumulative table along the last axis, normalised so the final column is exactly 1."""
    cdf = np.cumsum(probs, axis=-1)
    return cdf / cdf[..., -1:]


def draw(cdf_rows, u):
    """Inverse-CDF sampling, one uniform per row.

    ``cdf_rows`` has shape (B, K) and comes from :func:`cdf_table`; zero-probability
    outcomes are never returned because their cumulative value equals the previous one.
    """
    return np.sum(u[:, None] >= cdf_rows, axis=1)
