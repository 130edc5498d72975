"""Deterministic random-stream derivation.

Every stochastic component draws from its own substream of a single
64-bit master seed, so any piece of a run (features, errors, mask,
outcome, one imputation chain, one knockoff sample, ...) can be
regenerated in isolation and runs parallelize without sharing state.

Substreams are Philox counter-based generators keyed by
``SeedSequence(seed, spawn_key=path)`` where ``path`` is a tuple of
small integers: typically ``(replicate, role, index...)``. The role
constants below are the documented path vocabulary.
"""

import numpy as np

# role constants used as the second path component
FEATURES = 0
ERRORS = 1
MASK = 2
OUTCOME = 3
BETA = 4
IMPUTE = 5
KNOCKOFF = 6
INTERLEAVE = 7
STAT = 8
STABILITY = 9


def substream(seed, *path):
    """Return a Philox generator for ``(seed, path)``.

    The same ``(seed, path)`` always yields the same stream; distinct
    paths are statistically independent.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in path))
    return np.random.Generator(np.random.Philox(ss))
