"""Tagged, reproducible random substreams.

Every stochastic quantity in the package draws from a generator derived
from a root ``SeedSequence`` plus a tuple of integer tags (replication
chunk, grid event, stage, ...).  Streams with different tags are
statistically independent by the seed-sequence construction, and the
mapping from tags to streams does not depend on evaluation order or on
how work is spread over processes -- which is what makes replicated
experiments bit-reproducible across worker counts.
"""

from __future__ import annotations

import numpy as np

BitGenerator = np.random.PCG64DXSM


def root_sequence(seed, *tags) -> np.random.SeedSequence:
    """Root seed sequence for an experiment or replication chunk."""
    if isinstance(seed, np.random.SeedSequence):
        base_entropy, base_key = seed.entropy, tuple(seed.spawn_key)
    else:
        base_entropy, base_key = seed, ()
    return np.random.SeedSequence(entropy=base_entropy, spawn_key=base_key + tags)


def substream(root, *tags) -> np.random.Generator:
    """Generator for the substream of ``root`` identified by ``tags``."""
    return np.random.Generator(BitGenerator(root_sequence(root, *tags)))
