"""Counter-based random streams for reproducible chunked Monte Carlo.

Every chunk of work draws from ``Philox`` keyed by (seed, chunk index), so
results do not depend on how chunks are scheduled across workers.
"""

import numpy as np


def chunk_generator(seed, chunk):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(chunk)]))


def chunk_sizes(total, chunk):
    """Split ``total`` draws into consecutive chunks of at most ``chunk``."""
    total = int(total)
    full, rest = divmod(total, chunk)
    sizes = [chunk] * full
    if rest:
        sizes.append(rest)
    return sizes
