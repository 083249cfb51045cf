"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`, which wraps
NumPy's Philox counter-based bit generator. Philox output depends only on the
(key, counter) pair, so a given seed and stream id produce the same numbers
on every platform and NumPy build.
"""

import numpy as np


def make_rng(seed, *stream):
    """Return a Philox-backed generator for ``seed`` and an optional stream id.

    Distinct ``stream`` tuples give statistically independent sequences for
    the same seed.
    """
    if seed is None:
        seed = 0
    entropy = [int(seed)] + [int(s) for s in stream]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and stream ids must be nonnegative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
