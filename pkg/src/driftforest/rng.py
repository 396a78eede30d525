"""Reproducible random streams.

Every stream is a Philox counter-based generator keyed by a ``SeedSequence``
built from the master seed and an integer key path. A stream for walker ``i``
of an experiment seeded with ``s`` is ``stream(s, i)``; a per-vertex stream is
``stream(s, *vertex_key(v))``. The derivation never depends on the order in
which streams are requested, so parallel or reordered consumers reproduce the
same draws.
"""

import numpy as np

__all__ = ["stream", "vertex_key", "zigzag"]


def zigzag(k):
    """Map an integer to a nonnegative integer bijectively (0, -1, 1, -2, ...)."""
    k = int(k)
    return 2 * k if k >= 0 else -2 * k - 1


def vertex_key(v):
    """Nonnegative integer key path for a vertex, usable as a spawn key."""
    return (zigzag(v.n),) + tuple(zigzag(c) for c in v.x)


def stream(seed, *key):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *key)``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
