"""Reproducible random streams.

Every replication owns three independent generators, one per purpose.  They
are derived from ``(base_seed, replication, purpose)`` with
:class:`numpy.random.SeedSequence`, so results never depend on which worker
ran a replication or in what order.
"""

from dataclasses import dataclass

import numpy as np

ARRIVALS, DEPARTURES, ROUTING = 0, 1, 2

# Second-level key keeps scheme streams apart when two schemes run side by side.
SCHEME_KEYS = {"backward": 0, "forward": 1, "des": 2, "sojourn": 3, "average": 4}


@dataclass
class Streams:
    arrivals: np.random.Generator
    departures: np.random.Generator
    routing: np.random.Generator


def replication_streams(base_seed, replication, scheme="backward", share_arrivals=False):
    """Generators for one replication.

    With ``share_arrivals`` the arrival stream ignores the scheme key, which
    gives backward and forward runs common external arrivals.
    """
    key = SCHEME_KEYS[scheme]

    def gen(purpose, scheme_key):
        ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(replication), scheme_key, purpose))
        return np.random.Generator(np.random.PCG64(ss))

    arr_key = 0 if share_arrivals else key
    return Streams(gen(ARRIVALS, arr_key), gen(DEPARTURES, key), gen(ROUTING, key))


def as_streams(rng, scheme="backward"):
    """Accept ``Streams``, a Generator, an int seed or None."""
    if isinstance(rng, Streams):
        return rng
    if isinstance(rng, np.random.Generator):
        a, d, r = rng.spawn(3)
        return Streams(a, d, r)
    return replication_streams(0 if rng is None else rng, 0, scheme)
