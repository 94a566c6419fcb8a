"""Departures from a pure-departure M/M/m station over a fixed interval.

A station starts with ``x`` customers, has ``m`` exponential servers of rate
``mu`` and receives no arrivals for ``h`` time units.  :func:`generate_departure`
samples the number of completions ``D``:

* ``x <= m``: every customer is in service, so ``D ~ Binomial(x, 1 - exp(-mu h))``.
* ``x > m``: all servers stay busy until the ``(x-m)``-th completion at
  ``T ~ Erlang(x-m, m mu)``.  If ``T > h`` the earlier ``x-m-1`` completions
  are uniform on ``[0, T]`` and ``D ~ Binomial(x-m-1, h/T)``; otherwise
  ``D = (x-m) + Binomial(m, 1 - exp(-mu (h-T)))``.

The two Euler baselines (``NAIVE``, ``REFINED``) are kept for comparison
experiments only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats

from ._accel import kernel_for, njit

ORACLE_MAX_X = 2000


class SamplerKind(str, Enum):
    EXACT = "exact"
    NAIVE = "naive"
    REFINED = "refined"


@dataclass(frozen=True)
class DepartureQuery:
    initial_count: int
    servers: int
    rate: float
    duration: float

    def __post_init__(self):
        if self.initial_count < 0:
            raise ValueError(f"initial_count must be >= 0, got {self.initial_count}")
        if self.servers < 1:
            raise ValueError(f"servers must be >= 1, got {self.servers}")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")


@njit
def exact_departure(rng, x, m, mu, h):
    if x <= 0 or h <= 0.0:
        return 0
    if x <= m:
        return rng.binomial(x, -math.expm1(-mu * h))
    k = x - m
    t = rng.gamma(float(k), 1.0 / (m * mu))
    if t > h:
        if k == 1:
            return 0
        return rng.binomial(k - 1, h / t)
    return k + rng.binomial(m, -math.expm1(-mu * (h - t)))


@njit
def naive_departure(rng, x, m, mu, h):
    if x <= 0 or h <= 0.0:
        return 0
    b = min(x, m)
    return min(x, rng.poisson(b * mu * h))


@njit
def refined_departure(rng, x, m, mu, h):
    if x <= 0 or h <= 0.0:
        return 0
    if x <= m:
        return rng.binomial(x, -math.expm1(-mu * h))
    return min(x, rng.poisson(m * mu * h))


@njit
def departure_histogram(rng, x, m, mu, h, draws, kind):
    """Counts of ``D = 0..x`` over ``draws`` samples (kind 0/1/2 = exact/naive/refined)."""
    counts = np.zeros(x + 1, dtype=np.int64)
    for _ in range(draws):
        if kind == 0:
            d = exact_departure(rng, x, m, mu, h)
        elif kind == 1:
            d = naive_departure(rng, x, m, mu, h)
        else:
            d = refined_departure(rng, x, m, mu, h)
        counts[d] += 1
    return counts


_KIND_CODE = {SamplerKind.EXACT: 0, SamplerKind.NAIVE: 1, SamplerKind.REFINED: 2}
_SCALAR = {SamplerKind.EXACT: exact_departure, SamplerKind.NAIVE: naive_departure, SamplerKind.REFINED: refined_departure}


def generate_departure(q, kind=SamplerKind.EXACT, rng=None, backend=None):
    """One draw of the number of completions for query ``q``."""
    if rng is None:
        rng = np.random.default_rng()
    f = kernel_for(_SCALAR[SamplerKind(kind)], backend)
    return int(f(rng, int(q.initial_count), int(q.servers), float(q.rate), float(q.duration)))


def sample_departures(q, draws, kind=SamplerKind.EXACT, rng=None, backend=None):
    """Histogram of ``draws`` independent draws, indexed by ``D``."""
    if rng is None:
        rng = np.random.default_rng()
    f = kernel_for(departure_histogram, backend)
    return f(rng, int(q.initial_count), int(q.servers), float(q.rate), float(q.duration), int(draws), _KIND_CODE[SamplerKind(kind)])


def generate_departure_batch(x, m, mu, h, rng, kind=SamplerKind.EXACT):
    """Vectorized departures, one per component of ``x``.

    The exact kind uses a masked, branch-free form: draw ``T`` with shape
    ``(x-m)+`` (zero shape gives ``T = 0``) and combine both binomial
    branches with the indicators ``T <= h`` and ``T > h``.
    """
    x = np.asarray(x, dtype=np.int64)
    m = np.asarray(m, dtype=np.int64)
    mu = np.asarray(mu, dtype=np.float64)
    try:
        x, m, mu = np.broadcast_arrays(x, m, mu)
    except ValueError:
        raise ValueError(f"length mismatch: x{x.shape}, m{m.shape}, mu{mu.shape}") from None
    if np.any(x < 0) or np.any(m < 1) or np.any(mu <= 0) or h < 0:
        raise ValueError("invalid departure query in batch")
    kind = SamplerKind(kind)
    if h == 0:
        return np.zeros(x.shape, dtype=np.int64)
    busy = np.minimum(x, m)
    if kind is SamplerKind.NAIVE:
        return np.minimum(x, rng.poisson(busy * mu * h))
    if kind is SamplerKind.REFINED:
        small = rng.binomial(x, -np.expm1(-mu * h))
        return np.where(x <= m, small, np.minimum(x, rng.poisson(m * mu * h)))

    k = x - busy
    t = np.zeros(x.shape)
    pos = k > 0
    if pos.any():
        t[pos] = rng.gamma(k[pos].astype(float), 1.0 / (m[pos] * mu[pos]))
    below = t <= h
    p_tail = np.where(below, -np.expm1(-mu * np.where(below, h - t, 0.0)), 0.0)
    ratio = np.where(below, 0.0, h / np.where(below, 1.0, t))
    d_below = rng.binomial(busy, p_tail) + k
    d_above = rng.binomial(np.maximum(k - 1, 0), ratio)
    return np.where(below, d_below, d_above).astype(np.int64)


def stay_probability(x, m, d):
    """Chance a tagged in-service customer is still in service after an interval with ``d`` completions."""
    x, m, d = int(x), int(m), int(d)
    if x < 1 or m < 1:
        raise ValueError(f"need x >= 1 and m >= 1, got x={x}, m={m}")
    if not 0 <= d <= x:
        raise ValueError(f"d={d} outside [0, {x}]")
    if x <= m:
        return (x - d) / x
    q = (m - 1) / m
    if d <= x - m:
        return q**d
    return q ** (x - m) * (x - d) / m


def pure_death_pmf_oracle(q, tol=1e-13):
    """Law of ``D`` from the pure-death chain with rates ``min(y, m) mu`` via uniformization.

    Returns ``pmf[d] = P(D = d)`` for ``d = 0..x``.
    """
    x, m, mu, h = int(q.initial_count), int(q.servers), float(q.rate), float(q.duration)
    if x > ORACLE_MAX_X:
        raise ValueError(f"oracle limited to x <= {ORACLE_MAX_X}, got {x}")
    pmf = np.zeros(x + 1)
    if x == 0 or h == 0.0:
        pmf[0] = 1.0
        return pmf
    # State index d = completed departures; remaining customers y = x - d.
    y = x - np.arange(x + 1)
    rates = np.minimum(y, m) * mu
    lam = rates.max()
    out_frac = rates / lam
    lt = lam * h
    kmax = int(stats.poisson.isf(tol, lt)) + 10
    weights = stats.poisson.pmf(np.arange(kmax + 1), lt)
    v = np.zeros(x + 1)
    v[0] = 1.0
    for k in range(kmax + 1):
        pmf += weights[k] * v
        moved = v * out_frac
        v = v - moved
        v[1:] += moved[:-1]
    # Remaining mass beyond kmax is below tol; assign it to its limit state.
    pmf[-1] += max(0.0, 1.0 - pmf.sum())
    return pmf
