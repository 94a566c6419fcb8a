"""Sojourn times of tagged customers, sampled on top of recorded Euler paths.

Counts alone do not say when a particular customer leaves, but given the
per-interval counts and departures the customer's fate can be drawn
conditionally: while more than ``m`` customers are ahead it waits (FIFO),
and once in service it survives an interval with the stay probability of
the pure-departure process given the recorded number of completions.
When it leaves, its destination is drawn from the recorded routed flows.

Interval pairing.  The walk reads pairs ``(X_p, D_p)``: the count at the
start of interval ``p + 1`` and the completions inside it.

* backward paths: ``X_p = N_p`` and ``D_p = D_{p+1}``; a customer arriving in
  interval ``t`` is first counted in ``N_t``, so the walk starts at ``p = t``;
* forward paths: ``X_p = N_p + A_{p+1}`` (external plus routed arrivals of
  the interval, which that scheme serves from its start), starting at
  ``p = t - 1``.

Each interval walked adds ``h`` to the sojourn time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._accel import kernel_for, njit
from .streams import replication_streams

CENSOR_WARN_FRACTION = 0.01
MAX_HOPS = 64


class NoCustomerPresent(ValueError):
    pass


class MissingFlows(ValueError):
    pass


@dataclass(frozen=True)
class SojournQuery:
    entry_node: int
    entry_interval: int
    samples_per_path: int = 1

    def __post_init__(self):
        if self.entry_node < 0:
            raise ValueError(f"entry_node must be >= 0, got {self.entry_node}")
        if self.entry_interval < 1:
            raise ValueError(f"entry_interval must be >= 1, got {self.entry_interval}")
        if self.samples_per_path < 1:
            raise ValueError("samples_per_path must be >= 1")


@dataclass
class SojournSample:
    total_time: float
    path: list
    censored: bool
    step: float

    @property
    def intervals(self):
        return sum(w + s for _, w, s in self.path)


@njit
def _walk(rng, X, Dn, staff, row_ptr, dst, flows, node, p, count, max_hops):
    """``count`` walks from ``(node, p)``.

    Returns total intervals, censored flags and per-hop records
    ``(node, waiting intervals, service intervals)``; hops beyond
    ``max_hops`` are walked but not recorded.
    """
    P = X.shape[0]
    totals = np.zeros(count, dtype=np.int64)
    censored = np.zeros(count, dtype=np.bool_)
    hops = np.zeros(count, dtype=np.int64)
    rec = np.full((count, max_hops, 3), -1, dtype=np.int64)
    for s in range(count):
        i = node
        tau = p
        total = 0
        nh = 0
        while True:
            waited = 0
            served = 0
            nxt = -1
            if tau < P and X[tau, i] > staff[tau, i]:
                # Waiting: FIFO, so only completions move the line forward.
                rem = X[tau, i]
                while tau < P:
                    rem -= Dn[tau, i]
                    tau += 1
                    waited += 1
                    if tau < P and rem <= staff[tau, i]:
                        break
            left = False
            while tau < P:
                # Service: does the tagged customer survive this interval?
                x = max(X[tau, i], 1)
                m = staff[tau, i]
                d = min(Dn[tau, i], x)
                served += 1
                if x <= m:
                    ps = (x - d) / x
                elif d <= x - m:
                    ps = ((m - 1.0) / m) ** d
                else:
                    ps = ((m - 1.0) / m) ** (x - m) * (x - d) / m
                if rng.random() < ps:
                    tau += 1
                    continue
                # Leaves: pick a successor in proportion to the routed flows.
                u = rng.random() * Dn[tau, i]
                acc = 0.0
                for e in range(row_ptr[i], row_ptr[i + 1]):
                    acc += flows[tau, e]
                    if u < acc:
                        nxt = dst[e]
                        break
                tau += 1
                left = True
                break
            if not left:
                censored[s] = True
            total += waited + served
            if nh < max_hops:
                rec[s, nh, 0] = i
                rec[s, nh, 1] = waited
                rec[s, nh, 2] = served
            nh += 1
            if censored[s] or nxt < 0:
                break
            i = nxt
        totals[s] = total
        hops[s] = nh
    return totals, censored, hops, rec


class SojournSampler:
    """Read-only view of one Euler path prepared for sojourn walks."""

    def __init__(self, traj, check=True):
        if traj.scheme not in ("backward", "forward"):
            raise ValueError(f"sojourn sampling needs a backward or forward path, got {traj.scheme!r}")
        if traj.flows is None or traj.exits is None:
            raise MissingFlows("trajectory was recorded without flows")
        if check:
            traj.check_flow_balance()
        self.traj = traj
        self.h = traj.step
        K = traj.n_intervals
        if traj.scheme == "backward":
            X = traj.states[:K]
            self.offset = 0
        else:
            X = traj.states[:K] + traj.external_arrivals[1:] + traj.internal_arrivals[1:]
            self.offset = -1
        # Pair p uses the staffing of interval p + 1 and its completions and flows.
        self.X = np.ascontiguousarray(X)
        self.Dn = np.ascontiguousarray(traj.departures[1:])
        self.staff = np.ascontiguousarray(traj.staffing[1:])
        self.flows = np.ascontiguousarray(traj.flows[1:])
        self.exits = np.ascontiguousarray(traj.exits[1:])
        routing_ptr = np.zeros(traj.n_nodes + 1, dtype=np.int64)
        np.add.at(routing_ptr, traj.edge_src + 1, 1)
        self.row_ptr = np.cumsum(routing_ptr)
        self.dst = np.asarray(traj.edge_dst, dtype=np.int64)

    def entry_pair(self, q):
        if not 0 <= q.entry_node < self.traj.n_nodes:
            raise ValueError(f"entry_node {q.entry_node} outside 0..{self.traj.n_nodes - 1}")
        if q.entry_interval > self.traj.n_intervals:
            raise ValueError(f"entry_interval {q.entry_interval} beyond the {self.traj.n_intervals} recorded intervals")
        p = q.entry_interval + self.offset
        if self.traj.scheme == "backward":
            present = self.traj.states[q.entry_interval, q.entry_node]
        else:
            present = self.X[p, q.entry_node]
        if present < 1:
            raise NoCustomerPresent(f"no customer present at node {q.entry_node} in interval {q.entry_interval}")
        return p

    def sample_many(self, q, count, rng, backend=None, half_step=False):
        """Sojourn times of ``count`` tagged customers; returns ``(times, censored)``."""
        p = self.entry_pair(q)
        walk = kernel_for(_walk, backend)
        totals, cens, _, _ = walk(rng, self.X, self.Dn, self.staff, self.row_ptr, self.dst,
                                  self.flows, int(q.entry_node), int(p), int(count), 1)
        times = totals * self.h
        if half_step:
            times = times - 0.5 * self.h
        return times, cens

    def sample(self, q, rng, backend=None, half_step=False):
        p = self.entry_pair(q)
        walk = kernel_for(_walk, backend)
        totals, cens, hops, rec = walk(rng, self.X, self.Dn, self.staff, self.row_ptr, self.dst,
                                       self.flows, int(q.entry_node), int(p), 1, MAX_HOPS)
        path = [tuple(int(v) for v in rec[0, k]) for k in range(min(int(hops[0]), MAX_HOPS))]
        t = totals[0] * self.h - (0.5 * self.h if half_step else 0.0)
        return SojournSample(float(t), path, bool(cens[0]), self.h)


def sample_sojourn(traj, q, rng=None, backend=None, half_step=False):
    """One tagged-customer walk on ``traj`` (which is never modified)."""
    if rng is None:
        rng = replication_streams(0, traj.replication, "sojourn").departures
    return SojournSampler(traj).sample(q, rng, backend, half_step)


def sample_entry_window(trajectories, node, window, count, base_seed=0, backend=None, half_step=False):
    """Sojourn times for customers entering ``node`` from outside inside a time window.

    Entry intervals are drawn across all paths in proportion to their
    recorded external arrivals, so the sample mirrors every customer who
    arrived in the window.  Returns ``(times, n_censored)``; censored walks
    are excluded from ``times``.
    """
    lo, hi = window
    samplers = [SojournSampler(tr) for tr in trajectories]
    h = samplers[0].h
    t_lo = int(round(lo / h)) + 1
    t_hi = int(round(hi / h))
    weights = []
    keys = []
    for r, s in enumerate(samplers):
        a = s.traj.external_arrivals[t_lo:t_hi + 1, node]
        for k in np.flatnonzero(a):
            weights.append(a[k])
            keys.append((r, t_lo + int(k)))
    if not keys:
        raise NoCustomerPresent(f"no external arrivals at node {node} in window {window}")
    rng = replication_streams(base_seed, 0, "sojourn").departures
    w = np.asarray(weights, dtype=float)
    picks = rng.choice(len(keys), size=count, p=w / w.sum())
    times = []
    censored = 0
    for k, c in zip(*np.unique(picks, return_counts=True)):
        r, t = keys[k]
        tt, cens = samplers[r].sample_many(SojournQuery(node, t), int(c), rng, backend, half_step)
        times.append(tt[~cens])
        censored += int(cens.sum())
    if censored > CENSOR_WARN_FRACTION * count:
        warnings.warn(f"{censored} of {count} sojourn walks censored", RuntimeWarning, stacklevel=2)
    return np.concatenate(times), censored
