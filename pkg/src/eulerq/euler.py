"""Backward, forward and averaged Euler schemes for Markovian queueing networks.

The horizon is cut into ``K`` intervals of length ``h``.  Within an interval
arrivals are lumped either at its end (backward: departures see only the
previous state) or at its start (forward: departures see the previous state
plus everything that arrives during the interval).  Departures come from the
exact pure-departure sampler and are split over successors multinomially.

Backward runs on any routing structure.  Forward needs an acyclic network
and processes nodes in batches whose upstream flows are already known.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import _kernels
from ._accel import kernel_for, resolve_backend
from .netmodel import NotFeedforward, check_grid, validate_network
from .purdep import generate_departure_batch
from .streams import as_streams, replication_streams

SCHEMES = ("backward", "forward", "average", "des")
COUNT_LIMIT = 2**62


@dataclass(frozen=True)
class SimConfig:
    step: float
    horizon: float | None = None
    scheme: str = "backward"
    replications: int = 1
    base_seed: int = 0
    warmup_fraction: float = 0.2
    record_flows: bool = False
    initial_state: tuple | None = None
    common_arrivals: bool = False
    backend: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}")

    def horizon_for(self, spec):
        return spec.horizon if self.horizon is None else float(self.horizon)


@dataclass
class Trajectory:
    """Interval-indexed record of one replication.

    Row ``t`` of every per-interval array refers to the interval
    ``((t-1)h, th]``; ``states[t]`` is the count at time ``th``.  ``flows``
    holds one column per routing edge (``edge_src``/``edge_dst``) and
    ``exits`` the per-node count leaving the network.
    """

    scheme: str
    step: float
    states: np.ndarray
    departures: np.ndarray
    external_arrivals: np.ndarray
    internal_arrivals: np.ndarray
    staffing: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    flows: np.ndarray | None = None
    exits: np.ndarray | None = None
    replication: int = 0
    customers: dict | None = field(default=None, repr=False)

    @property
    def n_intervals(self):
        return self.states.shape[0] - 1

    @property
    def n_nodes(self):
        return self.states.shape[1]

    @property
    def has_flows(self):
        return self.flows is not None

    def servers_at(self, t):
        """Staffing in force from time ``t h`` on (for the interval that follows)."""
        return self.staffing[min(t + 1, self.n_intervals)]

    def time_average(self, warmup_fraction=0.0):
        start = int(math.ceil(warmup_fraction * self.n_intervals))
        return self.states[start:].mean(axis=0)

    def check_flow_balance(self):
        """Raise ``ValueError`` on any violated conservation identity."""
        N, D = self.states, self.departures
        A, Ain = self.external_arrivals, self.internal_arrivals
        if np.any(N < 0) or np.any(D < 0) or np.any(A < 0) or np.any(Ain < 0):
            raise ValueError("negative count in trajectory")
        if not np.array_equal(N[1:], N[:-1] - D[1:] + A[1:] + Ain[1:]):
            raise ValueError("state update does not balance")
        if self.flows is not None:
            inflow = np.zeros_like(Ain)
            np.add.at(inflow.T, self.edge_dst, self.flows.T)
            if not np.array_equal(inflow[1:], Ain[1:]):
                raise ValueError("internal arrivals disagree with routed flows")
            out = np.zeros_like(D)
            np.add.at(out.T, self.edge_src, self.flows.T)
            if not np.array_equal(out[1:] + self.exits[1:], D[1:]):
                raise ValueError("routed flows do not add up to departures")
        return True


@dataclass
class SummaryStats:
    scheme: str
    step: float
    replication_means: np.ndarray
    terminal_states: np.ndarray
    run_time: float = 0.0

    @property
    def replications(self):
        return self.replication_means.shape[0]

    @property
    def node_time_avg(self):
        return self.replication_means.mean(axis=0)

    @property
    def system_time_avg(self):
        return float(self.node_time_avg.sum())

    @property
    def terminal_state(self):
        return self.terminal_states.mean(axis=0)

    @property
    def node_se(self):
        return _se(self.replication_means)

    @property
    def system_se(self):
        return float(_se(self.replication_means.sum(axis=1)))

    @property
    def node_ci(self):
        return _tq(self.replications) * self.node_se

    @property
    def system_ci(self):
        return _tq(self.replications) * self.system_se

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "step": self.step,
            "replications": self.replications,
            "node_time_avg": self.node_time_avg.tolist(),
            "node_ci95": self.node_ci.tolist(),
            "system_time_avg": self.system_time_avg,
            "system_ci95": self.system_ci,
            "terminal_state": self.terminal_state.tolist(),
        }


def _se(values):
    values = np.asarray(values, dtype=float)
    r = values.shape[0]
    if r < 2:
        return np.full(values.shape[1:], np.nan) if values.ndim > 1 else np.nan
    return values.std(axis=0, ddof=1) / math.sqrt(r)


def _tq(r):
    return stats.t.ppf(0.975, r - 1) if r > 1 else np.nan


@dataclass
class AverageStats:
    backward: SummaryStats
    forward: SummaryStats

    @property
    def replication_means(self):
        return 0.5 * (self.backward.replication_means + self.forward.replication_means)

    @property
    def node_time_avg(self):
        return 0.5 * (self.backward.node_time_avg + self.forward.node_time_avg)

    @property
    def system_time_avg(self):
        return float(self.node_time_avg.sum())

    @property
    def system_se(self):
        return float(_se(self.replication_means.sum(axis=1)))

    @property
    def node_se(self):
        return _se(self.replication_means)

    @property
    def run_time(self):
        return self.backward.run_time + self.forward.run_time

    def to_dict(self):
        r = self.backward.replications
        return {
            "scheme": "average",
            "step": self.backward.step,
            "replications": r,
            "node_time_avg": self.node_time_avg.tolist(),
            "node_ci95": (_tq(r) * self.node_se).tolist(),
            "system_time_avg": self.system_time_avg,
            "system_ci95": _tq(r) * self.system_se,
            "backward": self.backward.to_dict(),
            "forward": self.forward.to_dict(),
        }


class _Grid:
    """Network data laid out for the kernels on a fixed step."""

    def __init__(self, spec, step, horizon):
        self.K = check_grid(spec, step, horizon)
        self.h = float(step)
        n = spec.n
        bps = [b for b in spec.breakpoints() if b < horizon]
        starts = [0.0] + bps
        self.seg_of = np.searchsorted(np.round(np.asarray(bps) / step), np.arange(self.K), side="right").astype(np.int64)
        self.staff = np.array([[nd.staffing.value_at(t) for nd in spec.nodes] for t in starts], dtype=np.int64).reshape(len(starts), n)
        self.rate = np.array([[nd.external_rate.value_at(t) for nd in spec.nodes] for t in starts], dtype=np.float64).reshape(len(starts), n)
        self.arr_mean = self.rate * self.h
        self.mu = spec.mu
        r = spec.routing
        self.row_ptr, self.dst, self.src, self.prob = r.row_ptr, r.dst, r.src, r.prob
        self.closed = r.exit_prob == 0.0
        self.staffing_rows = np.vstack([self.staff[self.seg_of[:1]], self.staff[self.seg_of]])


def sample_external_arrivals(spec, t, h, rng):
    """Poisson arrival counts of interval ``t`` (covering ``((t-1)h, th]``) for every node."""
    lo, hi = (t - 1) * h, t * h
    means = np.array([nd.external_rate.integral(lo, hi) for nd in spec.nodes])
    return rng.poisson(means)


def route_departures(departures, routing, rng):
    """Split each node's departures over its successors and the exit.

    Returns ``(flows, exits)`` with one flow entry per routing edge.
    """
    d = np.asarray(departures, dtype=np.int64)
    if np.any(d < 0):
        raise ValueError("departures must be non-negative")
    flows = np.zeros(routing.n_edges, dtype=np.int64)
    rem = d.copy()
    rem_p = np.ones(routing.n)
    closed = routing.exit_prob == 0.0
    # Peel off the r-th successor of every row at once.
    rank = np.arange(routing.n_edges) - routing.row_ptr[routing.src]
    deg = np.diff(routing.row_ptr)
    for r in range(int(deg.max()) if deg.size else 0):
        e = np.flatnonzero(rank == r)
        i = routing.src[e]
        last = closed[i] & (r == deg[i] - 1)
        p = np.clip(routing.prob[e] / np.where(rem_p[i] > 0, rem_p[i], 1.0), 0.0, 1.0)
        c = np.where(last, rem[i], rng.binomial(rem[i], np.where(last, 0.0, p)))
        flows[e] = c
        rem[i] -= c
        rem_p[i] -= routing.prob[e]
    return flows, rem


def _numpy_run(spec, grid, streams, n0, scheme, record_flows, stages):
    K, n, E = grid.K, spec.n, grid.dst.size
    states = np.zeros((K + 1, n), dtype=np.int64)
    deps = np.zeros_like(states)
    arr = np.zeros_like(states)
    ain = np.zeros_like(states)
    exits = np.zeros_like(states)
    flows = np.zeros((K + 1, E), dtype=np.int64) if record_flows else None
    x = n0.copy()
    states[0] = x
    routing = spec.routing
    for t in range(1, K + 1):
        s = grid.seg_of[t - 1]
        m = grid.staff[s]
        if scheme == "backward":
            d = generate_departure_batch(x, m, grid.mu, grid.h, streams.departures)
            f, ex = route_departures(d, routing, streams.routing)
            a = streams.arrivals.poisson(grid.arr_mean[s])
            inflow = np.bincount(grid.dst, weights=f, minlength=n).astype(np.int64)
            x = x - d + a + inflow
        else:
            a = streams.arrivals.poisson(grid.arr_mean[s])
            inflow = np.zeros(n, dtype=np.int64)
            d = np.zeros(n, dtype=np.int64)
            f = np.zeros(E, dtype=np.int64)
            ex = np.zeros(n, dtype=np.int64)
            for stage in stages:
                start = x[stage] + a[stage] + inflow[stage]
                ds = generate_departure_batch(start, m[stage], grid.mu[stage], grid.h, streams.departures)
                d[stage] = ds
                x[stage] = start - ds
                # Route only the stage's rows; their successors sit in later stages.
                sub = np.zeros(n, dtype=np.int64)
                sub[stage] = ds
                fs, exs = route_departures(sub, routing, streams.routing)
                f += fs
                ex[stage] = exs[stage]
                inflow += np.bincount(grid.dst, weights=fs, minlength=n).astype(np.int64)
        states[t] = x
        deps[t], arr[t], ain[t], exits[t] = d, a, inflow, ex
        if record_flows:
            flows[t] = f
    return states, deps, arr, ain, exits, flows


def _forward_stages(structure):
    if not structure.is_feedforward:
        raise NotFeedforward("forward scheme requires feedforward network")
    groups = structure.layers if structure.is_multilayer else structure.levels
    return [np.asarray(g, dtype=np.int64) for g in groups]


def simulate_scheme(spec, config, scheme=None, replication=0, rng=None, backend=None):
    """One replication of ``scheme`` (backward, forward or des) as a :class:`Trajectory`."""
    scheme = scheme or config.scheme
    if scheme == "des":
        from .des import simulate_des

        return simulate_des(spec, config, replication=replication, rng=rng)
    if scheme not in ("backward", "forward"):
        raise ValueError(f"cannot simulate scheme {scheme!r} as a single trajectory")
    horizon = config.horizon_for(spec)
    grid = _Grid(spec, config.step, horizon)
    structure = validate_network(spec)
    stages = _forward_stages(structure) if scheme == "forward" else None
    if rng is None:
        streams = replication_streams(config.base_seed, replication, scheme, config.common_arrivals)
    else:
        streams = as_streams(rng, scheme)
    n0 = np.zeros(spec.n, dtype=np.int64) if config.initial_state is None else np.asarray(config.initial_state, dtype=np.int64)
    if n0.shape != (spec.n,) or np.any(n0 < 0):
        raise ValueError("initial_state must hold one non-negative count per node")
    backend = resolve_backend(backend or config.backend)
    if backend == "numba":
        common = (streams.arrivals, streams.departures, streams.routing, n0, grid.seg_of, grid.arr_mean,
                  grid.staff, grid.mu, grid.h, grid.row_ptr, grid.dst, grid.prob, grid.closed, config.record_flows)
        if scheme == "backward":
            out = _kernels.backward_kernel(*common)
        else:
            order = np.concatenate(stages)
            out = _kernels.forward_kernel(*common, order)
        states, deps, arr, ain, exits, flows = out
        if not config.record_flows:
            flows = None
    else:
        states, deps, arr, ain, exits, flows = _numpy_run(spec, grid, streams, n0, scheme, config.record_flows, stages)
    if states.max(initial=0) >= COUNT_LIMIT:
        raise OverflowError("customer count exceeded 64-bit safety limit")
    return Trajectory(
        scheme=scheme,
        step=grid.h,
        states=states,
        departures=deps,
        external_arrivals=arr,
        internal_arrivals=ain,
        staffing=grid.staffing_rows,
        edge_src=grid.src,
        edge_dst=grid.dst,
        flows=flows,
        exits=exits if config.record_flows else None,
        replication=replication,
    )


def simulate_backward(spec, config, replication=0, rng=None, backend=None):
    return simulate_scheme(spec, config, "backward", replication, rng, backend)


def simulate_forward(spec, config, replication=0, rng=None, backend=None):
    return simulate_scheme(spec, config, "forward", replication, rng, backend)


def worker_count():
    try:
        return max(1, int(os.environ.get("EULERQ_WORKERS", "1")))
    except ValueError:
        return 1


def run_replications(spec, config, scheme=None, keep_trajectories=False, workers=None):
    """Run all replications of one scheme.

    Returns ``(SummaryStats, trajectories)``; the list is empty unless
    ``keep_trajectories``.  Results depend only on the seeds, never on the
    worker count.
    """
    scheme = scheme or config.scheme
    if scheme == "average":
        raise ValueError("use simulate_average for the averaged scheme")
    workers = workers or worker_count()
    # Structural problems surface before any work is scheduled.
    check_grid(spec, config.step, config.horizon_for(spec))
    if scheme == "forward":
        _forward_stages(validate_network(spec))

    def one(r):
        traj = simulate_scheme(spec, config, scheme, r)
        return traj.time_average(config.warmup_fraction), traj.states[-1].copy(), (traj if keep_trajectories else None)

    t0 = time.perf_counter()
    if workers > 1 and config.replications > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(config.replications)))
    else:
        results = [one(r) for r in range(config.replications)]
    elapsed = time.perf_counter() - t0
    means = np.array([r[0] for r in results])
    terminal = np.array([r[1] for r in results])
    trajs = [r[2] for r in results] if keep_trajectories else []
    return SummaryStats(scheme, float(config.step), means, terminal, elapsed), trajs


def simulate(spec, config, keep_trajectories=False):
    """Run ``config.scheme``; the averaged scheme returns :class:`AverageStats`."""
    if config.scheme == "average":
        return simulate_average(spec, config), []
    return run_replications(spec, config, keep_trajectories=keep_trajectories)


def simulate_average(spec, config):
    """Backward and forward runs with independent streams and their mean."""
    back, _ = run_replications(spec, replace(config, scheme="backward"))
    fwd, _ = run_replications(spec, replace(config, scheme="forward"))
    return AverageStats(back, fwd)


def recommend_step(spec, alpha, horizon=None):
    """Largest grid-compatible step not exceeding ``alpha / max(mu)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    horizon = spec.horizon if horizon is None else horizon
    target = alpha / float(spec.mu.max())
    anchors = [horizon] + [b for b in spec.breakpoints() if b < horizon]
    # Try h = horizon / k for increasing k until everything else is a multiple too.
    k = max(1, math.ceil(horizon / target - 1e-9))
    for kk in range(k, k + 100000):
        h = horizon / kk
        if h > target * (1 + 1e-12):
            continue
        if all(abs(a / h - round(a / h)) <= 1e-9 * max(1.0, a / h) for a in anchors):
            return h
    raise ValueError("no grid-compatible step found for the schedule breakpoints")


def warm_up():
    """Compile the numba kernels on a tiny network so later timings exclude JIT."""
    from .netmodel import tandem

    spec = tandem(1.0, [2, 2], horizon=1.0)
    cfg = SimConfig(step=0.5, record_flows=True)
    for scheme in ("backward", "forward", "des"):
        simulate_scheme(spec, cfg, scheme)
    cfg = replace(cfg, record_flows=False)
    for scheme in ("backward", "forward", "des"):
        simulate_scheme(spec, cfg, scheme)
