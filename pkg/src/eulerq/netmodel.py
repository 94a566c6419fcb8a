"""Queueing network description, structural checks and product-form oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ROW_SUM_TOL = 1e-12
STABILITY_MARGIN = 1e-9
GRID_TOL = 1e-9


class NetworkError(ValueError):
    """The network description violates a structural invariant."""


class NotFeedforward(NetworkError):
    pass


class NotMultiLayer(NetworkError):
    pass


class Unstable(NetworkError):
    pass


class GridMisalignment(ValueError):
    """A schedule breakpoint or the horizon is not a multiple of the step."""


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant function of time.

    Segment ``k`` holds ``values[k]`` on ``[starts[k], starts[k+1])``; the
    last segment extends to the end of the horizon.
    """

    starts: tuple
    values: tuple

    def __post_init__(self):
        starts = tuple(float(s) for s in self.starts)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "values", values)
        if not starts or len(starts) != len(values):
            raise NetworkError("schedule needs one value per segment start")
        if starts[0] != 0.0:
            raise NetworkError(f"schedule must start at t=0, got {starts[0]}")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise NetworkError("schedule breakpoints must be strictly increasing")
        if any(not math.isfinite(v) for v in values):
            raise NetworkError("schedule values must be finite")

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (value,))

    @classmethod
    def from_segments(cls, segments):
        """Build from ``[{"t_start": .., "value": ..}, ...]`` or a bare number."""
        if isinstance(segments, (int, float)):
            return cls.constant(segments)
        segs = sorted(segments, key=lambda s: float(s["t_start"]))
        return cls(tuple(s["t_start"] for s in segs), tuple(s["value"] for s in segs))

    def to_segments(self):
        return [{"t_start": t, "value": v} for t, v in zip(self.starts, self.values)]

    @property
    def is_constant(self):
        return len(self.values) == 1

    @property
    def breakpoints(self):
        return self.starts[1:]

    def value_at(self, t):
        k = np.searchsorted(self.starts, t, side="right") - 1
        return self.values[max(int(k), 0)]

    def values_at(self, times):
        k = np.searchsorted(np.asarray(self.starts), np.asarray(times, dtype=float), side="right") - 1
        return np.asarray(self.values)[np.maximum(k, 0)]

    def integral(self, a, b):
        """Integral over ``[a, b]``."""
        if b <= a:
            return 0.0
        edges = [a] + [t for t in self.breakpoints if a < t < b] + [b]
        return sum(self.value_at(lo) * (hi - lo) for lo, hi in zip(edges, edges[1:]))


@dataclass(frozen=True)
class NodeSpec:
    service_rate: float
    staffing: Schedule
    external_rate: Schedule
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.staffing, Schedule):
            object.__setattr__(self, "staffing", Schedule.from_segments(self.staffing))
        if not isinstance(self.external_rate, Schedule):
            object.__setattr__(self, "external_rate", Schedule.from_segments(self.external_rate))
        if not (self.service_rate > 0 and math.isfinite(self.service_rate)):
            raise NetworkError(f"service_rate must be positive, got {self.service_rate}")
        for v in self.staffing.values:
            if v < 1 or v != int(v):
                raise NetworkError(f"staffing values must be integers >= 1, got {v}")
        for v in self.external_rate.values:
            if v < 0:
                raise NetworkError(f"external arrival rates must be non-negative, got {v}")

    @classmethod
    def constant(cls, service_rate, servers, arrival_rate=0.0, name=""):
        return cls(float(service_rate), Schedule.constant(servers), Schedule.constant(arrival_rate), name)

    @property
    def is_constant(self):
        return self.staffing.is_constant and self.external_rate.is_constant


class RoutingMatrix:
    """Sparse routing probabilities stored row-wise.

    ``row_ptr``/``dst``/``prob`` form a CSR layout: the successors of node
    ``i`` are ``dst[row_ptr[i]:row_ptr[i+1]]``.  Edge order inside a row is
    by destination index, which is also the edge numbering used for flow
    records.
    """

    def __init__(self, n, entries=()):
        self.n = int(n)
        rows = [dict() for _ in range(self.n)]
        for i, j, p in entries:
            i, j, p = int(i), int(j), float(p)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise NetworkError(f"routing entry ({i}, {j}) out of range for {self.n} nodes")
            if not (0.0 <= p <= 1.0) or not math.isfinite(p):
                raise NetworkError(f"routing probability p[{i},{j}] = {p} not in [0, 1]")
            if p == 0.0:
                continue
            rows[i][j] = rows[i].get(j, 0.0) + p
        src, dst, prob = [], [], []
        row_ptr = [0]
        for i, row in enumerate(rows):
            for j in sorted(row):
                src.append(i)
                dst.append(j)
                prob.append(row[j])
            row_ptr.append(len(dst))
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.prob = np.asarray(prob, dtype=np.float64)
        sums = np.zeros(self.n)
        np.add.at(sums, self.src, self.prob)
        bad = np.flatnonzero(sums > 1.0 + ROW_SUM_TOL)
        if bad.size:
            i = int(bad[0])
            raise NetworkError(f"routing row {i} sums to {sums[i]:.15g} > 1")
        self.row_sums = sums
        # Rows summing to one (within tolerance) never exit.
        self.exit_prob = np.where(sums >= 1.0 - ROW_SUM_TOL, 0.0, 1.0 - sums)

    @classmethod
    def from_dense(cls, P):
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise NetworkError("routing matrix must be square")
        ii, jj = np.nonzero(P)
        return cls(P.shape[0], zip(ii, jj, P[ii, jj]))

    @classmethod
    def empty(cls, n):
        return cls(n)

    @property
    def n_edges(self):
        return int(self.dst.size)

    def to_dense(self):
        P = np.zeros((self.n, self.n))
        P[self.src, self.dst] = self.prob
        return P

    def entries(self):
        return [(int(i), int(j), float(p)) for i, j, p in zip(self.src, self.dst, self.prob)]

    def successors(self, i):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.dst[lo:hi]

    def predecessors(self, j):
        return self.src[self.dst == j]

    def edge_index(self, i, j):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        hits = np.flatnonzero(self.dst[lo:hi] == j)
        if not hits.size:
            raise KeyError((i, j))
        return int(lo + hits[0])

    def __eq__(self, other):
        return (
            isinstance(other, RoutingMatrix)
            and self.n == other.n
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.prob, other.prob)
        )

    def __repr__(self):
        return f"RoutingMatrix(n={self.n}, edges={self.n_edges})"


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    nodes: tuple
    routing: RoutingMatrix
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(self.nodes) < 1:
            raise NetworkError("network needs at least one node")
        if self.routing.n != len(self.nodes):
            raise NetworkError(f"routing is {self.routing.n}x{self.routing.n} but there are {len(self.nodes)} nodes")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise NetworkError(f"horizon must be positive, got {self.horizon}")
        for i, node in enumerate(self.nodes):
            for sched in (node.staffing, node.external_rate):
                if sched.breakpoints and sched.breakpoints[-1] >= self.horizon:
                    raise NetworkError(f"node {i}: schedule breakpoint beyond horizon {self.horizon}")

    @property
    def n(self):
        return len(self.nodes)

    @property
    def mu(self):
        return np.array([nd.service_rate for nd in self.nodes], dtype=float)

    @property
    def is_constant(self):
        return all(nd.is_constant for nd in self.nodes)

    def servers(self, t=0.0):
        return np.array([int(nd.staffing.value_at(t)) for nd in self.nodes], dtype=np.int64)

    def arrival_rates(self, t=0.0):
        return np.array([nd.external_rate.value_at(t) for nd in self.nodes], dtype=float)

    def breakpoints(self):
        pts = set()
        for nd in self.nodes:
            pts.update(nd.staffing.breakpoints)
            pts.update(nd.external_rate.breakpoints)
        return sorted(pts)

    def with_horizon(self, horizon):
        return NetworkSpec(self.nodes, self.routing, horizon)

    @cached_property
    def structure(self):
        return validate_network(self)

    def to_dict(self):
        return {
            "nodes": [
                {
                    **({"name": nd.name} if nd.name else {}),
                    "service_rate": nd.service_rate,
                    "staffing": [{"t_start": t, "value": int(v)} for t, v in zip(nd.staffing.starts, nd.staffing.values)],
                    "external_rate": nd.external_rate.to_segments(),
                }
                for nd in self.nodes
            ],
            "routing": [{"from": i, "to": j, "p": p} for i, j, p in self.routing.entries()],
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            nodes = [
                NodeSpec(
                    float(nd["service_rate"]),
                    Schedule.from_segments(nd["staffing"]),
                    Schedule.from_segments(nd.get("external_rate", 0.0)),
                    nd.get("name", ""),
                )
                for nd in data["nodes"]
            ]
            routing = RoutingMatrix(len(nodes), [(e["from"], e["to"], e["p"]) for e in data.get("routing", [])])
            return cls(tuple(nodes), routing, float(data["horizon"]))
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"malformed network description: {exc!r}") from None


@dataclass(frozen=True)
class NetworkStructure:
    is_feedforward: bool
    is_multilayer: bool
    is_constant: bool
    topological_order: tuple | None
    layers: tuple | None
    levels: tuple | None = field(default=None)


def _topological_order(routing):
    n = routing.n
    indeg = np.zeros(n, dtype=np.int64)
    np.add.at(indeg, routing.dst, 1)
    # Self-loops count as edges, so they keep the node from ever reaching zero.
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in routing.successors(i):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    return tuple(order) if len(order) == n else None


def _levels(routing, order):
    """Longest-path depth from any source; every edge goes to a deeper level."""
    depth = np.zeros(routing.n, dtype=np.int64)
    for i in order:
        for j in routing.successors(i):
            depth[j] = max(depth[j], depth[i] + 1)
    return tuple(tuple(int(i) for i in np.flatnonzero(depth == d)) for d in range(int(depth.max()) + 1))


def validate_network(spec):
    """Structural facts about a network: acyclicity, layering, constancy."""
    routing = spec.routing
    order = _topological_order(routing)
    if order is None:
        return NetworkStructure(False, False, spec.is_constant, None, None, None)
    levels = _levels(routing, order)
    try:
        layers = decompose_layers(spec)
    except NotMultiLayer:
        layers = None
    return NetworkStructure(True, layers is not None, spec.is_constant, order, layers, levels)


def decompose_layers(spec):
    """Partition nodes into layers with every edge advancing exactly one layer.

    Nodes without inbound edges sit in layer 0; any edge that skips or stays
    within a layer raises :class:`NotMultiLayer`.
    """
    routing = spec.routing
    order = _topological_order(routing)
    if order is None:
        raise NotFeedforward("network has a directed cycle")
    layer = np.full(routing.n, -1, dtype=np.int64)
    indeg = np.zeros(routing.n, dtype=np.int64)
    np.add.at(indeg, routing.dst, 1)
    layer[indeg == 0] = 0
    for i in order:
        for j in routing.successors(i):
            want = layer[i] + 1
            if layer[j] == -1:
                layer[j] = want
            elif layer[j] != want:
                raise NotMultiLayer(f"edge {i}->{j} does not advance exactly one layer")
    return tuple(tuple(int(i) for i in np.flatnonzero(layer == k)) for k in range(int(layer.max()) + 1))


def _require_constant(spec):
    if not spec.is_constant:
        raise NetworkError("analytical quantities need constant arrival rates and staffing")


def solve_traffic_equations(spec, arrival_rates=None):
    """Effective per-node arrival rates solving ``lam_tot = lam + P^T lam_tot``."""
    if arrival_rates is None:
        _require_constant(spec)
        arrival_rates = spec.arrival_rates()
    lam = np.asarray(arrival_rates, dtype=float)
    routing = spec.routing
    order = _topological_order(routing)
    if order is not None:
        tot = lam.copy()
        for i in order:
            lo, hi = routing.row_ptr[i], routing.row_ptr[i + 1]
            np.add.at(tot, routing.dst[lo:hi], routing.prob[lo:hi] * tot[i])
        return tot
    A = np.eye(routing.n) - routing.to_dense().T
    try:
        tot = np.linalg.solve(A, lam)
    except np.linalg.LinAlgError:
        raise NetworkError("traffic equations are singular (closed routing cycle)") from None
    if not np.all(np.isfinite(tot)) or np.linalg.cond(A) > 1e12:
        raise NetworkError("traffic equations are singular (closed routing cycle)")
    return tot


def erlang_c(m, rho):
    """Probability that an M/M/m arrival waits.

    Uses the Erlang-B recurrence ``B_k = a B_{k-1} / (k + a B_{k-1})`` with
    offered load ``a = m rho``, which stays in [0, 1] for any ``m``.
    """
    m = int(m)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    a = m * rho
    b = 1.0
    for k in range(1, m + 1):
        b = a * b / (k + a * b)
    return b / (1.0 - rho * (1.0 - b))


def mmm_mean(m, rho):
    """Mean number in an M/M/m system: ``m rho + rho/(1-rho) C(m, rho)``."""
    return m * rho + rho / (1.0 - rho) * erlang_c(m, rho)


@dataclass(frozen=True)
class AnalyticalSolution:
    total_rates: np.ndarray
    utilizations: np.ndarray
    node_means: np.ndarray
    system_mean: float
    erlang_c: np.ndarray


def utilizations(spec):
    _require_constant(spec)
    lam = solve_traffic_equations(spec)
    return lam, lam / (spec.servers() * spec.mu)


def steady_state_means(spec):
    """Jackson product-form means for a constant-parameter open network."""
    lam, rho = utilizations(spec)
    m = spec.servers()
    bad = np.flatnonzero(rho >= 1.0 - STABILITY_MARGIN)
    if bad.size:
        i = int(bad[0])
        raise Unstable(f"node {i + 1} has utilization {rho[i]:.6g} >= 1")
    # A node with no traffic has C = 0 and mean 0.
    c = np.array([erlang_c(mi, r) if r > 0 else 0.0 for mi, r in zip(m, rho)])
    means = m * rho + np.where(rho > 0, rho / (1.0 - rho), 0.0) * c
    return AnalyticalSolution(lam, rho, means, float(means.sum()), c)


def stationary_pmf(m, rho, tail=1e-15):
    """Birth-death stationary law of M/M/m, truncated once the tail is negligible."""
    a = m * rho
    logw = [0.0]
    top = 0.0
    cut = math.log(tail * (1.0 - rho))
    k = 0
    while True:
        k += 1
        logw.append(logw[-1] + math.log(a / min(k, m)))
        top = max(top, logw[-1])
        # Beyond m the weights decay geometrically at ratio rho.
        if k > m and logw[-1] - top < cut:
            break
    w = np.exp(np.array(logw) - max(logw))
    return w / w.sum()


def check_grid(spec, step, horizon=None):
    """Raise :class:`GridMisalignment` unless every breakpoint sits on the grid."""
    horizon = spec.horizon if horizon is None else horizon
    if not step > 0:
        raise GridMisalignment(f"step must be positive, got {step}")
    k = horizon / step
    if abs(k - round(k)) > GRID_TOL * max(1.0, k):
        raise GridMisalignment(f"horizon {horizon} is not a multiple of step {step}")
    for t in spec.breakpoints():
        q = t / step
        if abs(q - round(q)) > GRID_TOL * max(1.0, q):
            raise GridMisalignment(f"schedule breakpoint {t} is not a multiple of step {step}")
    return int(round(k))


def tandem(arrival_rate, servers, service_rate=1.0, horizon=1000.0):
    """Chain of nodes with external arrivals at the first one."""
    servers = list(servers)
    rates = service_rate if np.ndim(service_rate) else [service_rate] * len(servers)
    nodes = [NodeSpec.constant(rates[i], m, arrival_rate if i == 0 else 0.0) for i, m in enumerate(servers)]
    routing = RoutingMatrix(len(nodes), [(i, i + 1, 1.0) for i in range(len(nodes) - 1)])
    return NetworkSpec(tuple(nodes), routing, horizon)


def single_node(arrival_rate, servers, service_rate=1.0, horizon=1000.0):
    return NetworkSpec((NodeSpec.constant(service_rate, servers, arrival_rate),), RoutingMatrix.empty(1), horizon)
