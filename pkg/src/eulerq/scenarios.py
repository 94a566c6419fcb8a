"""Bundled example networks.

Server counts of the hospital network and the size of the data-center
fabric follow published descriptions; the routing probabilities and all
rates are defaults.  Service rates are chosen so that every node runs at
utilization 0.8 under the traffic equations.
"""

from __future__ import annotations

import numpy as np

from .netmodel import NetworkSpec, NodeSpec, RoutingMatrix, solve_traffic_equations

TARGET_UTILIZATION = 0.8

HOSPITAL_STATIONS = (
    ("Triage", 10),
    ("Internal Medicine Room", 4),
    ("Surgery Room", 50),
    ("Ophthalmology Room", 3),
    ("Ear/Nose/Throat Room", 3),
    ("Orthopedics Room", 3),
    ("Resuscitation Room", 20),
    ("Management Rooms", 90),
    ("I.C.U.", 200),
    ("Pre/Post-Operative Care", 120),
    ("Operation Room", 100),
    ("Fixation Room", 6),
    ("Internal Department", 200),
    ("Intermediate Burn Care Unit", 12),
    ("Intensive Burn Care Unit", 4),
    ("Burn OR", 3),
    ("Orthopedic Care Unit", 6),
    ("Orthopedic OR", 12),
    ("Ophthalmology OR", 12),
    ("Ear/Nose/Throat OR", 3),
)

# 1-based (from, to, p); whatever a row leaves over exits the hospital.
HOSPITAL_ROUTES = (
    (1, 2, 0.10), (1, 3, 0.35), (1, 4, 0.05), (1, 5, 0.05), (1, 6, 0.10), (1, 7, 0.35),
    (2, 13, 0.6),
    (3, 10, 0.6), (3, 14, 0.15), (3, 15, 0.05),
    (4, 19, 0.5),
    (5, 20, 0.3),
    (6, 12, 0.4), (6, 18, 0.4),
    (7, 8, 0.5), (7, 9, 0.5),
    (10, 11, 1.0),
    (11, 9, 0.5), (11, 13, 0.3),
    (14, 16, 0.3), (15, 16, 0.3),
    (18, 17, 0.8),
)
HOSPITAL_ARRIVAL_RATE = 8.0

DATACENTER_INGRESS_SERVERS = 13800
DATACENTER_FANOUT = (4, 4, 10)


def _with_target_rates(names, servers, ext, routing, horizon, rho=TARGET_UTILIZATION):
    lam_tot = solve_traffic_equations(
        NetworkSpec(tuple(NodeSpec.constant(1.0, m, a) for m, a in zip(servers, ext)), routing, horizon),
        ext,
    )
    if np.any(lam_tot <= 0):
        raise ValueError("every node must receive traffic to set its service rate")
    mu = lam_tot / (rho * np.asarray(servers))
    nodes = tuple(NodeSpec.constant(float(u), int(m), float(a), nm) for u, m, a, nm in zip(mu, servers, ext, names))
    return NetworkSpec(nodes, routing, horizon)


def hospital(horizon=1000.0):
    names = [s for s, _ in HOSPITAL_STATIONS]
    servers = [m for _, m in HOSPITAL_STATIONS]
    ext = np.zeros(len(names))
    ext[0] = HOSPITAL_ARRIVAL_RATE
    routing = RoutingMatrix(len(names), [(i - 1, j - 1, p) for i, j, p in HOSPITAL_ROUTES])
    return _with_target_rates(names, servers, ext, routing, horizon)


def datacenter(horizon=100.0):
    """Four-layer fabric of 1 + 4 + 16 + 160 = 181 nodes.

    Traffic enters at the ingress node and is split evenly down a tree;
    the last layer sends everything out.  Server counts scale with the
    traffic share, starting from 13,800 at the ingress.
    """
    layers = [[0]]
    edges = []
    next_id = 1
    for fan in DATACENTER_FANOUT:
        nxt = []
        for parent in layers[-1]:
            kids = range(next_id, next_id + fan)
            next_id += fan
            edges += [(parent, k, 1.0 / fan) for k in kids]
            nxt += kids
        layers.append(nxt)
    n = sum(len(lay) for lay in layers)
    share = np.ones(n)
    for i, j, p in edges:
        share[j] = share[i] * p
    servers = [max(1, int(round(DATACENTER_INGRESS_SERVERS * s))) for s in share]
    ext = np.zeros(n)
    ext[0] = TARGET_UTILIZATION * DATACENTER_INGRESS_SERVERS
    names = [f"L{k + 1}-{idx + 1}" for k, lay in enumerate(layers) for idx in range(len(lay))]
    return _with_target_rates(names, servers, ext, RoutingMatrix(n, edges), horizon)


def tandem(horizon=100.0):
    """Two M/M/5 stations in series, 4 arrivals per unit time."""
    routing = RoutingMatrix(2, [(0, 1, 1.0)])
    return NetworkSpec((NodeSpec.constant(1.0, 5, 4.0, "first"), NodeSpec.constant(1.0, 5, 0.0, "second")), routing, horizon)


def fan(horizon=100.0):
    """Node 1 splits 0.4/0.4 to nodes 2 and 3 (rest exits); both feed node 4.

    Servers (10, 4, 4, 8) with unit service rate give utilization 0.8 everywhere.
    """
    routing = RoutingMatrix(4, [(0, 1, 0.4), (0, 2, 0.4), (1, 3, 1.0), (2, 3, 1.0)])
    nodes = (
        NodeSpec.constant(1.0, 10, 8.0, "entry"),
        NodeSpec.constant(1.0, 4, 0.0, "left"),
        NodeSpec.constant(1.0, 4, 0.0, "right"),
        NodeSpec.constant(1.0, 8, 0.0, "merge"),
    )
    return NetworkSpec(nodes, routing, horizon)


SCENARIOS = {"hospital": hospital, "datacenter": datacenter, "tandem": tandem, "fan": fan}

README = """\
Bundled scenario: {name}

Sourced values
{sourced}

Defaults (not given by any source; chosen here)
{defaults}
"""

_NOTES = {
    "hospital": (
        "- 20 departments and their server counts (Triage 10 ... ENT OR 3).\n"
        "- Feedforward patient flow between departments.",
        "- Routing probabilities between departments (reconstructed; rows that sum below 1 exit).\n"
        f"- External arrivals only at Triage, rate {HOSPITAL_ARRIVAL_RATE}.\n"
        "- Service rates set so every department has utilization 0.8.\n"
        "- Horizon 1000.",
    ),
    "datacenter": (
        "- 181 nodes; largest node has 13,800 servers.\n- Layered fabric structure.",
        "- Layer sizes 1/4/16/160 with even splits (link multiplicities are not enumerated in the source).\n"
        "- Server counts scaled with traffic share from 13,800 at the ingress.\n"
        "- Ingress arrival rate 11,040 and service rates giving utilization 0.8 everywhere.\n"
        "- Horizon 100.",
    ),
    "tandem": ("- none", "- Two M/M/5 stations, arrival rate 4, unit service rates, horizon 100."),
    "fan": ("- none", "- 1 -> {2,3} -> 4 with split 0.4/0.4, servers (10, 4, 4, 8), arrival rate 8, horizon 100."),
}


def build(name):
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def readme(name):
    sourced, defaults = _NOTES[name]
    return README.format(name=name, sourced=sourced, defaults=defaults)
