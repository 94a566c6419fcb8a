"""File formats: network JSON, trajectory CSV/NPZ, the binary flow archive, summaries and manifests.

Flow archive layout (little endian)::

    header  b"EQFLOW1\\0" | n u32 | n_edges u32 | K u64 | h f64
    frame   tau u32 | count u32 | count x (src u32, dst u32, flow u64)

One frame per interval ``tau = 1..K``; only non-zero entries are stored and
``dst == n`` marks customers leaving the network.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .netmodel import NetworkSpec

FLOW_MAGIC = b"EQFLOW1\0"
_HEADER = struct.Struct("<8sIIQd")
_FRAME = struct.Struct("<II")
_TRIPLE = np.dtype([("src", "<u4"), ("dst", "<u4"), ("count", "<u8")])


def load_spec(path):
    with open(path) as fh:
        return NetworkSpec.from_dict(json.load(fh))


def save_spec(spec, path):
    Path(path).write_text(dumps(spec.to_dict()) + "\n")


def _fmt(x):
    # 17 significant digits round-trip every double.
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    return json.dumps(x)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj, indent=2):
    """JSON text with reals written to 17 significant digits and NaN as null."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        return _fmt(o)

    return enc(_plain(obj), 0)


def write_json(obj, path):
    Path(path).write_text(dumps(obj) + "\n")


def write_trajectories_csv(trajectories, path):
    """One row per (replication, tau, node) with N, D and A_ex; nodes are 1-based."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "tau", "node", "N", "D", "A_ex"])
        for tr in trajectories:
            K, n = tr.states.shape
            tau = np.repeat(np.arange(K), n)
            node = np.tile(np.arange(1, n + 1), K)
            rows = np.column_stack([np.full(K * n, tr.replication), tau, node,
                                    tr.states.ravel(), tr.departures.ravel(), tr.external_arrivals.ravel()])
            w.writerows(rows.tolist())


def save_trajectory(traj, path):
    """Archive one trajectory (with flows, if recorded) as ``.npz``."""
    arrays = {
        "states": traj.states,
        "departures": traj.departures,
        "external_arrivals": traj.external_arrivals,
        "internal_arrivals": traj.internal_arrivals,
        "staffing": traj.staffing,
        "edge_src": traj.edge_src,
        "edge_dst": traj.edge_dst,
        "meta": np.array([json.dumps({"scheme": traj.scheme, "step": traj.step, "replication": traj.replication})]),
    }
    if traj.flows is not None:
        arrays["flows"] = traj.flows
        arrays["exits"] = traj.exits
    np.savez_compressed(path, **arrays)


def load_trajectory(path):
    from .euler import Trajectory

    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"][0]))
        return Trajectory(
            scheme=meta["scheme"],
            step=float(meta["step"]),
            states=z["states"],
            departures=z["departures"],
            external_arrivals=z["external_arrivals"],
            internal_arrivals=z["internal_arrivals"],
            staffing=z["staffing"],
            edge_src=z["edge_src"],
            edge_dst=z["edge_dst"],
            flows=z["flows"] if "flows" in z.files else None,
            exits=z["exits"] if "exits" in z.files else None,
            replication=int(meta["replication"]),
        )


def write_flow_archive(traj, path):
    if traj.flows is None:
        raise ValueError("trajectory was recorded without flows")
    n, E, K = traj.n_nodes, traj.edge_src.size, traj.n_intervals
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FLOW_MAGIC, n, E, K, traj.step))
        for t in range(1, K + 1):
            e = np.flatnonzero(traj.flows[t])
            x = np.flatnonzero(traj.exits[t])
            rec = np.empty(e.size + x.size, dtype=_TRIPLE)
            rec["src"] = np.concatenate([traj.edge_src[e], x])
            rec["dst"] = np.concatenate([traj.edge_dst[e], np.full(x.size, n)])
            rec["count"] = np.concatenate([traj.flows[t, e], traj.exits[t, x]])
            fh.write(_FRAME.pack(t, rec.size))
            fh.write(rec.tobytes())


def read_flow_archive(path):
    """Returns ``(header, frames)``; ``frames[tau]`` is a structured array of triples."""
    data = Path(path).read_bytes()
    magic, n, E, K, h = _HEADER.unpack_from(data, 0)
    if magic != FLOW_MAGIC:
        raise ValueError("not a flow archive")
    off = _HEADER.size
    frames = {}
    for _ in range(K):
        tau, cnt = _FRAME.unpack_from(data, off)
        off += _FRAME.size
        frames[tau] = np.frombuffer(data, dtype=_TRIPLE, count=cnt, offset=off).copy()
        off += cnt * _TRIPLE.itemsize
    if off != len(data):
        raise ValueError("trailing bytes in flow archive")
    return {"n": n, "n_edges": E, "K": K, "h": h}, frames


def config_digest(spec, config):
    """SHA-256 of the canonical JSON of network and run settings."""
    from dataclasses import asdict

    payload = {"spec": spec.to_dict(), "config": asdict(config) if config is not None else None}
    text = json.dumps(_plain(payload), sort_keys=True, separators=(",", ":"), allow_nan=False, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
