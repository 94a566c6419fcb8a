"""Event-driven reference simulator for the same network class.

A binary heap holds pending external arrivals and service completions.
Every node keeps a FIFO waiting line and a fixed bank of server slots; a
completion event carries its slot's epoch so that services cancelled by a
staffing decrease are dropped when popped instead of being removed from
the heap.  The state is read off at every grid point ``t h`` so trajectories
line up with the Euler engines.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ._accel import kernel_for, njit
from .streams import as_streams, replication_streams

ARRIVAL, COMPLETION = 0, 1


@dataclass
class NodeRuntime:
    """Counts of one station, enough to apply a staffing change."""

    in_system: int
    servers: int
    in_service: int = -1
    cancelled: int = 0

    def __post_init__(self):
        if self.in_service < 0:
            self.in_service = min(self.in_system, self.servers)
        if not 0 <= self.in_service <= min(self.in_system, self.servers):
            raise ValueError("in_service must lie in [0, min(in_system, servers)]")


def staffing_change_settlement(rt, new_servers, rng=None):
    """Apply a new server count under the requeue policy.

    Services beyond the new count are cancelled and their customers go back
    to the head of the line; added servers pick up waiting customers at
    once.  Service times are exponential, so no residual clocks need to be
    kept and ``rng`` is accepted only for interface symmetry.
    """
    if new_servers < 1:
        raise ValueError(f"staffing must be >= 1, got {new_servers}")
    cancelled = max(0, rt.in_service - new_servers)
    in_service = min(rt.in_system, new_servers)
    return NodeRuntime(rt.in_system, int(new_servers), in_service, cancelled)


@njit
def _des_kernel(rng_a, rng_d, rng_r, n0, seg_of, rate, staff, mu, h,
                row_ptr, dst, prob, record_flows):
    K = seg_of.shape[0]
    n = n0.shape[0]
    E = dst.shape[0]
    states = np.zeros((K + 1, n), dtype=np.int64)
    deps = np.zeros((K + 1, n), dtype=np.int64)
    arr = np.zeros((K + 1, n), dtype=np.int64)
    ain = np.zeros((K + 1, n), dtype=np.int64)
    exits = np.zeros((K + 1, n), dtype=np.int64)
    flows = np.zeros((K + 1 if record_flows else 1, E), dtype=np.int64)

    # Server slots, flattened with one block of max staffing per node.
    cap = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for s in range(staff.shape[0]):
            if staff[s, i] > cap[i]:
                cap[i] = staff[s, i]
    base = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        base[i + 1] = base[i] + cap[i]
    slot_cust = np.full(base[n], -1, dtype=np.int64)
    slot_epoch = np.zeros(base[n], dtype=np.int64)
    free_top = cap.copy()
    free_stack = np.zeros(base[n], dtype=np.int64)
    for i in range(n):
        for k in range(cap[i]):
            free_stack[base[i] + k] = base[i] + cap[i] - 1 - k
    busy = np.zeros(n, dtype=np.int64)
    m_now = staff[seg_of[0]].copy()
    count = n0.copy()
    arr_epoch = np.zeros(n, dtype=np.int64)

    # Customers: growable arrays plus a linked-list FIFO per node.
    size = 1024
    entry_t = np.zeros(size)
    exit_t = np.full(size, -1.0)
    entry_node = np.zeros(size, dtype=np.int64)
    external = np.zeros(size, dtype=np.bool_)
    q_next = np.full(size, -1, dtype=np.int64)
    q_head = np.full(n, -1, dtype=np.int64)
    q_tail = np.full(n, -1, dtype=np.int64)
    n_cust = 0

    heap = [(0.0, 0, 0, 0, 0, 0)]
    heap.pop()
    seq = 0

    # Idle start plus optional initial customers, all waiting at time 0.
    for i in range(n):
        for _ in range(n0[i]):
            if n_cust == size:
                size *= 2
                entry_t = np.concatenate((entry_t, np.zeros(size - entry_t.shape[0])))
                exit_t = np.concatenate((exit_t, np.full(size - exit_t.shape[0], -1.0)))
                entry_node = np.concatenate((entry_node, np.zeros(size - entry_node.shape[0], dtype=np.int64)))
                external = np.concatenate((external, np.zeros(size - external.shape[0], dtype=np.bool_)))
                q_next = np.concatenate((q_next, np.full(size - q_next.shape[0], -1, dtype=np.int64)))
            c = n_cust
            n_cust += 1
            entry_node[c] = i
            if q_tail[i] < 0:
                q_head[i] = c
            else:
                q_next[q_tail[i]] = c
            q_tail[i] = c
            q_next[c] = -1

    prev_seg = -1
    for t in range(1, K + 1):
        now = (t - 1) * h
        s = seg_of[t - 1]
        if s != prev_seg:
            for i in range(n):
                if prev_seg < 0 or rate[s, i] != rate[prev_seg, i]:
                    arr_epoch[i] += 1
                    if rate[s, i] > 0.0:
                        seq += 1
                        heapq.heappush(heap, (now + rng_a.standard_exponential() / rate[s, i], seq, 0, i, 0, arr_epoch[i]))
                new_m = staff[s, i]
                # Staffing decrease: cancel the excess services, customers back to the head.
                while busy[i] > new_m:
                    slot = base[i]
                    for k in range(base[i], base[i + 1]):
                        if slot_cust[k] >= 0:
                            slot = k
                    c = slot_cust[slot]
                    slot_cust[slot] = -1
                    slot_epoch[slot] += 1
                    free_stack[base[i] + free_top[i]] = slot
                    free_top[i] += 1
                    busy[i] -= 1
                    q_next[c] = q_head[i]
                    q_head[i] = c
                    if q_tail[i] < 0:
                        q_tail[i] = c
                m_now[i] = new_m
                # Start service for anyone waiting up to the current staffing.
                while busy[i] < m_now[i] and q_head[i] >= 0:
                    c = q_head[i]
                    q_head[i] = q_next[c]
                    if q_head[i] < 0:
                        q_tail[i] = -1
                    free_top[i] -= 1
                    slot = free_stack[base[i] + free_top[i]]
                    slot_cust[slot] = c
                    busy[i] += 1
                    seq += 1
                    heapq.heappush(heap, (now + rng_d.standard_exponential() / mu[i], seq, 1, i, slot, slot_epoch[slot]))
            prev_seg = s

        tick = t * h
        ft = t if record_flows else 0
        while len(heap) > 0 and heap[0][0] <= tick:
            ev = heapq.heappop(heap)
            te = ev[0]
            kind = ev[2]
            i = ev[3]
            if kind == 0:
                if ev[5] != arr_epoch[i]:
                    continue
                seq += 1
                heapq.heappush(heap, (te + rng_a.standard_exponential() / rate[s, i], seq, 0, i, 0, arr_epoch[i]))
                if n_cust == size:
                    size *= 2
                    entry_t = np.concatenate((entry_t, np.zeros(size - entry_t.shape[0])))
                    exit_t = np.concatenate((exit_t, np.full(size - exit_t.shape[0], -1.0)))
                    entry_node = np.concatenate((entry_node, np.zeros(size - entry_node.shape[0], dtype=np.int64)))
                    external = np.concatenate((external, np.zeros(size - external.shape[0], dtype=np.bool_)))
                    q_next = np.concatenate((q_next, np.full(size - q_next.shape[0], -1, dtype=np.int64)))
                c = n_cust
                n_cust += 1
                entry_t[c] = te
                entry_node[c] = i
                external[c] = True
                arr[t, i] += 1
                j = i
            else:
                slot = ev[4]
                if ev[5] != slot_epoch[slot]:
                    continue
                c = slot_cust[slot]
                slot_cust[slot] = -1
                slot_epoch[slot] += 1
                free_stack[base[i] + free_top[i]] = slot
                free_top[i] += 1
                busy[i] -= 1
                count[i] -= 1
                deps[t, i] += 1
                # Next in line takes the freed server.
                if busy[i] < m_now[i] and q_head[i] >= 0:
                    c2 = q_head[i]
                    q_head[i] = q_next[c2]
                    if q_head[i] < 0:
                        q_tail[i] = -1
                    free_top[i] -= 1
                    sl2 = free_stack[base[i] + free_top[i]]
                    slot_cust[sl2] = c2
                    busy[i] += 1
                    seq += 1
                    heapq.heappush(heap, (te + rng_d.standard_exponential() / mu[i], seq, 1, i, sl2, slot_epoch[sl2]))
                # Route the finished customer.
                u = rng_r.random()
                j = -1
                acc = 0.0
                for e in range(row_ptr[i], row_ptr[i + 1]):
                    acc += prob[e]
                    if u < acc:
                        j = dst[e]
                        flows[ft, e] += 1
                        ain[t, j] += 1
                        break
                if j < 0:
                    exits[t, i] += 1
                    exit_t[c] = te
                    continue
            # Customer c arrives at node j at time te.
            count[j] += 1
            if busy[j] < m_now[j]:
                free_top[j] -= 1
                slot = free_stack[base[j] + free_top[j]]
                slot_cust[slot] = c
                busy[j] += 1
                seq += 1
                heapq.heappush(heap, (te + rng_d.standard_exponential() / mu[j], seq, 1, j, slot, slot_epoch[slot]))
            else:
                q_next[c] = -1
                if q_tail[j] < 0:
                    q_head[j] = c
                else:
                    q_next[q_tail[j]] = c
                q_tail[j] = c
            if count[j] > 4611686018427387903:
                raise OverflowError("customer count exceeded 64-bit safety limit")
        for i in range(n):
            states[t, i] = count[i]
        if not record_flows:
            for e in range(E):
                flows[0, e] = 0
    states[0, :] = n0
    return (states, deps, arr, ain, exits, flows,
            entry_t[:n_cust].copy(), exit_t[:n_cust].copy(), entry_node[:n_cust].copy(), external[:n_cust].copy())


def simulate_des(spec, config, replication=0, rng=None, backend=None):
    """One exact replication sampled on the ``config`` grid.

    The returned :class:`~eulerq.euler.Trajectory` also carries per-customer
    records in ``customers`` (``entry_time``, ``exit_time`` with ``-1`` for
    customers still present, ``entry_node``, ``external``).
    """
    from .euler import COUNT_LIMIT, Trajectory, _Grid

    horizon = config.horizon_for(spec)
    grid = _Grid(spec, config.step, horizon)
    if rng is None:
        streams = replication_streams(config.base_seed, replication, "des")
    else:
        streams = as_streams(rng, "des")
    n0 = np.zeros(spec.n, dtype=np.int64) if config.initial_state is None else np.asarray(config.initial_state, dtype=np.int64)
    if n0.shape != (spec.n,) or np.any(n0 < 0):
        raise ValueError("initial_state must hold one non-negative count per node")
    kern = kernel_for(_des_kernel, backend or config.backend)
    out = kern(streams.arrivals, streams.departures, streams.routing, n0, grid.seg_of, grid.rate,
               grid.staff, grid.mu, grid.h, grid.row_ptr, grid.dst, grid.prob, config.record_flows)
    states, deps, arr, ain, exits, flows, t_in, t_out, node_in, ext = out
    if states.max(initial=0) >= COUNT_LIMIT:
        raise OverflowError("customer count exceeded 64-bit safety limit")
    return Trajectory(
        scheme="des",
        step=grid.h,
        states=states,
        departures=deps,
        external_arrivals=arr,
        internal_arrivals=ain,
        staffing=grid.staffing_rows,
        edge_src=grid.src,
        edge_dst=grid.dst,
        flows=flows if config.record_flows else None,
        exits=exits if config.record_flows else None,
        replication=replication,
        customers={"entry_time": t_in, "exit_time": t_out, "entry_node": node_in, "external": ext},
    )


def customer_sojourns(traj, node=None, window=None):
    """Sojourn times of external customers that entered (at ``node``) inside ``window`` and left.

    Returns ``(sojourns, n_unfinished)``.
    """
    cu = traj.customers
    sel = cu["external"].copy()
    if node is not None:
        sel &= cu["entry_node"] == node
    if window is not None:
        lo, hi = window
        sel &= (cu["entry_time"] > lo) & (cu["entry_time"] <= hi)
    done = sel & (cu["exit_time"] >= 0)
    return cu["exit_time"][done] - cu["entry_time"][done], int(np.count_nonzero(sel & ~done))
