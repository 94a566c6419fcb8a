"""Per-interval loops of the Euler schemes, in numba-compilable form.

All arrays use interval index ``t = 1..K`` as row ``t``; row 0 of the
per-interval outputs stays zero.  Rates, staffing and arrival means are
stored per schedule segment and looked up through ``seg_of[t - 1]``.
"""

import numpy as np

from ._accel import njit
from .purdep import exact_departure


@njit
def route_row(rng, d, lo, hi, prob, closed, out, t):
    """Multinomial split of ``d`` over edges ``lo:hi`` plus exit; returns the exit count.

    Sequential conditional binomials; a closed row (no exit) hands the last
    edge whatever remains.
    """
    rem = d
    rem_p = 1.0
    for e in range(lo, hi):
        if rem == 0:
            break
        if closed and e == hi - 1:
            c = rem
        else:
            p = prob[e] / rem_p if rem_p > 0.0 else 1.0
            if p >= 1.0:
                c = rem
            elif p <= 0.0:
                c = 0
            else:
                c = rng.binomial(rem, p)
        out[t, e] = c
        rem -= c
        rem_p -= prob[e]
    return rem


@njit
def backward_kernel(rng_a, rng_d, rng_r, n0, seg_of, arr_mean, staff, mu, h,
                    row_ptr, dst, prob, closed, record_flows):
    K = seg_of.shape[0]
    n = n0.shape[0]
    E = dst.shape[0]
    states = np.zeros((K + 1, n), dtype=np.int64)
    deps = np.zeros((K + 1, n), dtype=np.int64)
    arr = np.zeros((K + 1, n), dtype=np.int64)
    ain = np.zeros((K + 1, n), dtype=np.int64)
    exits = np.zeros((K + 1, n), dtype=np.int64)
    flows = np.zeros((K + 1 if record_flows else 1, E), dtype=np.int64)
    x = n0.copy()
    states[0, :] = x
    for t in range(1, K + 1):
        s = seg_of[t - 1]
        ft = t if record_flows else 0
        # Departures act on the state left by the previous interval only.
        for i in range(n):
            d = exact_departure(rng_d, x[i], staff[s, i], mu[i], h)
            deps[t, i] = d
            if d > 0:
                lo = row_ptr[i]
                hi = row_ptr[i + 1]
                exits[t, i] = route_row(rng_r, d, lo, hi, prob, closed[i], flows, ft)
                for e in range(lo, hi):
                    ain[t, dst[e]] += flows[ft, e]
                if not record_flows:
                    for e in range(lo, hi):
                        flows[0, e] = 0
        for i in range(n):
            lam = arr_mean[s, i]
            if lam > 0.0:
                arr[t, i] = rng_a.poisson(lam)
        for i in range(n):
            x[i] = x[i] - deps[t, i] + arr[t, i] + ain[t, i]
            states[t, i] = x[i]
    return states, deps, arr, ain, exits, flows


@njit
def forward_kernel(rng_a, rng_d, rng_r, n0, seg_of, arr_mean, staff, mu, h,
                   row_ptr, dst, prob, closed, record_flows, order):
    K = seg_of.shape[0]
    n = n0.shape[0]
    E = dst.shape[0]
    states = np.zeros((K + 1, n), dtype=np.int64)
    deps = np.zeros((K + 1, n), dtype=np.int64)
    arr = np.zeros((K + 1, n), dtype=np.int64)
    ain = np.zeros((K + 1, n), dtype=np.int64)
    exits = np.zeros((K + 1, n), dtype=np.int64)
    flows = np.zeros((K + 1 if record_flows else 1, E), dtype=np.int64)
    x = n0.copy()
    states[0, :] = x
    for t in range(1, K + 1):
        s = seg_of[t - 1]
        ft = t if record_flows else 0
        for i in range(n):
            lam = arr_mean[s, i]
            if lam > 0.0:
                arr[t, i] = rng_a.poisson(lam)
        # Topological order: upstream flows of this interval are known first.
        for k in range(n):
            i = order[k]
            start = x[i] + arr[t, i] + ain[t, i]
            d = exact_departure(rng_d, start, staff[s, i], mu[i], h)
            deps[t, i] = d
            x[i] = start - d
            states[t, i] = x[i]
            if d > 0:
                lo = row_ptr[i]
                hi = row_ptr[i + 1]
                exits[t, i] = route_row(rng_r, d, lo, hi, prob, closed[i], flows, ft)
                for e in range(lo, hi):
                    ain[t, dst[e]] += flows[ft, e]
                if not record_flows:
                    for e in range(lo, hi):
                        flows[0, e] = 0
    return states, deps, arr, ain, exits, flows
