"""Statistical helpers shared by the test modules."""

import numpy as np
from scipy import stats


def pooled_chisquare(counts, pmf, min_expected=5.0):
    """Goodness-of-fit p-value after merging sparse cells into their neighbours.

    Adjacent support points are merged left to right until each merged cell
    expects at least ``min_expected`` observations; a leftover tail joins the
    last cell.  A single merged cell gives p = 1.
    """
    counts = np.asarray(counts, dtype=float)
    exp = np.asarray(pmf, dtype=float) * counts.sum()
    obs_p, exp_p = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(counts, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_p.append(o_acc)
            exp_p.append(e_acc)
            o_acc = e_acc = 0.0
    if o_acc > 0 or e_acc > 0:
        if exp_p:
            obs_p[-1] += o_acc
            exp_p[-1] += e_acc
        else:
            obs_p.append(o_acc)
            exp_p.append(e_acc)
    obs_p, exp_p = np.array(obs_p), np.array(exp_p)
    if obs_p.size < 2:
        return 1.0
    return float(stats.chisquare(obs_p, exp_p * obs_p.sum() / exp_p.sum()).pvalue)
