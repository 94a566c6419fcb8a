"""Error bounds, regime limits, convergence slopes and dominance checks.

Everything here is post-processing over summary statistics or analytical
formulas; the Monte Carlo checks use 3-standard-error bands with the
standard error taken across replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import NotMultiLayer, decompose_layers, mmm_mean, steady_state_means

SE_BAND = 3.0
REGIMES = ("i", "ii", "iii")


@dataclass(frozen=True)
class ErrorReport:
    scheme: str
    estimate: float
    oracle: float
    absolute_error: float
    relative_error: float
    bound: float
    bound_satisfied: bool
    ci_halfwidth: float
    se: float = float("nan")

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in self.__dict__.items()}


def error_report(scheme, estimate, se, oracle, bound, ci_halfwidth=float("nan")):
    """Signed relative error of ``estimate`` against ``oracle`` and a bound check.

    The check is ``|relative error| <= bound + 3 SE`` with SE expressed on the
    relative scale.
    """
    abs_err = float(estimate - oracle)
    rel = abs_err / oracle
    rel_se = se / abs(oracle) if np.isfinite(se) else 0.0
    return ErrorReport(scheme, float(estimate), float(oracle), abs_err, rel, float(bound),
                       bool(abs(rel) <= bound + SE_BAND * rel_se), float(ci_halfwidth), float(se))


@dataclass(frozen=True)
class BoundChain:
    """Relative-error bound in three forms, each per unit step ``h``."""

    exact: float
    weighted_mu: float
    max_mu: float
    node_terms: np.ndarray
    step: float

    @property
    def chain_holds(self):
        eps = 1e-12 * max(1.0, self.max_mu)
        return self.exact <= self.weighted_mu + eps and self.weighted_mu <= self.max_mu + eps

    def at_step(self):
        return self.exact * self.step, self.weighted_mu * self.step, self.max_mu * self.step


def relative_error_bound(spec, h=1.0):
    """``sum(lam_tot) h / E[N]`` with the weighted-mu and max-mu bounds above it.

    Values are returned per unit step; ``at_step()`` multiplies by ``h``.
    ``node_terms`` holds each node's share ``lam_tot_i / E[N]``.
    """
    sol = steady_state_means(spec)
    m = spec.servers()
    busy = m * sol.utilizations
    mu = spec.mu
    node_terms = sol.total_rates / sol.system_mean
    exact = float(node_terms.sum())
    weighted = float((busy * mu).sum() / busy.sum())
    return BoundChain(exact, weighted, float(mu.max()), node_terms, float(h))


@dataclass(frozen=True)
class RegimeSweep:
    regime: str
    m_values: np.ndarray
    rho_values: np.ndarray
    ratio_values: np.ndarray
    limit: float
    beta: float | None = None

    @property
    def distances(self):
        return np.abs(self.ratio_values - self.limit)

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.distances) <= 1e-15))


def regime_rho(regime, m, beta=1.0, rho=0.8):
    if regime == "i":
        return rho
    if regime == "ii":
        return 1.0 - beta / m
    if regime == "iii":
        return 1.0 - m ** -1.5
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def regime_ratio(regime, m, rho, beta=None):
    """Exact single-station ratio from Erlang C.

    Regimes (i) and (ii) report ``RE(h) / (mu h)``; regime (iii) reports
    ``RE(h) / (m (1 - rho) mu h)``.
    """
    mean = mmm_mean(m, rho)
    ratio = m * rho / mean
    if regime == "iii":
        ratio /= m * (1.0 - rho)
    return ratio


def regime_ratio_sweep(regime, m_values, beta=1.0, rho=0.8):
    """Ratios along the parameter sequence of a heavy-traffic regime.

    (i) fixed ``rho``; (ii) ``rho = 1 - beta/m``; (iii) ``rho = 1 - m**-1.5``.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    ms = np.asarray(m_values, dtype=np.int64)
    if np.any(np.diff(ms) <= 0):
        raise ValueError("m_values must be strictly increasing")
    if regime == "ii" and not beta > 0:
        raise ValueError("regime (ii) needs beta > 0")
    if regime == "i" and not 0 < rho < 1:
        raise ValueError("regime (i) needs 0 < rho < 1")
    rhos = np.array([regime_rho(regime, int(m), beta, rho) for m in ms])
    if np.any(rhos <= 0) or np.any(rhos >= 1):
        raise ValueError(f"regime ({regime}) gives rho outside (0, 1) for these m values")
    ratios = np.array([regime_ratio(regime, int(m), r) for m, r in zip(ms, rhos)])
    limit = beta / (1.0 + beta) if regime == "ii" else 1.0
    return RegimeSweep(regime, ms, rhos, ratios, limit, beta if regime == "ii" else None)


@dataclass
class SlopeFit:
    step_values: np.ndarray
    error_values: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    slope_ci: tuple = (float("nan"), float("nan"))
    se_values: np.ndarray | None = None
    used: np.ndarray | None = None
    note: str = ""

    def to_rows(self):
        se = self.se_values if self.se_values is not None else np.full(len(self.step_values), np.nan)
        used = self.used if self.used is not None else np.ones(len(self.step_values), dtype=bool)
        return [
            {"h": float(h), "error": float(e), "se": float(s), "used": bool(u)}
            for h, e, s, u in zip(self.step_values, self.error_values, se, used)
        ]


def _loglog_fit(h, err):
    x, y = np.log(h), np.log(err)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_slope(step_values, error_values):
    """Least-squares line through ``(log h, log |error|)``.

    Needs at least 4 step values spanning at least one decade.
    """
    h = np.asarray(step_values, dtype=float)
    err = np.abs(np.asarray(error_values, dtype=float))
    if h.size < 4:
        raise ValueError("sweep requires ≥ 4 step values")
    if h.max() / h.min() < 10.0 * (1 - 1e-12):
        raise ValueError("step values must span at least one decade")
    if np.any(err <= 0):
        raise ValueError("errors must be non-zero for a log-log fit")
    slope, intercept, r2 = _loglog_fit(h, err)
    return SlopeFit(h, err, slope, intercept, r2)


def fit_convergence_slope(spec, scheme, step_values, replications, oracle=None, horizon=None,
                          base_seed=0, warmup_fraction=0.2, n_boot=1000, backend=None):
    """Run ``scheme`` at each step, then fit log relative error against log h.

    ``oracle`` defaults to the product-form system mean.  Points whose error
    is within 2 SE of zero are left out of the fit (and marked in ``used``);
    if fewer than two points survive, all points are used and ``note`` says so.
    The slope CI comes from a bootstrap over replications.
    """
    from .euler import SimConfig, simulate

    h = np.asarray(step_values, dtype=float)
    if h.size < 4:
        raise ValueError("sweep requires ≥ 4 step values")
    if oracle is None:
        oracle = steady_state_means(spec).system_mean
    per_rep = []
    for step in h:
        cfg = SimConfig(step=float(step), horizon=horizon, scheme=scheme, replications=replications,
                        base_seed=base_seed, warmup_fraction=warmup_fraction, backend=backend)
        st, _ = simulate(spec, cfg)
        per_rep.append(st.replication_means.sum(axis=1))
    per_rep = np.array(per_rep)
    est = per_rep.mean(axis=1)
    se = per_rep.std(axis=1, ddof=1) / math.sqrt(replications) if replications > 1 else np.zeros(h.size)
    err = np.abs(est - oracle) / oracle
    rel_se = se / oracle
    fit = _fit_with_floor(h, err, rel_se)
    rng = np.random.default_rng(base_seed)
    boots = []
    for _ in range(n_boot if replications > 1 else 0):
        idx = rng.integers(0, replications, size=(h.size, replications))
        e = np.abs(np.take_along_axis(per_rep, idx, axis=1).mean(axis=1) - oracle) / oracle
        e = e[fit.used]
        if np.all(e > 0):
            boots.append(_loglog_fit(h[fit.used], e)[0])
    if boots:
        fit.slope_ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    return fit


def _fit_with_floor(h, err, rel_se):
    if h.max() / h.min() < 10.0 * (1 - 1e-12):
        raise ValueError("step values must span at least one decade")
    used = err >= 2.0 * rel_se
    note = ""
    if used.sum() < 2:
        used = np.ones(h.size, dtype=bool)
        note = "errors indistinguishable from Monte Carlo noise; fitted on all points"
    elif not used.all():
        note = f"{int((~used).sum())} point(s) within 2 SE of zero left out"
    slope, intercept, r2 = _loglog_fit(h[used], np.maximum(err[used], 1e-300))
    return SlopeFit(h, err, slope, intercept, r2, se_values=rel_se, used=used, note=note)


@dataclass
class DominanceResult:
    passed: bool
    worst_margin: float
    support: np.ndarray
    lower_margins: np.ndarray
    upper_margins: np.ndarray
    survival: dict = field(default_factory=dict)


def survival(sample, support):
    s = np.sort(np.asarray(sample))
    return 1.0 - np.searchsorted(s, support, side="left") / s.size


def dominance_test(samples_f, samples_exact, samples_b, support=None, min_count=10):
    """Check ``P(N^f >= x) <= P(N >= x) <= P(N^b >= x)`` within 3 SE bands.

    The default support is every value observed at least ``min_count``
    times in the pooled samples.  Margins are ``gap - 3 SE`` per point, so a
    positive margin is a violation; ``worst_margin`` is their maximum over
    the support points where at least one of the two compared survival
    values lies strictly between 0 and 1.
    """
    f, x, b = (np.asarray(s, dtype=np.int64).ravel() for s in (samples_f, samples_exact, samples_b))
    if min(f.size, x.size, b.size) < min_count:
        raise ValueError(f"each sample needs at least {min_count} observations")
    pooled = np.concatenate([f, x, b])
    vals, counts = np.unique(pooled, return_counts=True)
    if support is None:
        support = vals[counts >= min_count]
    else:
        support = np.asarray(support, dtype=np.int64)
        have = dict(zip(vals.tolist(), counts.tolist()))
        thin = [v for v in support.tolist() if have.get(v, 0) < min_count]
        if thin:
            raise ValueError(f"support points {thin[:5]} have fewer than {min_count} observations")
    sf, sx, sb = survival(f, support), survival(x, support), survival(b, support)

    def se(p1, n1, p2, n2):
        return np.sqrt(p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2)

    se_lo, se_up = se(sf, f.size, sx, x.size), se(sx, x.size, sb, b.size)
    lower = (sf - sx) - SE_BAND * se_lo
    upper = (sx - sb) - SE_BAND * se_up
    # Points where both survival values are 0 or 1 carry no information
    # (margin exactly 0); they still fail on a strict violation.
    lo_m = np.where((se_lo > 0) | (lower > 0), lower, -np.inf)
    up_m = np.where((se_up > 0) | (upper > 0), upper, -np.inf)
    worst = float(max(lo_m.max(initial=-np.inf), up_m.max(initial=-np.inf)))
    if not np.isfinite(worst):
        worst = 0.0
    return DominanceResult(bool(worst <= 0.0), worst, support, lower, upper,
                           {"forward": sf, "exact": sx, "backward": sb})


@dataclass
class GapReport:
    node_gaps: np.ndarray
    node_expected: np.ndarray
    node_se: np.ndarray
    node_ok: np.ndarray
    system_gap: float
    system_expected: float
    system_se: float
    system_ok: bool
    layer_bound: float | None
    layer_bound_ok: bool | None

    @property
    def passed(self):
        return bool(self.node_ok.all() and self.system_ok and self.layer_bound_ok is not False)

    def reports(self):
        """Per-node gap checks as :class:`ErrorReport` rows (``bound`` = expected gap)."""
        out = []
        for i, (g, e, s, ok) in enumerate(zip(self.node_gaps, self.node_expected, self.node_se, self.node_ok)):
            rel = (g - e) / e if e > 0 else float("nan")
            out.append(ErrorReport(f"gap[{i + 1}]", float(g), float(e), float(g - e), rel, float(e), bool(ok), SE_BAND * float(s), float(s)))
        return out


def layer_gap_bound(spec, h):
    """``sum_k Lambda_k (l + 1 - k) h`` over layers ``k = 1..l`` (external rate Lambda_k into layer k)."""
    layers = decompose_layers(spec)
    lam = spec.arrival_rates()
    l = len(layers)
    return float(sum(lam[list(layer)].sum() * (l - k) for k, layer in enumerate(layers)) * h)


def gap_identity_check(backward, forward, spec, h):
    """Per-node ``E[N^b_i] - E[N^f_i] = lam_tot_i h`` and system-level checks, 3 combined SE."""
    sol = steady_state_means(spec)
    gaps = backward.node_time_avg - forward.node_time_avg
    se = np.sqrt(backward.node_se**2 + forward.node_se**2)
    expected = sol.total_rates * h
    node_ok = np.abs(gaps - expected) <= SE_BAND * se
    sys_gap = float(gaps.sum())
    sys_se = math.hypot(backward.system_se, forward.system_se)
    sys_expected = float(expected.sum())
    try:
        bound = layer_gap_bound(spec, h)
        bound_ok = bool(sys_gap <= bound + SE_BAND * sys_se)
    except NotMultiLayer:
        bound, bound_ok = None, None
    return GapReport(gaps, expected, se, node_ok, sys_gap, sys_expected, sys_se,
                     bool(abs(sys_gap - sys_expected) <= SE_BAND * sys_se), bound, bound_ok)


def scheme_error_reports(result, spec, h):
    """Relative-error reports for backward, forward and averaged estimates against product form.

    ``result`` is an :class:`~eulerq.euler.AverageStats`.  The bound for
    each scheme is ``max(mu) h``.
    """
    oracle = steady_state_means(spec).system_mean
    bound = float(spec.mu.max() * h)
    rows = []
    for name, st in (("backward", result.backward), ("forward", result.forward), ("average", result)):
        ci = 1.96 * st.system_se
        rows.append(error_report(name, st.system_time_avg, st.system_se, oracle, bound, ci))
    return rows


__all__ = [
    "BoundChain",
    "DominanceResult",
    "ErrorReport",
    "GapReport",
    "RegimeSweep",
    "SlopeFit",
    "dominance_test",
    "error_report",
    "fit_convergence_slope",
    "fit_slope",
    "gap_identity_check",
    "layer_gap_bound",
    "regime_ratio",
    "regime_ratio_sweep",
    "relative_error_bound",
    "scheme_error_reports",
    "survival",
]

