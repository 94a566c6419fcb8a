"""Command-line entry point: ``eulerq {simulate,compare,sweep,sojourn,scenarios}``.

Errors go to stderr as one line ``eulerq:error:<kind>: <message>``.  Exit
codes: 2 for invalid input (bad network, forward scheme on a cyclic
network, missing flows, empty entry node), 3 for a step that does not fit
the horizon or schedule breakpoints, 130 when interrupted.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io, scenarios
from .analytics import dominance_test, error_report, fit_convergence_slope, fit_slope, gap_identity_check
from .euler import AverageStats, SimConfig, run_replications, simulate, warm_up
from .netmodel import GridMisalignment, NetworkError, check_grid, steady_state_means, validate_network
from .sojourn import MissingFlows, NoCustomerPresent, SojournQuery, SojournSampler
from .streams import replication_streams

EXIT_OK, EXIT_INVALID, EXIT_GRID, EXIT_INTERRUPTED = 0, 2, 3, 130


class CliError(Exception):
    def __init__(self, kind, message, code=EXIT_INVALID):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _fail(kind, message, code):
    print(f"eulerq:error:{kind}: {message}", file=sys.stderr)
    return code


class Manifest:
    def __init__(self, out, spec, config):
        self.out = Path(out)
        self.data = {
            "tool": "eulerq",
            "version": __version__,
            "config_digest": io.config_digest(spec, config) if spec is not None else None,
            "base_seed": config.base_seed if config is not None else None,
            "timings": {},
            "files": [],
            "partial": False,
        }

    def phase(self, name, seconds):
        self.data["timings"][name] = seconds

    def add(self, path):
        path = Path(path)
        self.data["files"].append({"name": path.name, "sha256": io.file_sha256(path)})

    def write(self, partial=False):
        self.data["partial"] = partial
        io.write_json(self.data, self.out / "manifest.json")


def _load_spec(args):
    try:
        spec = io.load_spec(args.spec)
    except OSError as exc:
        raise CliError("io", f"cannot read {args.spec}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError("validation", f"{args.spec} is not valid JSON: {exc}") from None
    if args.horizon is not None:
        spec = spec.with_horizon(args.horizon)
    validate_network(spec)
    return spec


def _config(args, scheme):
    return SimConfig(
        step=args.h,
        scheme=scheme,
        replications=args.reps,
        base_seed=args.seed,
        warmup_fraction=args.warmup,
        record_flows=getattr(args, "record_flows", False),
    )


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    spec = _load_spec(args)
    config = _config(args, args.scheme)
    out = _out_dir(args)
    manifest = Manifest(out, spec, config)
    keep = args.trajectories or args.record_flows
    try:
        t0 = time.perf_counter()
        stats, trajs = simulate(spec, config, keep_trajectories=keep)
        manifest.phase("simulate", time.perf_counter() - t0)
        summary = stats.to_dict()
        summary["node_labels"] = [nd.name or str(i + 1) for i, nd in enumerate(spec.nodes)]
        io.write_json(summary, out / "summary.json")
        manifest.add(out / "summary.json")
        t0 = time.perf_counter()
        if args.trajectories and trajs:
            io.write_trajectories_csv(trajs, out / "trajectories.csv")
            manifest.add(out / "trajectories.csv")
        if args.record_flows:
            for tr in trajs:
                for path, writer in ((out / f"flows_r{tr.replication}.bin", io.write_flow_archive),
                                     (out / f"trajectory_r{tr.replication}.npz", io.save_trajectory)):
                    writer(tr, path)
                    manifest.add(path)
        manifest.phase("write", time.perf_counter() - t0)
    except KeyboardInterrupt:
        manifest.write(partial=True)
        raise
    manifest.write()
    print(_summary_table(summary))
    return EXIT_OK


def _summary_table(summary):
    lines = [f"scheme {summary['scheme']}  h={summary['step']:.4g}  reps={summary['replications']}"]
    lines.append(f"{'node':>12} {'mean':>12} {'ci95':>10}")
    for label, m, c in zip(summary["node_labels"], summary["node_time_avg"], summary["node_ci95"]):
        lines.append(f"{label:>12} {m:12.4f} {c:10.4f}")
    lines.append(f"{'system':>12} {summary['system_time_avg']:12.4f} {summary['system_ci95']:10.4f}")
    return "\n".join(lines)


def _thinned_states(trajs, warmup, stride):
    rows = []
    for tr in trajs:
        start = int(np.ceil(warmup * tr.n_intervals))
        rows.append(tr.states[start::stride].sum(axis=1))
    return np.concatenate(rows)


def cmd_compare(args):
    spec = _load_spec(args)
    base = _config(args, "backward")
    out = _out_dir(args)
    manifest = Manifest(out, spec, base)
    try:
        oracle = steady_state_means(spec).system_mean
    except NetworkError:
        oracle = None
    feedforward = validate_network(spec).is_feedforward
    warm_up()
    back, b_tr = run_replications(spec, base, "backward", keep_trajectories=True)
    schemes = [("backward", back, back.run_time)]
    if feedforward:
        fwd, f_tr = run_replications(spec, base, "forward", keep_trajectories=True)
        avg = AverageStats(back, fwd)
        schemes += [("forward", fwd, fwd.run_time), ("average", avg, avg.run_time)]
    t0 = time.perf_counter()
    des, des_trajs = run_replications(spec, replace(base, scheme="des"), keep_trajectories=True)
    des_time = time.perf_counter() - t0
    schemes.append(("des", des, des_time))
    for name, _, rt in schemes:
        manifest.phase(name, rt)
    bound = float(spec.mu.max() * args.h)
    rows = []
    for name, st, rt in schemes:
        row = {"scheme": name, "run_time": rt, "estimate": st.system_time_avg, "se": st.system_se}
        if oracle is not None:
            rep = error_report(name, st.system_time_avg, st.system_se, oracle, bound)
            row.update(relative_error=rep.relative_error, bound=bound, bound_satisfied=rep.bound_satisfied)
        rows.append(row)
    report = {"oracle": oracle, "rows": rows, "speedup": des_time / max(back.run_time, 1e-12)}
    if feedforward:
        if oracle is not None:
            gap = gap_identity_check(back, fwd, spec, args.h)
            report["gap"] = {"node_gaps": gap.node_gaps, "expected": gap.node_expected, "passed": gap.passed}
        # Dominance on thinned post-warmup system counts.
        stride = max(1, int(round(5.0 / args.h)))
        try:
            dom = dominance_test(_thinned_states(f_tr, args.warmup, stride), _thinned_states(des_trajs, args.warmup, stride),
                                 _thinned_states(b_tr, args.warmup, stride))
            report["dominance"] = {"passed": dom.passed, "worst_margin": dom.worst_margin}
        except ValueError as exc:
            report["dominance"] = {"passed": None, "note": str(exc)}
    io.write_json(report, out / "compare.json")
    manifest.add(out / "compare.json")
    manifest.write()
    print(f"{'scheme':>9} {'run_time':>9} {'estimate':>10} {'rel_err':>9} {'bound':>7} {'ok':>5}")
    for r in rows:
        rel = f"{r['relative_error']:9.4f}" if "relative_error" in r else f"{'-':>9}"
        bd = f"{r['bound']:7.4f}" if "bound" in r else f"{'-':>7}"
        ok = str(r.get("bound_satisfied", "-"))
        print(f"{r['scheme']:>9} {r['run_time']:9.4f} {r['estimate']:10.4f} {rel} {bd} {ok:>5}")
    if oracle is not None:
        print(f"oracle {oracle:.4f}")
    print(f"speedup (des / backward) {report['speedup']:.4f}")
    return EXIT_OK


def _parse_steps(values):
    out = []
    for v in values:
        out += [float(x) for x in str(v).split(",") if x.strip()]
    return out


def cmd_sweep(args):
    steps = _parse_steps(args.h)
    if len(steps) < 4:
        raise CliError("validation", "sweep requires ≥ 4 step values")
    out = _out_dir(args)
    if args.synthetic is not None:
        c, p = args.synthetic
        h = np.asarray(steps)
        fit = fit_slope(h, c * h**p)
        manifest = Manifest(out, None, None)
    else:
        spec = _load_spec(args)
        for h in steps:
            check_grid(spec, h)
        fit = fit_convergence_slope(spec, args.scheme, steps, args.reps, oracle=args.oracle,
                                    base_seed=args.seed, warmup_fraction=args.warmup)
        manifest = Manifest(out, spec, None)
    rows = fit.to_rows()
    with open(out / "sweep.csv", "w") as fh:
        fh.write("h,relative_error,se,used\n")
        for r in rows:
            fh.write(f"{r['h']:.17g},{r['error']:.17g},{r['se']:.17g},{int(r['used'])}\n")
    io.write_json({"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
                   "slope_ci95": list(fit.slope_ci), "note": fit.note}, out / "slope.json")
    manifest.add(out / "sweep.csv")
    manifest.add(out / "slope.json")
    manifest.write()
    print(f"slope {fit.slope:.4f}  r2 {fit.r_squared:.4f}")
    return EXIT_OK


def cmd_sojourn(args):
    try:
        traj = io.load_trajectory(args.archive)
    except OSError as exc:
        raise CliError("io", f"cannot read {args.archive}: {exc}") from None
    try:
        sampler = SojournSampler(traj)
        q = SojournQuery(args.node - 1, args.interval, args.samples)
        rng = replication_streams(args.seed, traj.replication, "sojourn").departures
        times, cens = sampler.sample_many(q, args.samples, rng, half_step=args.half_step)
    except MissingFlows as exc:
        raise CliError("missing-flows", str(exc)) from None
    except NoCustomerPresent as exc:
        raise CliError("no-customer", str(exc)) from None
    out = _out_dir(args)
    with open(out / "sojourn.csv", "w") as fh:
        fh.write("replication,sample,total_time,censored\n")
        for k, (t, c) in enumerate(zip(times, cens)):
            fh.write(f"{traj.replication},{k},{t:.17g},{int(c)}\n")
    ok = times[~cens]
    hist = {}
    if ok.size:
        counts, edges = np.histogram(ok, bins=min(50, max(1, np.unique(ok).size)))
        hist = {"edges": edges, "counts": counts}
    summary = {"samples": int(times.size), "censored": int(cens.sum()), "censored_fraction": float(cens.mean()),
               "mean": float(ok.mean()) if ok.size else None, "histogram": hist}
    io.write_json(summary, out / "sojourn_summary.json")
    print(f"samples {times.size}  censored {int(cens.sum())}  mean {summary['mean'] if summary['mean'] is None else round(summary['mean'], 4)}")
    return EXIT_OK


def cmd_scenarios(args):
    try:
        spec = scenarios.build(args.name)
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None
    out = _out_dir(args)
    io.save_spec(spec, out / f"{args.name}.json")
    (out / f"{args.name}.README.txt").write_text(scenarios.readme(args.name))
    print(out / f"{args.name}.json")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="eulerq", description="Euler-scheme and event-driven simulation of Markovian queueing networks.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, need_h=True):
        sp.add_argument("--spec", required=True, help="network JSON file")
        if need_h:
            sp.add_argument("--h", type=float, required=True, help="time step")
        sp.add_argument("--horizon", type=float, default=None, help="override the network's horizon")
        sp.add_argument("--reps", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--warmup", type=float, default=0.2)
        sp.add_argument("--out", default="eulerq_out")

    s = sub.add_parser("simulate", help="run one scheme")
    run_flags(s)
    s.add_argument("--scheme", choices=["backward", "forward", "average", "des"], default="backward")
    s.add_argument("--record-flows", action="store_true", help="store routed flows (needed for sojourn sampling)")
    s.add_argument("--trajectories", action="store_true", help="write per-interval trajectories as CSV")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="backward, forward, average and DES side by side")
    run_flags(c)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="error against step size and fitted slope")
    w.add_argument("--spec")
    w.add_argument("--h", nargs="+", required=True, help="step values (space or comma separated)")
    w.add_argument("--scheme", choices=["backward", "forward", "average"], default="backward")
    w.add_argument("--horizon", type=float, default=None)
    w.add_argument("--reps", type=int, default=5)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--warmup", type=float, default=0.2)
    w.add_argument("--oracle", type=float, default=None, help="known system mean (default: product form)")
    w.add_argument("--synthetic", type=float, nargs=2, metavar=("C", "P"), help="fit error = C h^P without simulating")
    w.add_argument("--out", default="eulerq_out")
    w.set_defaults(func=cmd_sweep)

    j = sub.add_parser("sojourn", help="sample sojourn times from a stored trajectory")
    j.add_argument("--archive", required=True, help="trajectory .npz written by simulate --record-flows")
    j.add_argument("--node", type=int, required=True, help="entry node (1-based)")
    j.add_argument("--interval", type=int, required=True, help="entry interval tau (1..K)")
    j.add_argument("--samples", type=int, default=1000)
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--half-step", action="store_true", help="subtract h/2 from every sample")
    j.add_argument("--out", default="eulerq_out")
    j.set_defaults(func=cmd_sojourn)

    n = sub.add_parser("scenarios", help="write a bundled network")
    n.add_argument("name")
    n.add_argument("--out", default=".")
    n.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "sweep" and args.synthetic is None and not args.spec:
        return _fail("validation", "sweep needs --spec unless --synthetic is given", EXIT_INVALID)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code)
    except GridMisalignment as exc:
        return _fail("grid", str(exc), EXIT_GRID)
    except NetworkError as exc:
        return _fail("validation", str(exc), EXIT_INVALID)
    except ValueError as exc:
        return _fail("validation", str(exc), EXIT_INVALID)
    except KeyboardInterrupt:
        return _fail("interrupted", "cancelled; partial results flagged in manifest", EXIT_INTERRUPTED)


if __name__ == "__main__":
    sys.exit(main())
