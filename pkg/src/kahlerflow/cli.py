"""Command line entry point: simulate, audit, spectrum, verify, report.

Exit codes: 0 success, 1 failed verification, 2 configuration or input
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import flow as flowmod
from . import io
from .functionals import functional_ledger
from .geometry import (
    ConfigurationError,
    NumericalError,
    PositivityError,
    ReducedMetricState,
    build_reference,
    laplacian_spectrum,
)
from .invariants import futaki, im_k

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------

def build_summary(trace: flowmod.FlowTrace, pairs: int = 100, seed: int = 0) -> dict:
    n = trace.n
    t = trace.times
    dev = float(np.abs(trace.R_fields[-1] - trace.r_avg[-1]).max())
    out = {
        "manifold": trace.config.manifold,
        "t_end": float(t[-1]),
        "samples": int(t.size),
        "final_sup_R_minus_r": dev,
        "final_sup_R_minus_n": float(np.abs(trace.R_fields[-1] - n).max()),
        "r_drift": float(np.abs(trace.r_avg - n).max()),
        "c_shift": trace.c_shift,
        "c_min": float(np.min(trace.columns["c"])),
        "bisectional_positive_all": bool(trace.bisectional_positive.all()),
        "sandwich_ok_all": bool(trace.sandwich_ok.all()),
        "rmax_doubling_violations": flowmod.rmax_doubling_violations(trace),
    }
    out["c_identity_residual"] = trace.stats.get("c_identity_residual")
    if trace.config.monitors == "all":
        mono = flowmod.monotonicity_violations(trace)
        out["monotonicity_violations"] = mono
        out["monotonicity_violations_total"] = int(sum(mono.values()))
        if t.size >= 5:
            worst, checked = flowmod.energy_derivative_check(trace)
            out["dEk_dt_rel_error"] = worst.tolist()
            out["dEk_dt_checked_samples"] = checked.tolist()
        ident = [flowmod.accumulate_energy_identity(trace, k) for k in range(n + 1)]
        out["energy_identity"] = [{"k": k, "lhs": a, "rhs": b, "holds": a <= b + 1e-6} for k, (a, b) in enumerate(ident)]
        out["rr2_slices"] = [{"T": T, "value": v} for T, v in flowmod.rr2_slices(trace)]
        pos, smin = flowmod.harnack_trace_positive(trace)
        out["harnack_trace_positive"] = pos
        out["harnack_trace_min"] = smin
        if pairs > 0 and np.any(t >= 0.05):
            worst_m, viol, _ = flowmod.harnack_check(trace, pairs, seed=seed)
            out["harnack_pairs"] = pairs
            out["harnack_worst_margin"] = worst_m
            out["harnack_violations"] = viol
        out["evolution_residual_max"] = float(np.nanmax(trace.evolution_residual))
    try:
        fit = flowmod.fit_decay_rate(trace)
        out["decay"] = fit
    except (NumericalError, ConfigurationError) as exc:
        out["decay"] = {"error": str(exc)}
    return out


def cmd_simulate(args) -> int:
    started = _now()
    try:
        cfg = io.load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _err(f"cannot create output directory {out}: {exc}")
        return EXIT_CONFIG
    try:
        trace = flowmod.run_flow(cfg)
    except PositivityError as exc:
        _err(f"initial potential rejected: {exc}")
        return EXIT_CONFIG
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except NumericalError as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    summary = build_summary(trace, args.pairs, cfg.seed)
    files = {
        "trace": out / "trace.csv",
        "summary": out / "summary.json",
        "state_initial": out / "state_initial.csv",
        "state_final": out / "state_final.csv",
    }
    io.write_trace_csv(files["trace"], trace)
    io.write_json(files["summary"], summary)
    io.write_state(files["state_initial"], trace.initial)
    final = ReducedMetricState(trace.initial.grid, trace.initial.phi + trace.phi[-1])
    io.write_state(files["state_final"], final)
    plots = io.write_plots(out, io.read_trace_csv(files["trace"]), trace.n)
    manifest = {
        "config": io.config_echo(cfg),
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "wall_seconds": trace.stats.get("wall_time"),
        "outputs": {k: str(v) for k, v in files.items()} | {"plots": plots},
        "summary": {
            "final_sup_R_minus_r": summary["final_sup_R_minus_r"],
            "alpha_mu": summary["decay"].get("alpha_mu"),
            "monotonicity_violations": summary.get("monotonicity_violations_total"),
        },
    }
    io.write_json(out / "manifest.json", manifest)
    print(f"wrote {out} (final sup|R - r| = {summary['final_sup_R_minus_r']:.3e})")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        state = io.read_state(args.state)
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if not state.is_positive():
        _err(f"stored potential is not Kahler at grid index {state.positivity_violation()}")
        return EXIT_CONFIG
    ref = build_reference(state.manifold, state.grid.n_points)
    try:
        led = functional_ledger(ref, state.phi, reference_id=f"{state.manifold} Kahler-Einstein")
        inv = {"futaki": futaki(state)}
        inv.update({f"Im_{k}": im_k(state, k=k) for k in range(state.n + 1)})
    except NumericalError as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    print(json.dumps(io._clean({"ledger": led.as_dict(), "invariants": inv}), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    try:
        if args.state:
            state = io.read_state(args.state)
        else:
            manifold, n_points = "CP1", 512
            if args.config:
                cfg = io.load_config(args.config)
                manifold, n_points = cfg.manifold, cfg.n_points
            manifold = args.manifold or manifold
            n_points = args.n_points or n_points
            state = build_reference(manifold, n_points)
        vals = laplacian_spectrum(state, args.count)
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except NumericalError as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    print(json.dumps({"manifold": state.manifold, "n_points": state.grid.n_points,
                      "eigenvalues": [float(v) for v in vals]}, indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import MUTATIONS, SUITES, run_suites

    if args.suite != "all" and args.suite not in SUITES:
        _err(f"unknown suite {args.suite!r}; choose from all, {', '.join(SUITES)}")
        return EXIT_CONFIG
    if args.mutate and args.mutate not in MUTATIONS:
        _err(f"unknown mutation {args.mutate!r}; choose from {', '.join(MUTATIONS)}")
        return EXIT_CONFIG
    t0 = time.perf_counter()

    def echo(o):
        print(f"{'PASS' if o.passed else 'FAIL'}  {o.suite:<12} {o.name:<24} {o.detail}  ({o.seconds:.1f}s)", flush=True)

    outcomes = run_suites(args.suite, seed=args.seed or 0, mutation=args.mutate, echo=echo)
    failed = [o for o in outcomes if not o.passed]
    print(f"{len(outcomes) - len(failed)}/{len(outcomes)} properties passed in {time.perf_counter() - t0:.1f}s")
    for o in failed:
        print(f"failed property: {o.suite}.{o.name}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    try:
        cols = io.read_trace_csv(out / "trace.csv")
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    except (OSError, ValueError, IndexError) as exc:
        _err(f"cannot read run directory {out}: {exc}")
        return EXIT_CONFIG
    n = sum(1 for k in cols if k.startswith("E_")) - 1
    plots = io.write_plots(out, cols, n)
    lines = [f"# Flow report: {summary.get('manifold')}", ""]
    for key in ("t_end", "final_sup_R_minus_r", "c_min", "monotonicity_violations_total",
                "harnack_violations", "harnack_trace_min", "rmax_doubling_violations"):
        if key in summary:
            lines.append(f"- {key}: {summary[key]}")
    dec = summary.get("decay", {})
    if "alpha_mu" in dec:
        lines.append(f"- alpha_mu: {dec['alpha_mu']}, alpha_c: {dec.get('alpha_c')}")
    lines.append("")
    lines += [f"![{Path(p).stem}]({Path(p).name})" for p in plots]
    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'report.md'}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="kahlerflow", description="Kahler-Ricci flow on U(n)-invariant metrics")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the flow from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", type=int, default=100, help="Harnack sample pairs")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("audit", help="functionals and invariants of a stored state")
    a.add_argument("state")
    a.set_defaults(func=cmd_audit)

    sp = sub.add_parser("spectrum", help="lowest invariant Laplacian eigenvalues")
    sp.add_argument("state", nargs="?")
    sp.add_argument("--config")
    sp.add_argument("--manifold", choices=["CP1", "CP2"])
    sp.add_argument("--n-points", type=int)
    sp.add_argument("--count", type=int, default=3)
    sp.set_defaults(func=cmd_spectrum)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("--suite", default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--mutate", default=None, help="break one formula on purpose")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="plots and a markdown report for a run directory")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
