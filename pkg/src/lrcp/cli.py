"""Command-line entry points: experiment orchestration and reporting.

Exit codes: 0 success, 2 config/validation failure, 3 statistically
inconclusive outcome (failed search, widened bracket, too few extinctions).
"""

from __future__ import annotations

import argparse
import math
import sys
import time

import yaml

from . import __version__
from .config import (
    ConfigError,
    Experiment,
    build_kernel,
    build_seed_set,
    build_sim_config,
    load_config,
    validate_config,
)
from .engine import SimConfig, run, sample_window
from .estimators import (
    DeltaCProtocol,
    EscapeValidationError,
    Shell,
    check_extinction_bound,
    estimate_delta_c,
    estimate_upper_density,
    estimate_survival,
    estimate_susceptibility,
    expected_arrows,
    extinction_tail,
    find_growth_speed,
    growth_envelope,
    infected_region,
    sample_shell_arrows,
)
from .fstc import (
    BlockSpec,
    check_c1,
    check_c2,
    check_c3,
    check_c4,
    oriented_percolation_demo,
    search_block_params,
)
from .geometry import box
from .records import ResultRecord, write_records
from .report import generate_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3


def _base_record(exp: Experiment, **kw) -> ResultRecord:
    return ResultRecord(
        experiment=exp.name, operation=exp.operation, config=exp.raw, **kw
    )


def _estimate_record(exp: Experiment, est, extra=None, n_range=None) -> ResultRecord:
    return _base_record(
        exp,
        value=est.value,
        ci_low=est.ci_low,
        ci_high=est.ci_high,
        n_samples=est.n_samples,
        n_escaped=est.n_escaped,
        flags=list(est.flags),
        replicates=list(n_range or (0, est.n_samples)),
        extra=extra or {},
    )


def _op_survival(exp: Experiment):
    kernel = build_kernel(exp.raw)
    cfg = build_sim_config(exp.raw, kernel)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    est = estimate_survival(cfg, seeds, exp.samples, exp.workers,
                            labels=("survival", exp.name))
    return [_estimate_record(exp, est)], EXIT_OK


def _op_susceptibility(exp: Experiment):
    kernel = build_kernel(exp.raw)
    cfg = build_sim_config(exp.raw, kernel)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    est = estimate_susceptibility(cfg, seeds, exp.samples, exp.workers,
                                  labels=("chi", exp.name))
    return [_estimate_record(exp, est)], EXIT_OK


def _op_delta_c(exp: Experiment):
    kernel = build_kernel(exp.raw)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    proto_cfg = exp.raw.get("protocol", {})
    proto = DeltaCProtocol(
        horizon=float(proto_cfg.get("horizon", 80.0)),
        n_per_probe=int(proto_cfg.get("n_per_probe", exp.samples)),
        survival_threshold=float(proto_cfg.get("survival_threshold", 0.02)),
        max_iters=int(proto_cfg.get("max_iters", 12)),
        rel_tolerance=float(proto_cfg.get("rel_tolerance", 0.02)),
        retry_factor=int(proto_cfg.get("retry_factor", 4)),
        horizon_rate_scaled=bool(proto_cfg.get("horizon_rate_scaled", True)),
        seed=exp.seed,
        workers=exp.workers,
    )
    bracket = estimate_delta_c(kernel, proto, seeds)
    extra = {
        "bracket_lo": bracket.lo,
        "bracket_hi": bracket.hi,
        "n_probes": len(bracket.probes),
    }
    rec = _base_record(exp, value=bracket.midpoint, ci_low=bracket.lo,
                       ci_high=bracket.hi, n_samples=proto.n_per_probe,
                       flags=list(bracket.flags), extra=extra)
    code = EXIT_INCONCLUSIVE if "widened" in bracket.flags else EXIT_OK
    return [rec], code


def _op_upper_density(exp: Experiment):
    kernel = build_kernel(exp.raw)
    win = exp.raw["window"]
    delta = float(exp.raw["process"]["delta"])
    est = estimate_upper_density(kernel, delta, float(win["half_width"]),
                                 float(win["height"]), exp.samples, exp.seed,
                                 exp.workers, labels=("density", exp.name))
    return [_estimate_record(exp, est)], EXIT_OK


def _op_arrows(exp: Experiment):
    kernel = build_kernel(exp.raw)
    cfg = build_sim_config(exp.raw, kernel)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    sec = exp.raw["arrows"]
    clip = box(float(sec["half_width"]), float(sec["height"]),
               dimension=kernel.dimension)
    widths = sec.get("shell_widths", "inf")
    widths = (math.inf,) * kernel.dimension if widths == "inf" else float(widths)
    traj = run(cfg, seeds)
    region = infected_region(traj, clip)
    shell = Shell(inner=clip, widths=widths if isinstance(widths, tuple)
                  else (widths,) * kernel.dimension)
    mean = expected_arrows(region, kernel, shell)
    counts = [
        len(sample_shell_arrows(region, kernel, shell, exp.seed, ("arrows", exp.name, i)))
        for i in range(exp.samples)
    ]
    emp = sum(counts) / len(counts) if counts else 0.0
    rec = _base_record(exp, value=mean, n_samples=exp.samples,
                       extra={"empirical_mean_count": emp,
                              "total_occupation": region.total_occupation()})
    return [rec], EXIT_OK


def _op_extinction_tail(exp: Experiment):
    kernel = build_kernel(exp.raw)
    cfg = build_sim_config(exp.raw, kernel)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    min_ext = int(exp.raw.get("tail", {}).get("min_extinct", 200))
    fit = extinction_tail(cfg, seeds, exp.samples, exp.workers,
                          labels=("tail", exp.name), min_extinct=min_ext)
    extra = {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "grid": fit.grid,
        "log_freq": fit.log_freq,
        "n_extinct": fit.n_extinct,
    }
    rec = _base_record(exp, value=fit.slope, n_samples=exp.samples,
                       flags=["inconclusive"] if fit.inconclusive else [],
                       extra=extra)
    return [rec], EXIT_INCONCLUSIVE if fit.inconclusive else EXIT_OK


def _op_growth(exp: Experiment):
    kernel = build_kernel(exp.raw)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    sec = exp.raw.get("growth", {})
    delta = float(exp.raw["process"]["delta"])
    horizon = float(sec.get("horizon", 100.0))
    theta = sec.get("theta")
    try:
        if theta is not None:
            est = growth_envelope(kernel, delta, seeds, float(theta), exp.samples,
                                  horizon, exp.seed, exp.workers,
                                  labels=("envelope", exp.name))
            used = float(theta)
        else:
            thetas = sec.get("thetas")
            used, est = find_growth_speed(kernel, delta, seeds, horizon,
                                          exp.samples, exp.seed,
                                          float(sec.get("target", 0.99)),
                                          thetas, exp.workers)
    except ValueError as exc:
        raise ConfigError("growth", str(exc)) from exc
    rec = _estimate_record(exp, est, extra={"theta": used, "horizon": horizon})
    return [rec], EXIT_OK


def _op_fstc_check(exp: Experiment):
    kernel = build_kernel(exp.raw)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    sec = exp.raw["block"]
    delta = float(exp.raw["process"]["delta"])
    spec = BlockSpec(
        seed_set=seeds,
        half_width=float(sec["half_width"]),
        height=float(sec["height"]),
        r=float(sec.get("r", 2.0)),
        tilt=float(sec.get("tilt", 0.0)),
        epsilon=float(sec.get("epsilon", 0.1)),
    )
    cond = sec.get("condition", "c1")
    shell_w = sec.get("shell_width")
    restrict_w = sec.get("restrict_width")
    common = dict(n=exp.samples, seed=exp.seed, workers=exp.workers)
    if cond == "c1":
        est = check_c1(kernel, delta, spec, **common)
    elif cond == "c3":
        est = check_c3(kernel, delta, spec, **common)
    else:
        face_str = str(sec["face"])
        if cond == "c2":
            axis, sign = int(face_str[:-1]), face_str[-1]
            est = check_c2(kernel, delta, spec, (axis, sign), shell_width=shell_w,
                           restrict_width=restrict_w, **common)
        else:
            est = check_c4(kernel, delta, spec, face_str[-1], shell_width=shell_w,
                           restrict_width=restrict_w, **common)
    rec = _estimate_record(exp, est, extra={"condition": cond})
    return [rec], EXIT_OK


def _op_fstc_search(exp: Experiment):
    kernel = build_kernel(exp.raw)
    sec = exp.raw.get("search", {})
    delta = float(exp.raw["process"]["delta"])
    cert = search_block_params(
        kernel, delta,
        epsilon=float(sec.get("epsilon", 0.1)),
        budget=int(sec.get("budget", 10**9)),
        r=float(sec.get("r", 2.0)),
        seed=exp.seed,
        workers=exp.workers,
        max_rungs=int(sec.get("max_rungs", 6)),
    )
    extra = {"certificate": cert.as_dict(), "events_used": cert.events_used}
    value = cert.c1.value if cert.c1 else max(
        cert.best_frequencies.values(), default=0.0
    )
    rec = _base_record(exp, value=value,
                       flags=[] if cert.success else ["search-failed"],
                       extra=extra)
    return [rec], EXIT_OK if cert.success else EXIT_INCONCLUSIVE


def _op_op_demo(exp: Experiment):
    sec = exp.raw["op"]
    est = oriented_percolation_demo(float(sec["p"]), int(sec["rows"]),
                                    int(sec["width"]), exp.samples, exp.seed,
                                    labels=("op-demo", exp.name))
    return [_estimate_record(exp, est)], EXIT_OK


def _op_sweep(exp: Experiment):
    kernel = build_kernel(exp.raw)
    base_cfg = build_sim_config(exp.raw, kernel)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    sec = exp.raw["sweep"]
    param = sec["parameter"]
    grid = sec["grid"]
    inner = sec.get("operation", "survival")
    expect = sec.get(
        "expect",
        {"delta": "nonincreasing", "cutoff": "nondecreasing"}[param],
    )
    records = []
    estimates = []
    for i, g in enumerate(grid):
        if param == "delta":
            cfg = SimConfig(kernel=kernel, delta=float(g), horizon=base_cfg.horizon,
                            domain=base_cfg.domain, escape_radius=base_cfg.escape_radius,
                            seed=exp.seed)
        else:
            cfg = SimConfig(kernel=kernel.truncate(int(g)), delta=base_cfg.delta,
                            horizon=base_cfg.horizon, domain=base_cfg.domain,
                            escape_radius=base_cfg.escape_radius, seed=exp.seed)
        fn = estimate_survival if inner == "survival" else estimate_susceptibility
        est = fn(cfg, seeds, exp.samples, exp.workers, labels=(inner, exp.name, i))
        estimates.append(est)
        records.append(_estimate_record(
            exp, est, extra={"grid_parameter": param, "grid_value": g}
        ))
    # monotonicity audit: flag CI-separated violations of the expected order
    for i in range(len(grid) - 1):
        a, b = estimates[i], estimates[i + 1]
        bad = (b.ci_low > a.ci_high) if expect == "nonincreasing" else (
            b.ci_high < a.ci_low
        )
        if bad:
            records[i + 1].flags.append("monotonicity-violation")
    return records, EXIT_OK


def _op_simulate(exp: Experiment):
    kernel = build_kernel(exp.raw)
    cfg = build_sim_config(exp.raw, kernel)
    seeds = build_seed_set(exp.raw, kernel.dimension)
    mode = exp.raw.get("dump", {}).get("mode", "trajectory")
    lines = []
    if mode == "trajectory":
        traj = run(cfg, seeds)
        for t, site, up in traj.events:
            coords = " ".join(str(c) for c in site)
            lines.append(f"{t:.9f}\t{coords}\t{'+' if up else '-'}")
        extra = {"termination": traj.termination, "n_events": len(traj.events),
                 "final_size": len(traj.final_set)}
        value = float(len(traj.final_set))
    else:
        b = box(float(exp.raw["dump"].get("half_width", 4.0)),
                cfg.horizon, dimension=kernel.dimension)
        window = sample_window(kernel, cfg.delta, b, (), cfg.seed, (exp.name,))
        for i in range(window.n_events):
            t = window.times[i]
            if window.kinds[i] == 0:
                site = window.sites[int(window.heal_site[i])]
                coords = " ".join(str(c) for c in site)
                lines.append(f"heal\t{coords}\t{t:.9f}")
            else:
                s = window.sites[int(window.src[i])]
                d = window.sites[int(window.dst[i])]
                coords = " ".join(str(c) for c in s) + " -> " + " ".join(
                    str(c) for c in d
                )
                lines.append(f"arrow\t{coords}\t{t:.9f}")
        extra = {"n_events": int(window.n_events)}
        value = float(window.n_events)
    rec = _base_record(exp, value=value, extra=extra)
    return [rec], EXIT_OK, lines


HANDLERS = {
    "survival": _op_survival,
    "susceptibility": _op_susceptibility,
    "delta-c": _op_delta_c,
    "upper-density": _op_upper_density,
    "arrows": _op_arrows,
    "extinction-tail": _op_extinction_tail,
    "growth": _op_growth,
    "fstc-check": _op_fstc_check,
    "fstc-search": _op_fstc_search,
    "op-demo": _op_op_demo,
    "sweep": _op_sweep,
}


def run_experiment(cfg: dict, operation: str | None = None, seed: int | None = None,
                   samples: int | None = None, workers: int | None = None,
                   out: str | None = None) -> tuple[int, list]:
    """Validate, dispatch, persist records; returns (exit code, records)."""
    exp = validate_config(cfg, operation)
    if seed is not None:
        exp.seed = seed
        exp.raw = {**exp.raw, "seed": seed}
    if samples is not None:
        if samples < 1:
            raise ConfigError("samples", f"must be >= 1, got {samples}")
        exp.samples = samples
        exp.raw = {**exp.raw, "samples": samples}
    if workers is not None:
        exp.workers = workers
    if out is not None:
        exp.out = out

    t0 = time.perf_counter()
    dump_lines = None
    if exp.operation == "simulate":
        records, code, dump_lines = _op_simulate(exp)
    else:
        records, code = HANDLERS[exp.operation](exp)
    wall = time.perf_counter() - t0
    for rec in records:
        rec.wall_s = wall / max(1, len(records))
    if exp.out:
        if dump_lines is not None:
            with open(exp.out, "w", encoding="utf-8") as fh:
                fh.write("\n".join(dump_lines) + ("\n" if dump_lines else ""))
        else:
            write_records(exp.out, records)
    return code, records


def _human_summary(records) -> str:
    lines = []
    for rec in records:
        bits = [f"{rec.experiment} [{rec.operation}]"]
        if rec.value is not None:
            bits.append(f"value={rec.value:.6g}")
        if rec.ci_low is not None and rec.ci_high is not None:
            bits.append(f"ci=({rec.ci_low:.6g}, {rec.ci_high:.6g})")
        if rec.n_samples:
            bits.append(f"n={rec.n_samples}")
        if rec.n_escaped:
            bits.append(f"escaped={rec.n_escaped}")
        if rec.flags:
            bits.append("flags=" + ",".join(rec.flags))
        lines.append("  ".join(bits))
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lrcp",
        description="Long-range contact process simulation and estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"lrcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    op_commands = ["simulate", "survival", "delta-c", "susceptibility",
                   "upper-density", "arrows", "extinction-tail", "growth",
                   "fstc-check", "fstc-search", "op-demo", "sweep"]
    for name in op_commands:
        p = sub.add_parser(name, help=f"run the {name} operation from a config")
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output path (records or dump)")
        p.add_argument("--workers", type=int, default=None, help="worker processes")
        p.add_argument("--samples", type=int, default=None, help="replicate override")

    pv = sub.add_parser("validate", help="validate a config without simulating")
    pv.add_argument("--config", required=True)

    pr = sub.add_parser("report", help="aggregate records into tables and figures")
    pr.add_argument("--records", required=True, help="JSONL records path")
    pr.add_argument("--out", default="report", help="output directory")

    args = parser.parse_args(argv)

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
            exp = validate_config(cfg)
        except (ConfigError, OSError, yaml.YAMLError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"OK: experiment {exp.name!r}, operation {exp.operation}")
        return EXIT_OK

    if args.command == "report":
        try:
            result = generate_report(args.records, args.out)
        except OSError as exc:
            print(f"report error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for warning in result["warnings"]:
            print(f"warning: {warning}", file=sys.stderr)
        print(result["table"])
        print(f"\ncsv: {result['csv']}")
        for fig in result["figures"]:
            print(f"figure: {fig}")
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        code, records = run_experiment(
            cfg, operation=args.command, seed=args.seed,
            samples=args.samples, workers=args.workers, out=args.out,
        )
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EscapeValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_human_summary(records))
    return code


if __name__ == "__main__":
    sys.exit(main())
