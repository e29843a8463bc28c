"""Command-line experiment runner.

Subcommands::

    adp2sgd calibrate --config cfg.json [--mu auto|FLOAT]
    adp2sgd run       --config cfg.json [--seed N] [--output DIR]
    adp2sgd compare   TRACE_A TRACE_B
    adp2sgd sweep     --config cfg.json --seeds 0 1 2 [--jobs N] [--output DIR]

Logging verbosity follows the ``ADP2_LOG_LEVEL`` environment variable
(``error``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from . import analysis, engine, tasks, topology
from .config import (
    ExperimentConfig,
    build_graph,
    build_privacy,
    build_scenario,
    build_task,
    learning_rate,
    parse_config,
)
from .errors import Adp2Error, ConfigError, InfeasibleBudgetError, TraceSchemaError
from .privacy import PrivacyParams
from .traceio import atomic_write_text, read_trace, write_report, write_trace

log = logging.getLogger("adp2sgd")

_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("ADP2_LOG_LEVEL", "error").lower()
    logging.basicConfig(level=_LEVELS.get(name, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


# -- calibrate ------------------------------------------------------------------------


def calibration_table(params: PrivacyParams) -> str:
    rows = [
        f"eps      {params.eps:.6g}",
        f"delta    {params.delta:.6g}",
        f"mu       {params.mu:.6g}",
        f"alpha    {params.alpha:.6g}",
        f"sigma2   {params.sigma2:.6g}",
        f"gamma    {params.gamma:.6g}",
        f"delta2   {params.delta2:.6g}",
        "",
    ]
    rows += [f"{'✓' if c.ok else '✗'} {c}" for c in params.checks()]
    return "\n".join(rows)


def _parse_mu(text):
    if text is None or text == "auto":
        return text
    return float(text)


def cmd_calibrate(config: ExperimentConfig, mu=None, out=sys.stdout) -> int:
    """Print the calibrated bundle and feasibility table; 1 when infeasible."""
    if config.privacy.calibrated is None:
        print("config uses raw_sigma; nothing to calibrate", file=out)
        return 2
    try:
        params = build_privacy(config, mu_override=mu)
    except InfeasibleBudgetError as err:
        print(f"infeasible (mu={err.mu:g})", file=out)
        for c in err.failed:
            print(f"✗ {c}", file=out)
        return 1
    print(calibration_table(params), file=out)
    return 0


# -- run --------------------------------------------------------------------------------


def execute(config: ExperimentConfig) -> tuple[engine.TrainingTrace, dict]:
    """Run one simulation and assemble its report."""
    task = build_task(config)
    graph = build_graph(config)
    scenario = build_scenario(config)
    noise = build_privacy(config, task=task)
    eta, rule = learning_rate(config)
    log.info("running %s K=%d T=%d eta=%.6g (%s)", config.mode, task.n_workers, config.total_updates, eta, rule)
    if config.mode == "sync":
        trace = engine.run_sync(task, graph, noise, scenario, eta, config.batch_size, config.epochs,
                                config.seed, probe_stride=config.probe_stride, lr_rule=rule)
    else:
        e = config.engine
        trace = engine.run_adpsgd(task, graph, noise, scenario, eta, config.batch_size, config.iterations,
                                  config.seed, timing=e.timing, snapshot=e.snapshot,
                                  staleness_guard=e.staleness_guard, probe_stride=config.probe_stride,
                                  lr_rule=rule)
    return trace, build_report(config, task, graph, noise, trace)


def build_report(config, task, graph, noise, trace) -> dict:
    K, B, T = task.n_workers, trace.batch_size, trace.iterations
    f_star = task.optimal_value if task.optimal_value is not None else 0.0
    gap = max(tasks.loss(task, task.initial) - f_star, 0.0)
    spectral = topology.estimate_spectral_gap(graph)
    tau = analysis.max_staleness(trace)
    report = {
        "config_sha256": config.sha256(),
        "seed": config.seed,
        "mode": trace.mode,
        "eta": trace.eta,
        "lr_rule": trace.lr_rule,
        "batch_size": B,
        "iterations": T,
        "sigma2": trace.sigma2,
        "task": {
            "kind": task.kind, "dim": task.dim, "L": task.lipschitz_grad, "G": task.clip_bound,
            "grad_var": task.grad_var, "worker_var": task.worker_var,
            "variance_source": task.variance_source, "lipschitz_source": task.lipschitz_source,
            "F0_minus_Fstar": gap,
            "f_star_source": "exact" if task.optimal_value is not None else "lower bound 0",
        },
        "topology": {"rho": spectral.rho, "rho_bar": spectral.rho_bar},
        "throughput": engine.throughput_summary(trace),
    }
    if isinstance(noise, PrivacyParams):
        report["privacy"] = {**asdict(noise), "checks": [
            {"name": c.name, "lhs": c.lhs, "relation": c.relation, "rhs": c.rhs, "ok": c.ok} for c in noise.checks()
        ]}
    else:
        report["privacy"] = {"raw_sigma": config.privacy.raw_sigma, "sigma2": noise}
    bound = analysis.proposition1_bound(gap, task.lipschitz_grad, task.grad_var, task.worker_var,
                                        task.dim, trace.sigma2, B, T)
    report["convergence"] = analysis.convergence_report(trace, task, config.probe_stride, bound).as_dict()
    try:
        consts = analysis.theorem1_constants(trace.eta, B, task.lipschitz_grad, tau, K, spectral.rho)
        report["constants"] = {
            **consts.as_dict(),
            "tau_measured": tau,
            "T_min": analysis.proposition1_threshold(task.lipschitz_grad, K, tau, spectral.rho),
            "utility_rhs": bound,
        }
    except Adp2Error as err:
        report["constants"] = {"error": str(err)}
    return report


def cmd_run(config: ExperimentConfig, output: str | Path | None = None) -> dict[str, Path]:
    """Run and write ``trace.csv``, ``report.json`` and the resolved config atomically."""
    out_dir = Path(output if output is not None else config.output.dir)
    trace, report = execute(config)
    paths = {
        "trace": write_trace(out_dir / config.output.trace, trace, config.sha256()),
        "report": write_report(out_dir / config.output.report, report),
        "config": atomic_write_text(out_dir / "config.json", config.to_json() + "\n"),
    }
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return paths


# -- compare ----------------------------------------------------------------------------


def summarize_trace(records) -> dict[str, float]:
    probes = [r for r in records if r.event == "metric_probe"]
    updates = sum(1 for r in records if r.event == "gradient_ready")
    wall = max((r.virtual_time for r in records), default=0.0)
    if not probes:
        raise TraceSchemaError("trace has no metric_probe rows")
    return {
        "final_loss": probes[-1].loss,
        "mean_grad_norm_sq": math.fsum(r.grad_norm_sq for r in probes) / len(probes),
        "wall_time": wall,
        "updates_per_time": updates / wall if wall > 0 else math.inf,
    }


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    return b / a if a != 0 else math.inf


def compare_traces(path_a, path_b) -> list[tuple[str, float, float, float]]:
    ha, ra = read_trace(path_a)
    hb, rb = read_trace(path_b)
    if ha["schema_version"] != hb["schema_version"]:
        raise TraceSchemaError(f"schema versions differ: {ha['schema_version']} vs {hb['schema_version']}")
    sa, sb = summarize_trace(ra), summarize_trace(rb)
    return [(k, sa[k], sb[k], _ratio(sa[k], sb[k])) for k in sa]


def cmd_compare(path_a, path_b, out=sys.stdout) -> int:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["metric", "a", "b", "ratio_b_over_a"])
    for name, a, b, r in compare_traces(path_a, path_b):
        writer.writerow([name, repr(a), repr(b), repr(r)])
    return 0


# -- sweep ------------------------------------------------------------------------------


def _sweep_one(args):
    config, out_dir = args
    return {k: str(v) for k, v in cmd_run(config, out_dir).items()}


def cmd_sweep(config: ExperimentConfig, seeds, jobs: int | None = None, output=None) -> list[dict]:
    """Independent runs, one per seed, each in ``<output>/seed_<n>``."""
    root = Path(output if output is not None else config.output.dir)
    work = [(replace(config, seed=s), root / f"seed_{s}") for s in seeds]
    if jobs == 1:
        return [_sweep_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_one, work))


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adp2sgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate the noise level for a privacy budget")
    p.add_argument("--config", required=True)
    p.add_argument("--mu", default=None, help="budget split: 'auto' or a float in (0, 1)")

    p = sub.add_parser("run", help="simulate one run and write trace and report")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None)

    p = sub.add_parser("compare", help="compare two trace files as CSV")
    p.add_argument("trace_a")
    p.add_argument("trace_b")

    p = sub.add_parser("sweep", help="run several seeds in parallel")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--output", default=None)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            return cmd_compare(args.trace_a, args.trace_b)
        config = parse_config(args.config)
        if args.command == "calibrate":
            return cmd_calibrate(config, _parse_mu(args.mu))
        if args.command == "run":
            if args.seed is not None:
                config = replace(config, seed=args.seed)
            paths = cmd_run(config, args.output)
            print(paths["trace"])
            return 0
        for res in cmd_sweep(config, args.seeds, args.jobs, args.output):
            print(res["trace"])
        return 0
    except ConfigError as err:
        for e in err.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (Adp2Error, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
