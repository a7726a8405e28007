"""Benchmark harness CLI: run campaigns, emit CSV traces and plot data.

Outputs are deterministic for a fixed config (17-significant-digit
floats, LF endings, no timestamps), so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import DEFAULTS, RunConfig, parse_config
from .driver import aggregate_traces, bo_step, start_campaign

log = logging.getLogger("dumbo")

TRACE_COLUMNS = [
    "seed", "iteration", "query", "observed", "immediate_regret",
    "min_regret", "bound", "admm_iterations", "primal_residual",
    "a", "beta_t", "decomposition",
]
AGGREGATE_COLUMNS = ["iteration", "median_min_regret", "se_min_regret"]
PLOT_COLUMNS = ["iteration", "median", "median_minus_se", "median_plus_se",
                "variant", "benchmark"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def _fmt_point(x: np.ndarray) -> str:
    return ";".join("%.17g" % v for v in np.asarray(x, dtype=float))


def run_seed(config_values: dict, seed: int):
    """Run one seed's campaign; module-level so worker processes can pick it."""
    config = RunConfig(dict(config_values))
    objective = config.objective()
    settings = config.campaign_settings()
    variant = config.variant()
    state = start_campaign(objective, variant, seed, settings)
    for _ in range(config["budget"]):
        bo_step(state)
    return state.trace


def write_trace_csv(path: Path, trace) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for tp in trace:
            writer.writerow([
                str(tp.seed), str(tp.iteration), _fmt_point(tp.x),
                _fmt(tp.observed), _fmt(tp.immediate_regret),
                _fmt(tp.min_regret), _fmt(tp.bound),
                "" if tp.admm_iterations is None else str(tp.admm_iterations),
                _fmt(tp.primal_residual), _fmt(tp.a), _fmt(tp.beta_t),
                tp.fingerprint,
            ])


def write_aggregate_csv(path: Path, result) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for it, med, se in zip(result.iterations, result.median, result.se):
            writer.writerow([str(int(it)), _fmt(med), _fmt(se)])


def _write_resolved_config(path: Path, values: dict) -> None:
    clean = {k: values[k] for k in sorted(values)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(clean, fh, sort_keys=True, default_flow_style=False)


def cmd_run(args) -> int:
    overrides = {}
    for flag, key in [("benchmark", "benchmark"), ("variant", "variant"),
                      ("budget", "budget"), ("seeds", "seeds"),
                      ("jobs", "jobs"), ("out", "out")]:
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            overrides[key] = value
    for pair in args.set or []:
        if "=" not in pair:
            print(f"--set expects key=value, got {pair!r}", file=sys.stderr)
            return 2
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    config = parse_config(args.config, overrides)
    values = config.values
    out_dir = Path(values["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(out_dir / "config_resolved.yaml", values)

    seeds = values["seeds"]
    jobs = min(values["jobs"], len(seeds))
    traces = {}
    failures = 0
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {seed: pool.submit(run_seed, values, seed)
                       for seed in seeds}
            for seed, future in futures.items():
                try:
                    traces[seed] = future.result()
                    write_trace_csv(out_dir / f"trace_seed{seed}.csv",
                                    traces[seed])
                except Exception as exc:       # partial traces stay on disk
                    failures += 1
                    log.error("seed %s failed: %s", seed, exc)
    else:
        for seed in seeds:
            try:
                traces[seed] = run_seed(values, seed)
                write_trace_csv(out_dir / f"trace_seed{seed}.csv",
                                traces[seed])
            except Exception as exc:
                failures += 1
                log.error("seed %s failed: %s", seed, exc)
    if failures or not traces:
        print(f"{failures} seed campaign(s) failed; partial traces kept in "
              f"{out_dir}", file=sys.stderr)
        return 1

    result = aggregate_traces(traces)
    write_aggregate_csv(out_dir / "aggregate.csv", result)
    summary = (
        f"benchmark={values['benchmark']} variant={values['variant']} "
        f"seeds={len(seeds)} budget={values['budget']} "
        f"final_min_regret_median={_fmt(result.final_median)}"
    )
    with open(out_dir / "summary.txt", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(summary + "\n")
    print(summary)
    return 0


def read_trace_csv(path: Path):
    """Trace rows as dicts with floats re-parsed (round-trip helper)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header in {path}")
        return list(reader)


def cmd_export_plot(args) -> int:
    run_dir = Path(args.in_dir)
    config_path = run_dir / "config_resolved.yaml"
    benchmark, variant = "", ""
    if config_path.exists():
        with open(config_path, "r", encoding="utf-8") as fh:
            resolved = yaml.safe_load(fh) or {}
        benchmark = str(resolved.get("benchmark", ""))
        variant = str(resolved.get("variant", ""))
    trace_files = sorted(run_dir.glob("trace_seed*.csv"))
    if not trace_files:
        print(f"no trace files found in {run_dir}", file=sys.stderr)
        return 1
    per_seed = []
    for path in trace_files:
        rows = read_trace_csv(path)
        per_seed.append([float(r["min_regret"]) for r in rows])
    lengths = {len(s) for s in per_seed}
    if len(lengths) != 1:
        print("trace files have unequal lengths", file=sys.stderr)
        return 1
    matrix = np.array(per_seed)
    median = np.median(matrix, axis=0)
    if matrix.shape[0] > 1:
        se = np.std(matrix, axis=0, ddof=1) / np.sqrt(matrix.shape[0])
    else:
        se = np.zeros(matrix.shape[1])
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLOT_COLUMNS)
        for i in range(matrix.shape[1]):
            writer.writerow([
                str(i + 1), _fmt(median[i]), _fmt(median[i] - se[i]),
                _fmt(median[i] + se[i]), variant, benchmark,
            ])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dumbo",
        description="Decentralized additive-GP Bayesian optimization benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a benchmark campaign")
    run_p.add_argument("--config", default=None, help="YAML config file")
    run_p.add_argument("--benchmark", default=None,
                       help="registry name or module:attr objective reference")
    run_p.add_argument("--variant", default=None,
                       choices=["dumbo", "add-dumbo", "es-dumbo", "es-add-dumbo"])
    run_p.add_argument("--budget", default=None, type=int)
    run_p.add_argument("--seeds", default=None,
                       help="comma-separated seed list, e.g. 0,1,2")
    run_p.add_argument("--jobs", default=None, type=int)
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted config override, repeatable")
    run_p.set_defaults(func=cmd_run)

    plot_p = sub.add_parser("export-plot", help="long-format CSV for plotting")
    plot_p.add_argument("--in", dest="in_dir", required=True,
                        help="run output directory")
    plot_p.add_argument("--out", required=True, help="CSV file to write")
    plot_p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DUMBO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
