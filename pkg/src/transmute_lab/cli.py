"""Command-line runner: ``transmute-lab run|validate|suite``.

Exit codes: 0 when every gate passes, 1 on a failed gate or a numerical
failure, 2 when the config cannot be parsed or validated.  CSV files use a
header row, LF line endings and floats with 17 significant digits; the
timing file is kept apart because wall-clock values are not reproducible.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import ExperimentConfig, load_config
from .experiments import ConfigError, ExperimentResult, acceptance_configs, run, validate

log = logging.getLogger("transmute_lab")


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else str(v).lower()
    return str(v)


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_reports(res: ExperimentResult, out: Path, plots: bool = False) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    eid = res.experiment_id
    paths = [out / f"{eid}.csv", out / f"{eid}_gates.csv"]
    write_csv(paths[0], res.columns, res.rows)
    gate_rows = [[g.criterion, g.name, g.value, g.relation, g.threshold, g.upper, g.passed] for g in res.gates]
    if res.error:
        gate_rows.append(["-", "exception", float("nan"), "-", float("nan"), float("nan"), False])
    write_csv(paths[1], ["criterion", "gate", "value", "relation", "threshold", "upper", "passed"], gate_rows)
    if res.traces:
        paths.append(out / f"{eid}_traces.csv")
        write_csv(paths[-1], ["experiment_id", "t", "node_index", "value"], res.traces)
    if res.timings or res.timing_gates:
        paths.append(out / f"{eid}_timing.csv")
        rows = [[k, v, "", ""] for k, v in res.timings.items()]
        rows += [[g.name, g.value, g.threshold, g.passed] for g in res.timing_gates]
        write_csv(paths[-1], ["quantity", "value", "threshold", "passed"], rows)
    if plots:
        paths += _plot(res, out)
    return paths


def _plot(res: ExperimentResult, out: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not available; writing CSV only")
        return []
    paths = []
    for name, (x, y, xlabel, ylabel) in res.plots.items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        y = np.abs(np.asarray(y, dtype=float))
        if np.all(y > 0):
            ax.semilogy(x, y, "o-")
        else:
            ax.plot(x, y, "o-")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(f"{res.experiment_id}: {name}")
        fig.tight_layout()
        path = out / f"{res.experiment_id}_{name}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


def _load(path: str) -> ExperimentConfig:
    cfg = load_config(path)
    validate(cfg)
    return cfg


def _report(res: ExperimentResult) -> None:
    for g in res.gates + res.timing_gates:
        print(f"{'PASS' if g.passed else 'FAIL'} {g.criterion} {res.experiment_id}: {g.name} = {g.value:.4g}")
    if res.error:
        print(f"FAIL {res.experiment_id}: {res.error}")


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
    except (ValueError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    res = run(cfg, jobs=args.jobs)
    out = Path(args.out or cfg.output_dir)
    write_reports(res, out, args.plots)
    _report(res)
    if not res.passed:
        print(f"failing gates: {', '.join(res.failing())}", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except (ValueError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {cfg.experiment_id} ({cfg.experiment})")
    return 0


def cmd_suite(args) -> int:
    out = Path(args.out or "results")
    status = 0
    for doc in acceptance_configs():
        cfg = ExperimentConfig.model_validate(doc)
        res = run(cfg, jobs=args.jobs)
        write_reports(res, out, args.plots)
        _report(res)
        status = status or (0 if res.passed else 1)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transmute-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--plots", action="store_true", help="also write PNG plots (needs matplotlib)")
    r.add_argument("--jobs", type=int, default=1, help="threads for resolvent shift solves")
    r.add_argument("--out", help="output directory (overrides output_dir in the config)")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    s = sub.add_parser("suite", help="run the full acceptance battery")
    s.add_argument("--plots", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_suite)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
