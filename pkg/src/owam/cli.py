"""Command-line front end: ``owam prepare | run | sweep | bench``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.

Environment:
    OWAM_THREADS       worker processes for sweep/bench cells (default 1).
    OWAM_FIXED_CLOCK   if set to a non-empty value other than 0, timing columns
                       come from a deterministic tick clock so report files are
                       byte-identical across repeats.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .config import CliConfig, ConfigError, load_config, resolve_targets, snapshot
from .correlation import write_weight_maps
from .harness import (
    REPORT_COLUMNS, TRACE_COLUMNS, RunConfig, TickClock, failed_row, parse_duration, report_rows, run,
    trace_rows, write_events, write_table,
)
from .stream import IngestError, RepairLog, load_csv, write_csv

log = logging.getLogger("owam")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
SWEEP_PARAMS = ("theta", "loss_kind", "window_T", "update_mode")
SWEEP_COLUMNS = [*REPORT_COLUMNS, "cell", "seed", "sweep"]
LONG_COLUMNS = ["cell", "sweep", "run_id", "target", "theta", "loss_kind", "window_T", "update_mode",
                "metric", "value"]
METRICS = ("rmse", "train_time_s", "instance_pred_time_ms", "eval_time_s")


def make_clock():
    flag = os.environ.get("OWAM_FIXED_CLOCK", "")
    return TickClock() if flag not in ("", "0") else time.perf_counter


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("OWAM_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- prepare


def cmd_prepare(args) -> int:
    repairs = RepairLog()
    try:
        ds = load_csv(args.input, args.layout, args.interval, zero_is_missing=args.zero_missing,
                      repair_log=repairs)
    except (IngestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_csv(ds, args.output, "wide")
    print("sensor,filled")
    for sensor in ds.sensor_ids:
        print(f"{sensor},{repairs.filled.get(sensor, 0)}")
    return EXIT_OK


# ---------------------------------------------------------------- run


def execute(cfg: RunConfig, dataset, out_dir: Path | None = None, snapshot_text: str | None = None,
            checkpoints: bool = True) -> list[dict]:
    """One run; writes the full run directory when ``out_dir`` is given."""
    report = run(dataset, cfg, make_clock())
    rows = report_rows(report)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if snapshot_text is not None:
            (out_dir / "config.ini").write_text(snapshot_text, encoding="utf-8")
        write_table(rows, out_dir / "report.csv")
        write_table(trace_rows(report), out_dir / "traces.csv", TRACE_COLUMNS)
        write_events(report.events, out_dir / "events.jsonl")
        write_weight_maps([report.weight_maps[t] for t in cfg.targets], out_dir / "weights.csv")
        if checkpoints:
            ck = out_dir / "checkpoints"
            ck.mkdir(exist_ok=True)
            for target, (model, sensors) in report.models.items():
                model.save(ck / f"{target}.npz", sensors)
    return rows


def _load(args_config: str) -> tuple[CliConfig, object, RunConfig]:
    cli = load_config(args_config)
    try:
        dataset = cli.load_dataset()
    except (IngestError, OSError) as exc:
        raise RuntimeError(str(exc)) from exc
    cfg = resolve_targets(cli, dataset)
    return cli, dataset, cfg


def cmd_run(args) -> int:
    try:
        cli, dataset, cfg = _load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out) if args.out else cli.output_dir
    try:
        rows = execute(cfg, dataset, out, snapshot(cli, cfg))
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    mean = rows[-1]
    print(f"{cfg.label()}: rmse={mean['rmse']:.4f} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep / bench


def parse_sweep(specs: Sequence[str]) -> list[tuple[str, list]]:
    """``name=v1,v2`` specs; several specs form a cross product (first varies slowest)."""
    out = []
    for spec in specs:
        name, sep, raw = spec.partition("=")
        name = name.strip()
        if name not in SWEEP_PARAMS:
            raise ConfigError(f"sweep.{name}", f"unknown sweep parameter (choose from {', '.join(SWEEP_PARAMS)})")
        if not sep or not raw.strip():
            raise ConfigError(f"sweep.{name}", "no values given")
        values: list = [v.strip() for v in raw.split(",") if v.strip()]
        try:
            if name == "theta":
                values = [float(v) for v in values]
            elif name == "window_T":
                values = [parse_duration(v) for v in values]
        except ValueError as exc:
            raise ConfigError(f"sweep.{name}", str(exc)) from None
        out.append((name, values))
    return out


def sweep_cells(base: RunConfig, axes: list[tuple[str, list]]) -> list[tuple[RunConfig, str]]:
    """Cross product of the axes; cell i runs with seed = base seed + i."""
    combos: list[dict] = [{}]
    for name, values in axes:
        combos = [{**c, name: v} for c in combos for v in values]
    cells = []
    for i, combo in enumerate(combos):
        changes = dict(combo)
        if "window_T" in changes or "update_mode" in changes:
            changes.setdefault("mode", "online")
        cfg = dataclasses.replace(base, seed=base.seed + i, run_id="", **changes)
        desc = ";".join(f"{k}={v}" for k, v in combo.items())
        cells.append((cfg, desc))
    return cells


def _cell_job(job):
    i, cfg, desc, dataset = job
    try:
        rows = execute(cfg, dataset)
    except Exception as exc:  # noqa: BLE001 - failed cell becomes a failed row
        rows = [failed_row(cfg, str(exc))]
    return [{**r, "cell": i, "seed": cfg.seed, "sweep": desc} for r in rows]


def run_cells(cells: list[tuple[RunConfig, str]], datasets: list) -> list[dict]:
    jobs = [(i, cfg, desc, ds) for i, ((cfg, desc), ds) in enumerate(zip(cells, datasets))]
    workers = min(n_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    seen: dict[str, int] = {}
    rows = []
    for cell_rows in results:  # deterministic order regardless of completion order
        label = cell_rows[0]["run_id"]
        seen[label] = seen.get(label, 0) + 1
        for r in cell_rows:
            if seen[label] > 1:
                r["run_id"] = f"{label}#{seen[label]}"
            rows.append(r)
    return rows


def long_rows(rows: Sequence[dict]) -> list[dict]:
    out = []
    for r in rows:
        for m in METRICS:
            out.append({**{c: r.get(c, "") for c in LONG_COLUMNS[:-2]}, "metric": m, "value": r.get(m, "")})
    return out


def _write_combined(rows, out: Path, stem: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, out / f"{stem}.csv", SWEEP_COLUMNS)
    write_table(long_rows(rows), out / f"{stem}_long.csv", LONG_COLUMNS)


def cmd_sweep(args) -> int:
    try:
        axes = parse_sweep(args.param)
        cli, dataset, base = _load(args.config)
        cells = sweep_cells(base, axes)
        for cfg, _ in cells:
            cfg.validate(dataset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: run: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out) if args.out else cli.output_dir
    rows = run_cells(cells, [dataset] * len(cells))
    _write_combined(rows, out, "sweep")
    (out / "config.ini").write_text(snapshot(cli, base) + f"# sweep: {' '.join(args.param)}\n", encoding="utf-8")
    n_failed = sum(1 for r in rows if str(r.get("status", "")).startswith("failed"))
    print(f"{len(cells)} cells, {n_failed} failed -> {out}")
    return EXIT_OK if n_failed < len(cells) else EXIT_RUNTIME


def cmd_bench(args) -> int:
    cells, datasets, snaps = [], [], []
    try:
        for path in args.configs:
            cli, dataset, cfg = _load(path)
            cells.append((cfg, Path(path).name))
            datasets.append(dataset)
            snaps.append(snapshot(cli, cfg))
    except ConfigError as exc:
        print(f"config error: {args.configs[len(cells)]}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    rows = run_cells(cells, datasets)
    _write_combined(rows, out, "bench")
    for i, text in enumerate(snaps):
        (out / f"config_{i}.ini").write_text(text, encoding="utf-8")
    n_failed = sum(1 for r in rows if str(r.get("status", "")).startswith("failed"))
    print(f"{len(cells)} runs, {n_failed} failed -> {out}")
    return EXIT_OK if n_failed < len(cells) else EXIT_RUNTIME


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="owam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("prepare", help="load a wide/long CSV, repair gaps, write canonical wide CSV")
    pp.add_argument("input")
    pp.add_argument("output")
    pp.add_argument("--layout", choices=("wide", "long"), default="wide")
    pp.add_argument("--interval", type=int, default=300, help="sample interval in seconds")
    pp.add_argument("--zero-missing", action="store_true", help="treat 0 readings as missing (METR-LA style)")
    pp.set_defaults(func=cmd_prepare)

    pr = sub.add_parser("run", help="one offline or online run from an INI config")
    pr.add_argument("config")
    pr.add_argument("--out", help="override [output] dir")
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("sweep", help="cross a base config with parameter values")
    ps.add_argument("config")
    ps.add_argument("--param", action="append", required=True, metavar="NAME=V1,V2",
                    help=f"one of {', '.join(SWEEP_PARAMS)}; repeat for a cross product")
    ps.add_argument("--out", help="override [output] dir")
    ps.set_defaults(func=cmd_sweep)

    pb = sub.add_parser("bench", help="run several configs into one table")
    pb.add_argument("configs", nargs="+")
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
