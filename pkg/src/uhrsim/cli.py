"""Command line front end: single runs, parameter sweeps over seeds, and
canned preset dumps. Exit codes: 0 success, 1 config error, 2 audit failure."""

from __future__ import annotations

import argparse
import hashlib
import os
import statistics
import sys
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

from . import scenario, stats
from .scenario import ScenarioError, parse_scenario, preset_text, serialize, set_key
from .simulation import run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_AUDIT = 2


def _load_config(ref: str) -> tuple[scenario.ScenarioConfig, str]:
    """Accepts a scenario file path or a preset name; returns (config, tag)."""
    if ref in scenario.PRESETS:
        return parse_scenario(preset_text(ref)), ref
    path = Path(ref)
    if not path.exists():
        raise ScenarioError(f"no such scenario file or preset: {ref!r}")
    cfg = parse_scenario(path.read_text())
    tag = hashlib.sha256(serialize(cfg).encode()).hexdigest()[:12]
    return cfg, tag


def run_one(cfg, tag: str, seed: int, out_root: str | Path,
            trace: bool = False) -> tuple:
    result = run_scenario(cfg, seed=seed, trace=trace)
    out_dir = Path(out_root) / tag / str(seed)
    stats.export(result.flows, result.link_util, result.mcs_counts, out_dir)
    if result.trace_text is not None:
        (out_dir / "trace.log").write_text(result.trace_text)
    return result, out_dir


def _sweep_worker(job):
    cfg_text, tag, seed, out_root, key, value = job
    cfg = parse_scenario(cfg_text)
    result, out_dir = run_one(cfg, tag, seed, out_root)
    metrics = {}
    for fid, acc in result.flows.items():
        row = {}
        for name, q in stats.QUANTILES:
            try:
                row[name] = acc.quantile(q) / 1_000.0
            except stats.InsufficientSamplesError:
                row[name] = None
        metrics[fid] = row
    return key, value, seed, metrics, str(out_dir)


def sweep_runs(cfg, tag: str, key: str, values: list[float], seeds: list[int],
               out_root: str | Path, jobs: int = 1):
    """Run |values| x |seeds| simulations, in parallel processes up to jobs."""
    jobs_list = []
    for value in values:
        derived = set_key(cfg, key, value) if key != "run.seed" else cfg
        vtag = f"{tag}_{key.replace('.', '-')}={value:g}"
        text = serialize(derived)
        run_seeds = [int(value)] if key == "run.seed" else seeds
        for seed in run_seeds:
            jobs_list.append((text, vtag, seed, str(out_root), key, value))
    if jobs > 1:
        with get_context("spawn").Pool(jobs) as pool:
            results = pool.map(_sweep_worker, jobs_list)
    else:
        results = [_sweep_worker(j) for j in jobs_list]
    return results


def _format_sweep_table(results) -> str:
    by_value: dict = {}
    for _key, value, seed, metrics, _out in results:
        for fid, row in metrics.items():
            by_value.setdefault((value, fid), []).append(row)
    lines = []
    for (value, fid) in sorted(by_value):
        rows = by_value[(value, fid)]
        parts = [f"value={value:g}", f"flow={fid}", f"seeds={len(rows)}"]
        for name, _q in stats.QUANTILES:
            vals = [r[name] for r in rows if r[name] is not None]
            if not vals:
                parts.append(f"{name}=na")
                continue
            parts.append(f"{name}_min={min(vals):.3f}")
            parts.append(f"{name}_median={statistics.median(vals):.3f}")
            parts.append(f"{name}_max={max(vals):.3f}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def _cmd_run(args) -> int:
    cfg, tag = _load_config(args.config)
    if args.duration is not None:
        cfg = replace(cfg, run=replace(cfg.run, duration_s=args.duration))
    seed = args.seed if args.seed is not None else cfg.run.seed
    result, out_dir = run_one(cfg, tag, seed, args.out, trace=args.trace)
    lines = stats.summary_lines(result.flows, result.link_util, result.mcs_counts)
    print("\n".join(lines))
    print(f"# seed={seed} events={result.events} wall_s={result.wall_s:.2f} "
          f"out={out_dir}", file=sys.stderr)
    return EXIT_OK

def _cmd_sweep(args) -> int:
    cfg, tag = _load_config(args.config)
    if args.duration is not None:
        cfg = replace(cfg, run=replace(cfg.run, duration_s=args.duration))
    values = [float(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ScenarioError("sweep needs a non-empty --values list")
    set_key(cfg, args.key, values[0])  # fail fast on a bad or non-numeric key
    seeds = [cfg.run.seed + i for i in range(args.seeds)]
    results = sweep_runs(cfg, tag, args.key, values, seeds, args.out, jobs=args.jobs)
    table = _format_sweep_table(results)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "sweep.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def _cmd_preset(args) -> int:
    text = preset_text(args.name)
    if args.print_text:
        print(text, end="")
    else:
        print(f"{args.name}: {len(text.splitlines())} lines; use --print to dump")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uhrsim",
                                description="WLAN reliability system-level simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("--config", required=True, help="scenario file or preset name")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--duration", type=float, default=None, help="seconds simulated")
    run_p.add_argument("--out", default="out")
    run_p.add_argument("--trace", action="store_true", help="dump an event trace")
    run_p.set_defaults(fn=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a parameter sweep over seeds")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--key", required=True, help="dotted scenario key, e.g. coordination.nulling_db")
    sweep_p.add_argument("--values", required=True, help="comma-separated numbers")
    sweep_p.add_argument("--seeds", type=int, default=1)
    sweep_p.add_argument("--duration", type=float, default=None)
    sweep_p.add_argument("--out", default="out")
    sweep_p.add_argument("--jobs", type=int,
                         default=int(os.environ.get("UHRSIM_JOBS", "1")))
    sweep_p.set_defaults(fn=_cmd_sweep)

    preset_p = sub.add_parser("preset", help="show a canned scenario")
    preset_p.add_argument("name")
    preset_p.add_argument("--print", dest="print_text", action="store_true")
    preset_p.set_defaults(fn=_cmd_preset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except stats.AuditError as e:
        print(f"audit failure: {e}", file=sys.stderr)
        return EXIT_AUDIT


if __name__ == "__main__":
    sys.exit(main())
