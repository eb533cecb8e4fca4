"""Command-line entry point: ``trajguide {gen-world,run,report,sweep}``.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, load_config, with_overrides
from .evaluation import (
    GROUP_KEYS,
    aggregate,
    build_suite,
    init_distance_curve,
    mismatch_curve,
    result_record,
    run_episode,
    run_suite,
)
from .world import WorldParams, generate_world

SCHEMA = "trajguide-episode v1"
REPORT_COLUMNS = ("task", "init", "camera_mode", "controller", "SR", "SPL", "n",
                  "mean_steps", "mean_collisions")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("trajguide")


class InvariantError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k) for k in columns})
    return buf.getvalue()


def _markdown(rows: list[dict], columns) -> str:
    def fmt(v):
        return f"{v:.3f}" if isinstance(v, float) else str(v)
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(fmt(r.get(c)) for c in columns) + " |" for r in rows]
    return "\n".join(lines)


def episodes_jsonl(records: list[dict]) -> str:
    records = sorted(records, key=lambda r: r["episode_id"])
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def jsonl_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def read_records(paths) -> list[dict]:
    records = []
    for path in paths:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: corrupt JSON ({exc.msg})") from exc
                if rec.get("schema") != SCHEMA:
                    raise ValueError(f"{path}:{lineno}: schema {rec.get('schema')!r}, expected {SCHEMA!r}")
                records.append(rec)
    return records


def _check_results(results) -> None:
    for r in results:
        if r.valid and (r.path_length < 0 or (r.success and r.min_distance > 1e9)):
            raise InvariantError(f"episode {r.episode_id} violates result invariants")


def _execute(configs, run, out: Path) -> list[dict]:
    results = run_suite(configs, run.workers, trace=False)
    _check_results(results)
    by_id = {c.episode_id: c for c in configs}
    records = []
    for r in results:
        rec = result_record(by_id[r.episode_id], r)
        rec["schema"] = SCHEMA
        records.append(rec)
    if run.trace:
        lines = []
        for c in configs:
            res = run_episode(c, trace=True)
            lines += [json.dumps({"episode_id": c.episode_id, **json.loads(t)}) + "\n"
                      for t in res.step_trace]
        _write_text(out / "traces.jsonl", "".join(lines))
    return records


def _report(records: list[dict], out: Path | None, keys=GROUP_KEYS, curves: bool = True) -> str:
    rows = aggregate(records, keys)
    columns = tuple(keys) + REPORT_COLUMNS[4:]
    table = _markdown(rows, columns)
    if out is not None:
        _write_text(out / "report.csv", _csv_text(rows, columns))
        if curves:
            _write_text(out / "sr_vs_init_distance.csv",
                        _csv_text(init_distance_curve(records), ("bucket_start", "n", "SR")))
            _write_text(out / "sr_vs_mismatch.csv",
                        _csv_text(mismatch_curve(records), ("parameter", "magnitude", "n", "SR")))
    return table


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_world(args) -> int:
    params = WorldParams(width=args.width, height=args.height, cell_size=args.cell_size,
                         density=args.density, obstacle_height=args.obstacle_height)
    world = generate_world(args.seed, params)
    world.save(args.out)
    occ = world.occupancy
    print(f"world {world.width}x{world.height} cells of {world.cell_size} m, "
          f"interior obstacle fraction {occ[1:-1, 1:-1].mean():.3f}, "
          f"largest free component {world.free_component.sum() / (~occ).sum():.3f}")
    return EXIT_OK


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, workers=args.workers, master_seed=args.seed,
                          out=args.out, trace=True if args.trace else None)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(cfg.run.out)
    configs = build_suite(cfg.suite)
    records = _execute(configs, cfg.run, out)
    text = episodes_jsonl(records)
    _write_text(out / "episodes.jsonl", text)
    _write_text(out / "config.toml", dump_config(cfg))
    invalid = sum(not r["valid"] for r in records)
    print(_report(records, out))
    print(f"\n{len(records)} episodes ({invalid} invalid), sha256 {jsonl_digest(text)[:16]}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(cfg.run.out)
    sweep = cfg.sweep
    if args.parameter:
        sweep = replace(sweep, parameter=args.parameter)
    if args.magnitudes:
        sweep = replace(sweep, magnitudes=tuple(float(m) for m in args.magnitudes.split(",")))
    cfg = RunConfig(cfg.run, cfg.suite, sweep)
    base = build_suite(cfg.suite)
    configs = []
    for i, mag in enumerate(sweep.magnitudes):
        for c in base:
            configs.append(replace(c, episode_id=i * len(base) + c.episode_id, camera_mode="sweep",
                                   sweep_parameter=sweep.parameter, sweep_magnitude=float(mag)))
    records = _execute(configs, cfg.run, out)
    _write_text(out / "episodes.jsonl", episodes_jsonl(records))
    _write_text(out / "config.toml", dump_config(cfg))
    rows = aggregate(records, ("sweep_parameter", "sweep_magnitude"))
    columns = ("sweep_parameter", "sweep_magnitude", "SR", "SPL", "n", "mean_steps", "mean_collisions")
    _write_text(out / "sweep.csv", _csv_text(rows, columns))
    print(_markdown(rows, columns))
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_records(args.inputs)
    if not records:
        raise ValueError("no episodes in the input files")
    keys = tuple(args.group_by.split(",")) if args.group_by else GROUP_KEYS
    unknown = [k for k in keys if k not in records[0]["config"]]
    if unknown:
        raise ConfigError(f"unknown group-by key(s): {', '.join(unknown)}")
    out = Path(args.out) if args.out else None
    print(_report(records, out, keys, curves=not args.no_curves))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajguide", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a procedural world file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    defaults = WorldParams()
    p.add_argument("--width", type=int, default=defaults.width)
    p.add_argument("--height", type=int, default=defaults.height)
    p.add_argument("--cell-size", type=float, default=defaults.cell_size)
    p.add_argument("--density", type=float, default=defaults.density)
    p.add_argument("--obstacle-height", type=float, default=defaults.obstacle_height)
    p.set_defaults(func=cmd_gen_world)

    for name, func, help_ in (("run", cmd_run, "run an evaluation suite"),
                              ("sweep", cmd_sweep, "per-parameter camera mismatch sweep")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--trace", action="store_true", help="also write guidance traces")
        if name == "sweep":
            p.add_argument("--parameter", choices=("fov", "aspect", "height"))
            p.add_argument("--magnitudes", help="comma-separated offsets (fov in degrees)")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="recompute SR/SPL tables from episode files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="directory for report.csv and curve series")
    p.add_argument("--group-by", help="comma-separated config keys")
    p.add_argument("--no-curves", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        # bad input data: corrupt files, schema mismatch, invalid parameters
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command in ("gen-world", "run", "sweep") else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
