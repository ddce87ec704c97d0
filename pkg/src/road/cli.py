"""Command-line entry point: ``road run|compare|export|theory``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from road.config import ExperimentConfig, load_config
from road.harness import (ExperimentError, compare_strategies, export_metrics, load_records, run_experiment,
                          summarize, to_jsonable, write_comparison)
from road.replay import EmptySourceError


class CliError(Exception):
    def __init__(self, reason: str, message: str, details=None):
        super().__init__(message)
        self.reason = reason
        self.details = details


def _emit(doc) -> None:
    # non-finite floats become strings so the output stays strict JSON
    sys.stdout.write(json.dumps(to_jsonable(doc), indent=2, default=_default, allow_nan=False) + "\n")


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _seed_override(cfg: ExperimentConfig, n_seeds: int | None) -> list[int]:
    env = os.environ.get("ROAD_SEED")
    if env is not None:
        try:
            seeds = [int(s) for s in env.replace(",", " ").split()]
        except ValueError:
            raise CliError("bad_seed", f"ROAD_SEED must be integers, got {env!r}") from None
        if not seeds:
            raise CliError("bad_seed", "ROAD_SEED is empty")
    else:
        seeds = list(cfg.seeds)
    if n_seeds is not None:
        if n_seeds < 1:
            raise CliError("bad_seed", f"--seeds must be >= 1, got {n_seeds}")
        # extend with consecutive integers past the last configured seed
        while len(seeds) < n_seeds:
            seeds.append(seeds[-1] + 1)
        seeds = seeds[:n_seeds]
    return seeds


def _load(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing_file", f"config not found: {path}")
    try:
        return load_config(p)
    except json.JSONDecodeError as exc:
        raise CliError("invalid_json", f"{path}: {exc}") from exc
    except ValidationError as exc:
        errors = [{"loc": ".".join(str(x) for x in e["loc"]), "msg": e["msg"]} for e in exc.errors()]
        raise CliError("invalid_config", f"{path}: {exc.error_count()} schema error(s)", errors) from exc


def cmd_run(args) -> dict:
    cfg = _load(args.config)
    seeds = _seed_override(cfg, args.seeds)
    records = run_experiment(cfg, seeds, workers=args.workers)
    out = Path(args.out or cfg.output_dir) / cfg.name
    paths = export_metrics(records, out, cfg.heatmap_bucket)
    (out / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n")
    return {"status": "ok", "out": str(out), "seeds": seeds, "summary": summarize(records),
            "files": {k: str(v) for k, v in paths.items()}}


def cmd_compare(args) -> dict:
    cfgs = [_load(p) for p in args.configs]
    seeds = _seed_override(cfgs[0], args.seeds)
    table = compare_strategies(cfgs, seeds, workers=args.workers)
    out = Path(args.out or cfgs[0].output_dir) / "compare"
    paths = write_comparison(table, out)
    return {"status": "ok", "out": str(out), "seeds": seeds, "rows": table["rows"],
            "files": {k: str(v) for k, v in paths.items()}}


def cmd_export(args) -> dict:
    run_dir = Path(args.run)
    if not (run_dir / "records.json").is_file():
        raise CliError("missing_file", f"no records.json under {run_dir}")
    records = load_records(run_dir)
    paths = export_metrics(records, args.out or run_dir, args.bucket)
    return {"status": "ok", "out": str(args.out or run_dir), "files": {k: str(v) for k, v in paths.items()}}


def cmd_grad_check(args) -> dict:
    from road.theory import gradient_check

    rows = gradient_check(args.fixtures, seed=args.seed)
    worst = max(r["relative_error"] for r in rows)
    return {"status": "ok", "n_fixtures": len(rows), "max_rel_error": worst,
            "passed": bool(worst <= args.tol), "tolerance": args.tol, "fixtures": rows}


def cmd_bias_check(args) -> dict:
    from road.theory import bias_check

    return {"status": "ok", **bias_check(args.draws, seed=args.seed)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="road", description="Adaptive offline/online replay mixing at tabular scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config over its seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=None, help="number of seeds to run")
    p.add_argument("--out", default=None, help="output root (default: config output_dir)")
    p.add_argument("--workers", type=int, default=1, help="processes for running seeds in parallel")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several strategy configs on the same environment")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="re-export CSV tables and figures from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--bucket", type=int, default=10)
    p.set_defaults(func=cmd_export)

    theory = sub.add_parser("theory", help="numerical checks of the gradient and bias results")
    tsub = theory.add_subparsers(dest="check", required=True)
    p = tsub.add_parser("grad-check")
    p.add_argument("--fixtures", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    p = tsub.add_parser("bias-check")
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bias_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        _emit({"status": "error", "reason": "usage", "message": "invalid command line"})
        return 2
    try:
        _emit(args.func(args))
        return 0
    except CliError as exc:
        doc = {"status": "error", "reason": exc.reason, "message": str(exc)}
        if exc.details is not None:
            doc["details"] = exc.details
    except ExperimentError as exc:
        doc = {"status": "error", "reason": exc.reason, "message": str(exc)}
    except EmptySourceError as exc:
        doc = {"status": "error", "reason": "empty_source", "message": str(exc)}
    except (ValueError, OSError) as exc:
        doc = {"status": "error", "reason": type(exc).__name__, "message": str(exc)}
    _emit(doc)
    return 1


if __name__ == "__main__":
    sys.exit(main())
