"""Command-line entry point: ``meshlearn {run,validate,reconstruct,report}``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from collections import defaultdict
from pathlib import Path

from .config import ConfigError, from_dict, merge, paper_defaults
from .harness import RunError, run_experiment, summarize
from .nn import MLP, FlatParams, FingerprintError
from .problems.mapping import load_grid_map, reconstruct

def _load(args):
    if args.config and args.paper_defaults:
        raise ConfigError(["--config and --paper-defaults are mutually exclusive"])
    if args.paper_defaults:
        raw = paper_defaults(args.paper_defaults)
    elif args.config:
        import yaml
        try:
            raw = yaml.safe_load(Path(args.config).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError([f"cannot parse {args.config}: {exc}"]) from exc
    else:
        raise ConfigError(["one of --config or --paper-defaults is required"])
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides.update(data_seed=args.seed, init_seed=args.seed, stream_seed=args.seed + 1)
    for flag in ("workers", "out_dir", "log_interval", "rounds"):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[flag] = v
    if overrides and isinstance(raw, dict):
        raw = merge(raw, {"run": {**(raw.get("run") or {}), **overrides}})
    return from_dict(raw)


def _config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--paper-defaults", choices=["mnist-like", "mapping", "theorem1"],
                   help="start from a bundled preset instead of a file")


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok: {cfg.algorithm.name} on {cfg.problem.kind}, {cfg.run.robots} robots, {cfg.run.rounds} rounds")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    if cfg.run.out_dir is None:
        raise ConfigError(["run needs --out-dir (or run.out_dir in the config)"])
    res = run_experiment(cfg)
    final = [r for r in res.rows if r.round == res.rows[-1].round]
    print(f"wrote {Path(cfg.run.out_dir) / 'metrics.csv'} ({len(res.rows)} rows)")
    _print_summary(final)
    return 0


def _print_summary(final_rows):
    k = final_rows[0].round
    val = summarize([r.val_loss for r in final_rows])
    print(f"round {k}: val_loss mean {val['mean']:.6g} min {val['min']:.6g} max {val['max']:.6g}")
    accs = [r.val_acc for r in final_rows]
    if not any(math.isnan(a) for a in accs):
        acc = summarize(accs)
        print(f"round {k}: val_acc mean {acc['mean']:.6g} min {acc['min']:.6g} max {acc['max']:.6g}")
    print(f"round {k}: consensus_err {final_rows[0].consensus_err:.6g}")


def cmd_report(args) -> int:
    by_round = defaultdict(list)
    with open(args.metrics, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "consensus_err" not in reader.fieldnames:
            raise ValueError(f"{args.metrics} is not a metrics CSV")
        for row in reader:
            by_round[int(row["round"])].append(row)
    if not by_round:
        raise ValueError(f"{args.metrics} has no rows")
    rows = by_round[max(by_round)]

    class _R:  # lightweight view so report and run share the printer
        def __init__(self, d):
            self.round = int(d["round"])
            self.val_loss = float(d["val_loss"])
            self.val_acc = float(d["val_acc"])
            self.consensus_err = float(d["consensus_err"])

    _print_summary([_R(r) for r in rows])
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load(args)
    if cfg.problem.kind != "mapping":
        raise ConfigError(["reconstruct needs a mapping config"])
    arch = cfg.arch()
    buf = Path(args.checkpoint).read_bytes()
    params = FlatParams.from_bytes(buf, arch.fingerprint, expected_dim=arch.dim)
    grid = load_grid_map(cfg.problem.map_file)
    rows = args.rows or grid.rows
    cols = args.cols or grid.cols
    model = MLP(arch)
    table = reconstruct(lambda pts: model.predict(params.theta, pts), grid, rows, cols)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        fh.write("x,y,density\n")
        for x, y, d in table:
            fh.write(f"{x:.9g},{y:.9g},{d:.9g}\n")
    print(f"wrote {out} ({rows}x{cols})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshlearn", description="Distributed training simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write metrics.csv + checkpoints")
    _config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--log-interval", type=int)
    p.add_argument("--rounds", type=int, help="override run.rounds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config and list every violation")
    _config_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("reconstruct", help="dump a mapping checkpoint's density on a grid")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("report", help="summarize the final round of a metrics CSV")
    p.add_argument("metrics")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RunError, FingerprintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
