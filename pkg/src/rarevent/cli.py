"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 computation
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data import SchemaConfig, emit_csv, ingest_csv
from .errors import ConfigError, ConfigParse, DataError, RareventError
from .experiment import (
    ProtocolSpec,
    load_config,
    load_panel,
    load_synth_config,
    run,
)
from .resampling import SpecOrderWarning, parse_spec
from .synth import SynthConfig, simulate
from .validation import PROTOCOLS, Recipe, evaluate, rate_sweep

def _protocol(text: str) -> ProtocolSpec:
    try:
        return ProtocolSpec.parse(text)
    except ValueError as exc:
        raise ConfigParse(0, str(exc)) from None


def _data_panel(path: str, horizon_start: int | None):
    if not Path(path).is_file():
        raise DataError(f"no such data file: {path}")
    return ingest_csv(path, SchemaConfig(horizon_start=horizon_start))


def cmd_run(args) -> int:
    config = load_config(args.config).with_overrides(args.seed, args.jobs, args.out_dir)
    result = run(config)
    for e in result.errors:
        print(f"error: {e['recipe']} / {e['protocol']}: {e['error']}: {e['message']}", file=sys.stderr)
    print(f"wrote {len(result.artifacts)} artifacts to {result.out_dir}")
    return result.exit_code


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    res = simulate(cfg)
    emit_csv(res.panel, args.output)
    if args.truth:
        Path(args.truth).write_text(json.dumps(res.truth.to_dict(), indent=1) + "\n", encoding="utf-8")
    rate = float(res.panel.outcomes.mean())
    print(f"wrote {len(res.panel)} records to {args.output} (event rate {rate:.4f}, "
          f"evaluation from time {res.panel.horizons[0]})")
    return 0


def cmd_eval(args) -> int:
    panel = _data_panel(args.data, args.horizon_start)
    proto = _protocol(args.protocol)
    boundary = args.boundary if args.boundary is not None else proto.boundary
    recipe = Recipe(parse_spec(args.spec), args.K, args.seed or 0)
    report = evaluate(panel, proto.name, recipe, boundary)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        report.roc().to_csv(out / "roc.csv")
    summary = {"protocol": str(proto), "spec": str(recipe.spec), "K": recipe.K}
    summary.update(report.to_dict(include_pairs=False))
    del summary["per_step_diagnostics"]
    print(json.dumps(summary, indent=1))
    return 0


def cmd_sweep(args) -> int:
    if args.data:
        panel = _data_panel(args.data, args.horizon_start)
    else:
        panel = load_panel(load_config(args.config))
    proto = _protocol(args.protocol)
    grid = [parse_spec(g) for g in args.grid]
    table = rate_sweep(panel, grid, R=args.repeats, K=args.K, seed=args.seed or 0,
                       protocol=proto.name, boundary=proto.boundary, on_error="record",
                       jobs=args.jobs or 1)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep.{proto.slug}.csv"
    table.to_csv(path)
    failed = [r for r in table.rows if r.error]
    for r in failed:
        print(f"error: {r.spec}: {r.error}", file=sys.stderr)
    print(f"wrote {path}")
    return 4 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rarevent", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--seed", type=int, help="override the base seed")
        if jobs:
            sp.add_argument("--jobs", type=int, help="worker processes for repeats")
        sp.add_argument("--out-dir", help="artifact directory")

    sp = sub.add_parser("run", help="run an experiment config")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("synth", help="generate a synthetic panel as CSV")
    sp.add_argument("config", nargs="?", help="experiment config or bare synth settings (YAML)")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--truth", help="also write the generating coefficients as JSON")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="evaluate one sampler spec on a CSV panel")
    sp.add_argument("--data", required=True)
    sp.add_argument("--spec", default="id")
    sp.add_argument("--protocol", default="longitudinal",
                    help=f"one of {', '.join(PROTOCOLS)} or split(<time>)")
    sp.add_argument("--boundary", type=int)
    sp.add_argument("-K", type=int, default=1, help="ensemble size")
    sp.add_argument("--horizon-start", type=int, help="first evaluated time index")
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="repeat a grid of sampler specs and tabulate")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--config", help="take the input from an experiment config")
    sp.add_argument("--grid", nargs="+", required=True, metavar="SPEC")
    sp.add_argument("--repeats", type=int, default=15)
    sp.add_argument("-K", type=int, default=1)
    sp.add_argument("--protocol", default="longitudinal")
    sp.add_argument("--horizon-start", type=int)
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    warnings.simplefilter("default", SpecOrderWarning)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except RareventError as exc:
        print(f"computation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
