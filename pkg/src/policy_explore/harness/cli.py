"""Command line entry point.

    policy-explore run <preset> [--config FILE] [--override k=v ...] [--out CSV]
    policy-explore tune <preset> [--config FILE] [--override k=v ...] [--write YAML]
    policy-explore validate [--out CSV] [--seed N] [--mutate NAME]
    policy-explore export-env <preset> --out JSON [--config FILE] [--override k=v ...] [--seed N]

Exit codes: 0 success, 1 a cell or property failed, 2 bad configuration.
The worker count comes from ``--workers`` or the POLICY_EXPLORE_WORKERS
environment variable (default 1).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from ..envs import gen_contextual_bandit, save_instance
from ..estimators import Stream, make_rng
from ..exceptions import ConfigError, PolicyExploreError
from .config import Preset, build_config
from .presets import Cell, build_lqr, make_row
from .runner import WORKERS_ENV, format_summary, run_preset, tune, worker_count, write_csv

log = logging.getLogger("policy_explore")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _config_args(p: argparse.ArgumentParser, positional_preset=True):
    if positional_preset:
        p.add_argument("preset", help="|".join(x.value for x in Preset))
    p.add_argument("--config", type=Path, help="YAML document layered over the preset defaults")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted key, YAML value; may be repeated (e.g. env.b=[10,100])")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="policy-explore", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--workers", type=int, default=None, help=f"process count (default ${WORKERS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every cell of a preset and write the CSV")
    _config_args(p)
    p.add_argument("--out", type=Path, help="CSV path (default results/<preset>.csv)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the '# generated' header line")

    p = sub.add_parser("tune", help="grid search on the tuning seeds")
    _config_args(p)
    p.add_argument("--write", type=Path, help="write the selected hyperparams as a YAML config")

    p = sub.add_parser("validate", help="run the property suite")
    p.add_argument("--out", type=Path, help="CSV report path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutate", default=None, help="corrupt an estimator to check the suite catches it")
    p.add_argument("--only", action="append", default=None, metavar="PROPERTY")
    p.add_argument("--no-timestamp", action="store_true")

    p = sub.add_parser("export-env", help="serialize a preset's environment instance to versioned JSON")
    _config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None, help="data seed for bandit instances (default: first seed)")
    return parser


def cmd_run(args) -> int:
    cfg = build_config(args.preset, args.config, args.override)
    out = args.out or Path("results") / f"{cfg.preset.value}.csv"
    outcome = run_preset(cfg, out, workers=args.workers, timestamp=not args.no_timestamp)
    print(format_summary(outcome.summary))
    print(f"wrote {out} ({len(outcome.rows)} rows)")
    if outcome.failures:
        print(f"{len(outcome.failures)} cell(s) failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = build_config(args.preset, args.config, args.override)
    result = tune(cfg, workers=args.workers)
    for (alg, key), table in result.scores.items():
        print(f"{alg} [{key}]")
        for params, score in table:
            mark = "*" if params == result.best[alg][key] else " "
            print(f"  {mark} {score:>14.6g}  {params}")
    if args.write:
        doc = {"preset": cfg.preset.value, "hyperparams": {
            alg: {key: dict(cfg.hyperparams_for(alg, key), **params) for key, params in table.items()}
            for alg, table in result.best.items()}}
        args.write.parent.mkdir(parents=True, exist_ok=True)
        args.write.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
        print(f"wrote {args.write}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import PROPERTIES, format_report, run_property

    names = args.only or list(PROPERTIES)
    unknown = [n for n in names if n not in PROPERTIES]
    if unknown:
        raise ConfigError(f"unknown properties {unknown}")
    results = [run_property(n, args.seed, args.mutate) for n in names]
    print(format_report(results))
    if args.out:
        rows = []
        for r in results:
            cell = Cell(Preset.VALIDATE_PROPERTIES.value, r.name, args.seed, "default", {},
                        {}, {}, {"mutation": args.mutate})
            rows += [make_row(cell, 0, "measured", r.measured), make_row(cell, 0, "bound", r.bound),
                     make_row(cell, 0, "passed", 1.0 if r.passed else 0.0)]
        write_csv(rows, args.out, timestamp=not args.no_timestamp)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} propert{'y' if len(failed) == 1 else 'ies'} failed: {', '.join(failed)}",
              file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_export_env(args) -> int:
    cfg = build_config(args.preset, args.config, args.override)
    point = cfg.env_points()[0]
    if cfg.preset in (Preset.HORIZON_SWEEP, Preset.LQR_NOISE_SWEEP):
        obj = build_lqr(point, int(point["H"]), float(point.get("noise_cov", 0.0)))
    elif cfg.preset is Preset.BANDIT_D_VS_P:
        seed = cfg.seeds[0] if args.seed is None else args.seed
        obj = gen_contextual_bandit(make_rng(seed, Stream.DATA), int(point["b"]), int(point["K"]),
                                    int(point["n_train"]), int(point["n_test"]),
                                    separation=float(point["separation"]), noise=float(point["noise"]))
    else:
        raise ConfigError(f"{cfg.preset.value} has no serializable environment")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(obj, args.out)
    print(f"wrote {args.out} ({cfg.cell_key(point)})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "tune": cmd_tune, "validate": cmd_validate, "export-env": cmd_export_env}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.workers is None:
            args.workers = worker_count()
        elif args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PolicyExploreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
