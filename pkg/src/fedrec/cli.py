"""Command-line interface.

Verbs:

* ``run``           — execute a training run from a config file and/or
                      ``key=value`` overrides.
* ``dry-run``       — resolve the config and print the predicted total
                      communication and computation cost without training.
* ``gen-synthetic`` — write a synthetic dataset in MovieLens format.
* ``report``        — join completed run directories into comparison tables.

Configuration comes only from files and flags; environment variables are
never consulted.
"""

from __future__ import annotations

import argparse
import sys

from . import data as data_mod
from . import experiment
from .config import parse_config


def _overrides(tokens: list[str]) -> dict:
    values = {}
    for token in tokens:
        if "=" not in token:
            raise SystemExit(f"expected key=value, got {token!r}")
        key, raw = token.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument(
        "overrides", nargs="*", metavar="key=value",
        help="config overrides; flags win over file values",
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedrec")
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="execute a training run")
    _add_config_args(run_p)

    dry_p = sub.add_parser("dry-run", help="resolve config and predict costs")
    _add_config_args(dry_p)

    gen_p = sub.add_parser("gen-synthetic", help="write a synthetic dataset")
    gen_p.add_argument("out", help="output ratings file (MovieLens format)")
    gen_p.add_argument("overrides", nargs="*", metavar="key=value")

    rep_p = sub.add_parser("report", help="aggregate completed runs")
    rep_p.add_argument("--out", required=True, help="directory for report CSVs")
    rep_p.add_argument("runs", nargs="+", help="completed run directories")

    args = parser.parse_args(argv)
    try:
        if args.verb == "run":
            cfg = parse_config(args.config, _overrides(args.overrides))
            out = experiment.run(cfg)
            print(f"run complete: {out}")
        elif args.verb == "dry-run":
            cfg = parse_config(args.config, _overrides(args.overrides))
            info = experiment.dry_run(cfg)
            print(info["config_text"], end="")
            print(f"config_hash = {info['config_hash']}")
            for key in ("params_down", "params_up", "indices_up",
                        "bytes_down", "bytes_up", "total_bytes", "flops"):
                print(f"predicted_{key} = {info[key]}")
        elif args.verb == "gen-synthetic":
            overrides = _overrides(args.overrides)
            overrides["dataset"] = "synthetic"
            overrides["feedback"] = "explicit"  # always persist raw ratings
            cfg = parse_config(None, overrides)
            matrix = experiment.load_full_matrix(cfg)
            data_mod.write_movielens(matrix, args.out)
            print(
                f"wrote {matrix.num_entries} ratings for {matrix.num_users} users x "
                f"{matrix.num_items} items (sparsity {matrix.sparsity:.4f}) to {args.out}"
            )
        elif args.verb == "report":
            paths = experiment.emit_report(args.runs, args.out)
            for name, path in paths.items():
                print(f"{name}: {path}")
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
