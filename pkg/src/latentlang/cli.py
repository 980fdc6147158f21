"""Command-line front end: phased experiment runs and report tables.

Every subcommand assembles one ExperimentConfig from (optional) config
file, convenience flags, and key=value overrides, then drives the
corresponding runner phase. Exit status is 0 only when the phase and
all audits embedded in it complete; contract violations, stale
artifacts, and bad configs exit nonzero with the reason on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import DOMAINS, METHODS, ExperimentConfig, read_config_file
from .errors import ContractError
from . import runner

__all__ = ["main", "build_parser"]


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--domain", choices=DOMAINS)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--annotations", choices=("natural", "formal"),
                   dest="annotations", help="annotation mode for the corpus")
    p.add_argument("--samples", type=int,
                   help="hypothesis sample budget k per task")
    p.add_argument("--oracle-engine", action="store_true",
                   help="execute selected programs with the symbolic engine "
                        "(strings; implies method l3-oracle-engine)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="override any config field")
    p.add_argument("--data-dir", default=None,
                   help="artifact root (default: $L3_DATA_DIR or ./l3-data)")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values: dict[str, str] = {}
    if args.config:
        values.update(read_config_file(args.config))
    if args.domain:
        values["domain"] = args.domain
    if args.method:
        values["method"] = args.method
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.annotations:
        values["annotation_mode"] = args.annotations
    if args.samples is not None:
        values["k"] = str(args.samples)
    if args.oracle_engine:
        values["method"] = "l3-oracle-engine"
        values.setdefault("annotation_mode", "formal")
    for item in args.overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ContractError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = val.strip()
    return ExperimentConfig.from_mapping(values).resolve()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="latentlang",
        description="Concept learning with natural-language hypothesis "
                    "spaces: data generation, training, evaluation, reports.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, summary in (
            ("gen-data", "generate and audit a task corpus"),
            ("pretrain", "train shared parameters on the language split"),
            ("concept-learn", "sample, score, and select hypotheses"),
            ("eval", "evaluate selections (or a baseline); write the report"),
            ("run", "all phases: gen-data, pretrain, concept-learn, eval")):
        sp = sub.add_parser(name, help=summary)
        _add_config_args(sp)

    rp = sub.add_parser("report", help="metrics table CSV from run reports")
    rp.add_argument("runs", nargs="+", help="run directories or report.json")
    rp.add_argument("--out", default="table.csv", help="output CSV path")

    cp = sub.add_parser("compare",
                        help="paired bootstrap ordering between runs")
    cp.add_argument("runs", nargs="+", help="run directories or report.json")
    cp.add_argument("--split", default="test")
    return p


def _cmd_report(args: argparse.Namespace) -> None:
    reports = [runner.load_report(r) for r in args.runs]
    rows, orderings = runner.report_table(reports)
    runner.write_table_csv(args.out, rows)
    for row in rows:
        print("{domain:8s} {method:24s} seed={seed} {split:10s} "
              "{metric}={value:.4f} (n={n_tasks})".format(**row))
    for o in orderings:
        if "error" in o:
            print(f"{o['domain']:8s} comparison skipped: {o['error']}")
        else:
            print(f"{o['domain']:8s} {o['a']} vs {o['b']}: "
                  f"diff={o['mean_diff']:+.4f} "
                  f"ci=[{o['ci_low']:+.4f}, {o['ci_high']:+.4f}] "
                  f"-> {o['verdict']}")
    print(f"wrote {args.out}")


def _cmd_compare(args: argparse.Namespace) -> None:
    from .baselines import compare
    reports = [runner.load_report(r) for r in args.runs]
    table = compare(reports, split=args.split)
    print(json.dumps(table, indent=1, sort_keys=True))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            _cmd_report(args)
        elif args.command == "compare":
            _cmd_compare(args)
        else:
            cfg = _config_from_args(args)
            root = args.data_dir
            if args.command == "gen-data":
                out = runner.gen_data(cfg, root)
                print(f"corpus written to {out}")
            elif args.command == "pretrain":
                rd = runner.pretrain(cfg, root)
                print(f"checkpoint in {rd}")
            elif args.command == "concept-learn":
                rd = runner.concept_phase(cfg, root)
                print(f"selections in {rd}")
            elif args.command == "eval":
                rep = runner.eval_phase(cfg, root)
                _print_report(cfg, rep, root)
            else:
                rep = runner.run(cfg, root)
                _print_report(cfg, rep, root)
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def _print_report(cfg: ExperimentConfig, rep: dict, root) -> None:
    for split, metrics in rep["splits"].items():
        for metric, value in metrics.items():
            print(f"{cfg.domain}/{cfg.method} seed={cfg.seed} "
                  f"{split} {metric}={value:.4f}")
    rd = runner.run_dir(cfg, root)
    print(f"report in {rd}" if rep.get("curve_csv") is None
          else f"report + curve in {rd}")


if __name__ == "__main__":
    sys.exit(main())
