# src/cli.py
"""
Command-line interface for watlab.

Examples:
  python3 -m src.cli run config/experiment.json
  python3 -m src.cli run config/experiment.json --seeds 0 1 --run-dir runs/quick
  python3 -m src.cli sweep-eta config/experiment.json --etas 0.01 0.5
  python3 -m src.cli report runs/hard_class_linear-001 --format csv
  python3 -m src.cli audit runs/hard_class_linear-001
  python3 -m src.cli golden-rho

Exit status: 0 success, 1 config/input error, 2 runtime failure.
"""

import argparse
import logging
import sys

from . import main as runner
from . import report as report_mod
from .error_kinds import INPUT_KINDS, LabError
from .experiment_config import DEFAULT_CONFIG_PATH
from .golden import golden_rho_rows
from .logging_setup import setup_logging

LOG = logging.getLogger("watlab.cli")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2


def build_parser():
    p = argparse.ArgumentParser(prog="watlab")
    p.add_argument("--log-level", default=None, help="Overrides WATLAB_LOG_LEVEL")
    sub = p.add_subparsers(dest="cmd")

    r = sub.add_parser("run", help="Train and evaluate every configured method")
    r.add_argument("config", nargs="?", default=DEFAULT_CONFIG_PATH)
    r.add_argument("--run-dir", default=None, help="Output directory (default: next free dir under WATLAB_RUNS_DIR)")
    r.add_argument("--seeds", type=int, nargs="+", default=None, help="Override the config's seeds")

    s = sub.add_parser("sweep-eta", help="One WAT run per eta, compared against the baseline")
    s.add_argument("config", nargs="?", default=DEFAULT_CONFIG_PATH)
    s.add_argument("--etas", type=float, nargs="+", default=None)
    s.add_argument("--run-dir", default=None)

    rep = sub.add_parser("report", help="Re-render tables from a stored run")
    rep.add_argument("run_dir")
    rep.add_argument("--format", choices=report_mod.FORMATS, default="markdown")

    a = sub.add_parser("audit", help="Re-run the no-regret auditors on a stored run")
    a.add_argument("run_dir")

    sub.add_parser("golden-rho", help="Recompute rho for the published tables")

    return p


def _section(title):
    print()
    print("=" * 60)
    print(title)
    print("=" * 60)


def cmd_run(args):
    record, run_dir = runner.run_experiment(args.config, run_dir=args.run_dir, seeds=args.seeds)
    for entry in record["seeds"]:
        _section(f"Seed {entry['seed']}")
        for line in report_mod.accuracy_table_markdown(entry):
            print(line)
    print()
    print(f"run directory: {run_dir}")
    if record["status"] != "ok":
        print("one or more methods failed; see record.json")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args):
    table, run_dir = runner.sweep_eta(args.config, etas=args.etas, run_dir=args.run_dir)
    _section("eta sweep")
    print(table.to_string(index=False))
    print()
    print(f"run directory: {run_dir}")
    if (table["status"] != "ok").any():
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args):
    for path in report_mod.emit_report(args.run_dir, args.format):
        print(path)
    return EXIT_OK


def cmd_audit(args):
    result = runner.audit_run(args.run_dir)
    _section(f"Audit of {args.run_dir}")
    if not result["runs"]:
        print("no Hedge-driven training records with eta > 0")
    for r in result["runs"]:
        nr = r["no_regret"]
        print(
            f"seed={r['seed']} method={r['method']} lhs={nr['lhs']:.6f} rhs={nr['rhs']:.6f} "
            f"inequality={'holds' if nr['inequality_holds'] else 'violated'} "
            f"premise={'all' if all(nr['premise_holds']) else 'partial'} "
            f"lemma={'holds' if r['lemma_holds'] else 'violated'}"
        )
    print(f"violations with premises holding: {result['violations']}")
    return EXIT_RUNTIME if result["violations"] else EXIT_OK


def cmd_golden(args):
    rows = golden_rho_rows()
    _section("Published rho, recomputed")
    current = None
    for row in rows:
        if row.table != current:
            current = row.table
            print(f"\n[{current}]")
        flag = "ok"
        if row.erratum:
            flag = "erratum"
        elif not row.matches:
            flag = "MISMATCH"
        print(
            f"  {row.method:<10} {row.column:<4} avg={row.average:6.2f} worst={row.worst:5.1f} "
            f"printed={row.printed:+.3f} computed={row.computed:+.3f} {flag}"
        )
    bad = [r for r in rows if not r.ok]
    errata = [r for r in rows if r.erratum]
    print()
    print(f"{len(rows)} cells, {len(errata)} known errata, {len(bad)} unexpected")
    return EXIT_OK if not bad else EXIT_RUNTIME


COMMANDS = {
    "run": cmd_run,
    "sweep-eta": cmd_sweep,
    "report": cmd_report,
    "audit": cmd_audit,
    "golden-rho": cmd_golden,
}


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]

    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    if args.cmd is None:
        parser.print_help()
        return EXIT_INPUT

    try:
        return COMMANDS[args.cmd](args)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.kind in INPUT_KINDS else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
