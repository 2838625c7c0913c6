"""Command line: ``abmsim run | validate | export-charts``.

Exit codes: 0 on success, 1 when a realization fails at run time, 2 for
configuration errors (bad scenario file or arguments).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pertussis, varicella
from .scenario import ScenarioError, parse_scenario
from .statechart import write_dot

log = logging.getLogger("abmsim")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep its wording
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abmsim", description="Agent-based epidemic simulation ensembles.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario ensemble and write outputs")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--seed", type=_seed, help="override the scenario's master seed")
    run.add_argument("--realizations", type=_positive, help="override the realization count")
    run.add_argument("--jobs", type=_positive, help="worker processes (default: $ABM_THREADS or 1)")
    run.add_argument("--quiet", action="store_true")

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--scenario", required=True, type=Path)

    exp = sub.add_parser("export-charts", help="write statechart topology as dot files")
    exp.add_argument("--pack", required=True, choices=["varicella", "pertussis"])
    exp.add_argument("--out", required=True, type=Path)
    return p


def _load(path: Path):
    try:
        return parse_scenario(path)
    except ScenarioError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    cfg = _load(args.scenario)
    if cfg is None:
        return EXIT_CONFIG
    upd = {}
    if args.seed is not None:
        upd["master_seed"] = args.seed
    if args.realizations is not None:
        upd["realizations"] = args.realizations
    if upd:
        cfg = cfg.model_copy(update=upd)
    from .runner import run_ensemble

    progress = None if args.quiet else (lambda msg: log.info(msg))
    try:
        manifest = run_ensemble(cfg, args.out, args.jobs, progress)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest["failures"]:
        for f in manifest["failures"]:
            print(f"realization {f['realization']} of arm {f['arm']} failed:\n{f['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        print(f"wrote {len(manifest['files'])} files to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args.scenario)
    if cfg is None:
        return EXIT_CONFIG
    print(f"{args.scenario}: ok ({cfg.model_pack}, {cfg.population_size} agents, "
          f"{cfg.realizations} realizations)")
    return EXIT_OK


def cmd_export(args) -> int:
    defs = varicella.chart_definitions() if args.pack == "varicella" else pertussis.chart_definitions()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, d in defs.items():
        write_dot(d, args.out / f"{name}.dot")
    print(f"wrote {len(defs)} charts to {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(asctime)s %(message)s",
    )
    handler = {"run": cmd_run, "validate": cmd_validate, "export-charts": cmd_export}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
