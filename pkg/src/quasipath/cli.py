"""Command line entry point.

``quasipath <command> --config FILE --out DIR [--seed N]``. Exit status is
0 when all checks pass, 2 when an acceptance check fails and 1 on error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import QuasipathError

COMMANDS = ("manifold", "reduced", "mam", "escape", "theorem-check", "lyapunov")


def _parser():
    p = argparse.ArgumentParser(prog="quasipath", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--out", default=None, help="output directory (default: config 'output')")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def run(command, cfg, out):
    if command == "theorem-check":
        rep = harness.run_theorem_check(cfg)
        harness.emit_theorem_report(rep, out, cfg)
        return rep.passed
    if command == "escape":
        rep = harness.run_escape_check(cfg)
        harness.emit_escape_report(rep, out, cfg)
        return rep.passed
    return {
        "manifold": harness.run_manifold,
        "reduced": harness.run_reduced,
        "mam": harness.run_mam,
        "lyapunov": harness.run_lyapunov,
    }[command](cfg, out)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config, args.seed)
        ok = run(args.command, cfg, args.out or cfg.output)
    except (QuasipathError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
