"""Command-line entry point: ``vemschwarz {solve,sweep,eigs,validate}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from . import experiment as ex

EXIT_OK, EXIT_CHECK, EXIT_ERROR = 0, 1, 2
OUT_ENV = "VEMSCHWARZ_OUT"

log = logging.getLogger("vemschwarz")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--threads", type=int, help="worker threads for local eigenproblems")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="vemschwarz", description=__doc__)
    p.add_argument("--version", action="version", version=f"vemschwarz {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="one contrast value, every coarse mode")
    sub.add_parser("sweep", parents=[common], help="table over the configured contrasts")
    sub.add_parser("eigs", parents=[common], help="local eigenvalue report")
    sub.add_parser("validate", parents=[common], help="partition of unity, patch and symmetry checks")
    return p


def _config(args):
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    out = args.out or os.environ.get(OUT_ENV)
    if out:
        over["out"] = out
    return ex.load_config(args.config, over)


def _print_rows(rows):
    for r in rows:
        print(f"eta={r['eta']:g} {r['coarse_mode']}: iters={r.get('iters', '')} "
              f"cond={ex._fmt(r.get('cond_est'))} dimV0={r.get('dimV0', '')} [{r['status']}]")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.command == "sweep":
            rows = ex.run_sweep(cfg)
            path = ex.write_sweep(cfg, rows)
            _print_rows(rows)
            print(f"wrote {path}")
            failed = any(r["status"].startswith("FAILED") for r in rows)
            return EXIT_CHECK if failed else EXIT_OK
        if args.command == "solve":
            rows = ex.solve(cfg)
            _print_rows(rows)
            print(f"wrote {cfg.out / 'solve.csv'}")
            return EXIT_CHECK if any(r["status"].startswith("FAILED") for r in rows) else EXIT_OK
        if args.command == "eigs":
            for path in ex.emit_eigen_report(cfg):
                print(f"wrote {path}")
            return EXIT_OK
        checks = ex.validate(cfg)
        for c in checks:
            print(c.line())
        ok = all(c.passed for c in checks)
        print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
        return EXIT_OK if ok else EXIT_CHECK
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
