"""Command-line entry point: ``dissipmem run|verify|validate|plotdata``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__, experiments, oracle
from .config import ConfigError, dump_config, validate_config

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _cmd_run(args) -> int:
    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        sys.stderr.write(experiments.write_error(args.out, None, exc).decode())
        return EXIT_CONFIG
    out = args.out if args.out is not None else cfg["output_dir"]
    try:
        path = experiments.run_experiment(cfg, out, n_threads=args.threads)
    except Exception as exc:  # every module failure becomes error.json
        sys.stderr.write(experiments.write_error(out, cfg, exc).decode())
        return EXIT_FAILED
    if cfg["experiment"] == "oracle-verify":
        import json

        report = json.loads((path / experiments.FIT_FILE).read_text(encoding="utf-8"))
        if not report["passed"]:
            print(f"oracle checks failed; see {path / experiments.FIT_FILE}",
                  file=sys.stderr)
            return EXIT_FAILED
    print(path)
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = oracle.run_verification()
    text = oracle.report_json(results) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def _cmd_validate(args) -> int:
    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"{args.config}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    try:
        cols, rows, skipped = experiments.emit_plotdata(args.bundle, args.figure,
                                                        noise=args.noise, model=args.model)
    except (experiments.BundleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])
    finally:
        if args.out:
            fh.close()
    if args.figure == "log-overlap":
        print(f"skipped {skipped} rows with overlap = 1", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dissipmem",
                                description="Dissipative quantum memory simulations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write a bundle")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=None,
                     help="bundle directory (overrides output_dir)")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: DISSIPMEM_THREADS or all cores)")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="run the exact oracle checks")
    ver.add_argument("--out", type=Path, default=None, help="also write the JSON here")
    ver.set_defaults(func=_cmd_verify)

    val = sub.add_parser("validate", help="check a config and print it with defaults")
    val.add_argument("config", type=Path)
    val.set_defaults(func=_cmd_validate)

    pd = sub.add_parser("plotdata", help="emit a plot-ready CSV from a bundle")
    pd.add_argument("bundle", type=Path)
    pd.add_argument("figure", choices=sorted(experiments.PLOT_SCHEMAS))
    pd.add_argument("--noise", default=None, help="noise rate to select")
    pd.add_argument("--model", default=None, help="model to select (comparison runs)")
    pd.add_argument("--out", type=Path, default=None)
    pd.set_defaults(func=_cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
