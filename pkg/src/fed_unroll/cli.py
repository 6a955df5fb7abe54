"""Command line entry point: ``fed-unroll run|sweep|eval|plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from fed_unroll.config import ConfigError, load_config
from fed_unroll.data import load_dataset
from fed_unroll.experiment import parse_values, run_experiment, sweep
from fed_unroll.federation import evaluate
from fed_unroll.lista import load_checkpoint
from fed_unroll.plotting import render_svg
from fed_unroll.textio import FormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fed-unroll", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="output directory (overrides config and env)")

    sw = sub.add_parser("sweep", help="repeat an experiment over clients, epochs or rounds")
    sw.add_argument("config")
    sw.add_argument("--axis", required=True, choices=["clients", "epochs", "rounds"])
    sw.add_argument("--values", required=True, help="e.g. 1..10 or 1,2,4")
    sw.add_argument("-o", "--output")

    ev = sub.add_parser("eval", help="per-layer NMSE of a checkpoint on a dataset file")
    ev.add_argument("checkpoint")
    ev.add_argument("dataset")

    pl = sub.add_parser("plot", help="render an SVG from a CSV")
    pl.add_argument("csv")
    pl.add_argument("spec", help="spec string like 'x=layer y=nmse_db series=method' or a file holding one")
    pl.add_argument("-o", "--output", help="SVG path (default: CSV path with .svg)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            result = run_experiment(load_config(args.config), args.output, verbose=True)
            print(f"artifacts written to {result.output_dir}")
        elif args.command == "sweep":
            results = sweep(load_config(args.config), args.axis, parse_values(args.values), args.output)
            for res in results:
                print(f"{res.config.experiment_id}: final fedcs NMSE {res.curve('fedcs')[-1]:.2f} dB")
        elif args.command == "eval":
            net = load_checkpoint(args.checkpoint)
            for layer, value in enumerate(evaluate(net, load_dataset(args.dataset)), start=1):
                print(f"{layer}\t{value:.4f}")
        elif args.command == "plot":
            spec = args.spec
            if Path(spec).is_file():
                spec = Path(spec).read_text(encoding="utf-8")
            out = args.output or str(Path(args.csv).with_suffix(".svg"))
            render_svg(args.csv, spec, out)
            print(out)
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"fed-unroll: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
