"""Command line entry point: ``lab <kind> --config FILE``."""

from __future__ import annotations

import argparse
import sys

from ..model import ResourceGuardError
from ..spectral import SpectralError
from .config import KINDS, ConfigError, load_spec
from .experiments import run
from .record import export, to_csv, to_json

EXIT_OK, EXIT_INVALID, EXIT_GUARD, EXIT_NUMERIC = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lab", description="Run a seeded Monte Carlo experiment and export the results.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="JSON experiment document")
    p.add_argument("--seed", type=int, help="override root_seed")
    p.add_argument("--samples", type=int, help="override n_samples")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--workers", type=int, help="worker processes (default: $LAB_WORKERS or 1)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args.config, {"root_seed": args.seed, "n_samples": args.samples})
        if spec.kind != args.kind:
            raise ConfigError(f"kind: config declares {spec.kind!r} but {args.kind!r} was requested")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("workers: must be at least 1")
        record = run(spec, workers=args.workers, write=False)
        if args.out:
            export(record, args.out, args.format)
        else:
            sys.stdout.write(to_csv(record) if args.format == "csv" else to_json(record))
    except (ConfigError, ValueError, OSError) as e:
        print(f"lab: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceGuardError as e:
        print(f"lab: resource guard: {e}", file=sys.stderr)
        return EXIT_GUARD
    except SpectralError as e:
        print(f"lab: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
