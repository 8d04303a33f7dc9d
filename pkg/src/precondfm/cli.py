"""Command-line entry point: ``run``, ``validate`` and ``compare``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import NumericError, ValidationError
from .experiments import COMPARE_HEADER, format_value, compare, run, validate_config, write_csv

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _load(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="precondfm", description=__doc__)
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--seed-override", type=_seeds, help="comma-separated seeds replacing the config's list")
    r.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.add_argument("--output-dir")
    v.add_argument("--seed-override", type=_seeds)
    v.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    c = sub.add_parser("compare", help="tabulate sliced distances across run manifests")
    c.add_argument("manifests", nargs="+")
    c.add_argument("--output-dir", default=".")
    c.add_argument("--baseline", default="none")
    c.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "compare":
            rows = compare(args.manifests, args.baseline)
            path = write_csv(Path(args.output_dir) / "distance_table.csv", COMPARE_HEADER, rows)
            say(",".join(COMPARE_HEADER))
            for row in rows:
                say(",".join(format_value(v) for v in row))
            say(f"wrote {path}")
            return 0
        cfg = validate_config(_load(args.config), args.seed_override, args.output_dir)
        if args.command == "validate":
            say(f"ok: {cfg.experiment}, seeds {list(cfg.seeds)}, hash {cfg.config_hash()[:12]}")
            return 0
        manifest = run(cfg, quiet=args.quiet)
        say(f"wrote {len(manifest.emitted_files)} files to {cfg.output_dir}")
        return 0
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
