#!/usr/bin/env python3
"""Print the aggregate tables of a finished run directory.

    python3 scripts/summarize_run.py runs/precond_compare_whitening
"""

import argparse
import csv
import json
from pathlib import Path

TABLES = ("summary.csv", "plateau.csv", "theorem1.csv", "kappa_diagnostic.csv", "gmm_kappa.csv", "distance_table.csv")


def show(path: Path) -> None:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    cells = [[c if not _is_float(c) else f"{float(c):.4g}" for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    print(f"-- {path.name}")
    for r in cells:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    print()


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return any(ch in s for ch in ".e")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("run_dir", type=Path)
    args = ap.parse_args()
    manifest = json.loads((args.run_dir / "manifest.json").read_text())
    print(f"{manifest['experiment']}  status={manifest['status']}  seeds={manifest['seeds']}  "
          f"{manifest['started']} -> {manifest['finished']}\n")
    for name in TABLES:
        if (args.run_dir / name).exists():
            show(args.run_dir / name)


if __name__ == "__main__":
    main()
