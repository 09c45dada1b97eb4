"""Regenerate the bundled end-to-end fixture."""

from __future__ import annotations

import argparse
from pathlib import Path

from geocell_kit.synthetic import write_fixture

DEFAULT_DIR = Path(__file__).resolve().parents[1] / "src" / "geocell_kit" / "fixtures"

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DEFAULT_DIR)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    write_fixture(args.out, args.seed)
    print(f"fixture written to {args.out}")
