"""Helper script to run the test-suite and redraw the cultural map of a run."""

from __future__ import annotations

import subprocess
import sys
from argparse import ArgumentParser
from pathlib import Path
from typing import Sequence

from culturesteer.cli import main as culturesteer_main


def main(argv: Sequence[str] | None = None) -> int:
    parser = ArgumentParser(description="Run pytest, then plot the coordinates found in a run directory.")
    parser.add_argument("--run-dir", type=Path, default=Path("runs"), help="Output directory of an earlier probe.")
    parser.add_argument("--anchors", type=Path, help="Human anchor coordinates (JSON).")
    args = parser.parse_args(argv)

    result = subprocess.run([sys.executable, "-m", "pytest", "-q"], check=False)
    if result.returncode != 0:
        return result.returncode

    if not (args.run_dir / "coordinate.json").exists():
        print(f"No coordinate.json in {args.run_dir}; run `culturesteer probe` first")
        return 0

    plot_args = ["analyze", "plot", "--output-dir", str(args.run_dir)]
    if args.anchors is not None:
        plot_args += ["--anchors", str(args.anchors)]
    code = culturesteer_main(plot_args)
    if code == 0:
        print(f"Plot written to {args.run_dir / 'cultural_map.svg'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
