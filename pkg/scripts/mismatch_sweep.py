"""Per-parameter camera mismatch sweeps (height, fov, aspect).

Re-runs the forward suite with one camera parameter offset at a time, each
magnitude on the same seeds, and prints SR per magnitude.

    python scripts/mismatch_sweep.py [--workers N]
"""
import argparse
import sys
from pathlib import Path

from trajguide.cli import main

ROOT = Path(__file__).resolve().parents[1]
ASPECT = ["--parameter", "aspect", "--magnitudes", "0,0.25,0.5,1.0,1.5"]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    runs = [("sweep_height", "sweep_height", []), ("sweep_fov", "sweep_fov", []),
            ("sweep_height", "sweep_aspect", ASPECT)]
    for config, out, extra in runs:
        print(f"\n## {out}")
        code = main(["sweep", "--config", str(ROOT / "configs" / f"{config}.toml"),
                     "--out", str(ROOT / "results" / out), "--workers", str(args.workers), *extra])
        if code:
            sys.exit(code)
