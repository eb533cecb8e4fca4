"""SR against initial distance from the reference path.

Runs configs/off_trajectory.toml (paired starts at fixed path distances under
a distance-dependent noise model) and prints the 0.5 m bucket curve with its
3-bucket smoothing. Curve CSVs land in results/off_trajectory/.

    python scripts/off_trajectory_curve.py [--workers N] [--config PATH]
"""
import argparse
import sys
from pathlib import Path

from trajguide.cli import main, read_records
from trajguide.evaluation import init_distance_curve, smooth

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--config", default=str(ROOT / "configs" / "off_trajectory.toml"))
    args = ap.parse_args()
    out = ROOT / "results" / "off_trajectory"
    code = main(["run", "--config", args.config, "--out", str(out), "--workers", str(args.workers)])
    if code:
        sys.exit(code)
    curve = init_distance_curve(read_records([out / "episodes.jsonl"]))
    smoothed = smooth([row["SR"] for row in curve])
    print("\nbucket    n    SR  smoothed")
    for row, s in zip(curve, smoothed):
        print(f"{row['bucket_start']:5.1f} {row['n']:5d} {row['SR']:5.2f} {s:9.2f}")
