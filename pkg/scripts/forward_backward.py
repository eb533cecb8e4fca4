"""Oracle-ceiling protocol in both directions.

Runs configs/forward.toml and configs/backward.toml through the CLI, writing
results under results/, then prints SR/SPL for each and the parity gap.

    python scripts/forward_backward.py [--workers N]
"""
import argparse
import sys
from pathlib import Path

from trajguide.cli import main, read_records
from trajguide.evaluation import aggregate

ROOT = Path(__file__).resolve().parents[1]


def run(name: str, workers: int) -> dict:
    out = ROOT / "results" / name
    code = main(["run", "--config", str(ROOT / "configs" / f"{name}.toml"), "--out", str(out),
                 "--workers", str(workers)])
    if code:
        sys.exit(code)
    (row,) = aggregate(read_records([out / "episodes.jsonl"]), ("task",))
    return row


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    fwd, bwd = run("forward", args.workers), run("backward", args.workers)
    for name, row in (("forward", fwd), ("backward", bwd)):
        print(f"{name:9s} SR {row['SR']:.3f}  SPL {row['SPL']:.3f}  n {row['n']}")
    print(f"parity gap {100 * abs(fwd['SR'] - bwd['SR']):.1f} points")
