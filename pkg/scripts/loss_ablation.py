"""Supervised training with each loss arm (CE, SCL, WCE, SCL+WCE) on the
synthetic benchmark; prints per-seed and mean macro-F1.

    python3 scripts/loss_ablation.py --seeds 0-4
"""

import argparse

import numpy as np

from sfids import benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0-4")
    args = ap.parse_args()
    lo, _, hi = args.seeds.partition("-")
    labels = [label for label, _, _ in benchmark.ABLATION_GRID]
    print("seed  " + "  ".join(f"{lab:>8}" for lab in labels))
    table = []
    for seed in range(int(lo), int(hi or lo) + 1):
        reps = benchmark.run_ablation_seed(seed)
        row = [100 * reps[lab].macro_f1 for lab in labels]
        table.append(row)
        print(f"{seed:<4}  " + "  ".join(f"{v:8.2f}" for v in row))
    print("mean  " + "  ".join(f"{v:8.2f}" for v in np.mean(table, axis=0)))


if __name__ == "__main__":
    main()
