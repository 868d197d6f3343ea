"""Self-training on the synthetic long-tail benchmark over several seeds.

    python3 scripts/selftrain_benchmark.py --seeds 0-4 --out runs/bench.json
"""

import argparse
import json
import time

import numpy as np

from sfids import benchmark


def seed_range(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0-4")
    ap.add_argument("--fractions", default="0,0.5,1", help="unlabeled fractions")
    ap.add_argument("--out", help="write per-seed results as JSON")
    args = ap.parse_args()
    fractions = tuple(float(f) for f in args.fractions.split(","))

    runs = []
    for seed in seed_range(args.seeds):
        t0 = time.perf_counter()
        res = benchmark.run_selftrain_seed(seed, fractions=fractions)
        runs.append(res)
        cells = "  ".join(f"UL={f:g}: {100 * v:6.2f}" for f, v in res["fractions"].items())
        print(f"seed {seed}  warm-up {100 * res['warmup']:6.2f}  {cells}  ({time.perf_counter() - t0:.0f}s)")
    print("mean  warm-up {:6.2f}  ".format(100 * np.mean([r["warmup"] for r in runs]))
          + "  ".join(f"UL={f:g}: {100 * np.mean([r['fractions'][f] for r in runs]):6.2f}" for f in fractions))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump([r | {"fractions": {str(k): v for k, v in r["fractions"].items()},
                            "rounds": {str(k): v for k, v in r["rounds"].items()}} for r in runs], fh, indent=2)


if __name__ == "__main__":
    main()
