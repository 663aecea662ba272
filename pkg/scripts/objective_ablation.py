"""EgoNCE vs InfoNCE twin runs on the default synthetic dataset, scored by held-out MCQ.

    python scripts/objective_ablation.py --seeds 0 1 2 --out runs/ablation.json
"""

import argparse
import json
from pathlib import Path

from sparsevt.harness.ablation import objective_twins


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n-items", type=int, default=2000)
    p.add_argument("--out")
    args = p.parse_args()

    results = {}
    print(f"{'seed':>4} {'objective':>9} {'inter':>6} {'intra':>6} {'secs':>5}")
    for seed in args.seeds:
        results[seed] = objective_twins(seed, n_items=args.n_items)
        for obj, r in results[seed].items():
            print(f"{seed:>4} {obj:>9} {r['inter']:6.3f} {r['intra']:6.3f} {r['seconds']:5.0f}")
    wins = sum(r["egonce"]["intra"] >= r["infonce"]["intra"] for r in results.values())
    print(f"egonce >= infonce on intra in {wins}/{len(results)} seeds")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
