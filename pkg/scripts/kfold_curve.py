"""Held-out critic loss curve on a tiny chain dataset; prints where the minimum falls."""

import argparse

from cfpi.experiments import kfold_overfit

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seeds", type=int, default=5)
p.add_argument("--episodes", type=int, default=4)
p.add_argument("--split", type=float, default=0.25, help="train fraction")
args = p.parse_args()

for seed in range(args.seeds):
    curve = kfold_overfit(seed, args.episodes, args.split)
    best = min(curve, key=lambda c: c[1])
    print(f"seed {seed}: " + "  ".join(f"{s}:{l:.5f}" for s, l in curve) + f"   best={best[0]}")
