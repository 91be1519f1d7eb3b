"""Mixture vs single-Gaussian operators on the bimodal point-mass dataset, one row per seed."""

import argparse

import numpy as np

from cfpi.experiments import pointmass_compare

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seeds", type=int, default=10)
p.add_argument("--episodes", type=int, default=None, help="dataset episodes (preset when omitted)")
p.add_argument("--eval-episodes", type=int, default=50)
args = p.parse_args()

rows = []
for seed in range(args.seeds):
    r = pointmass_compare(seed, args.episodes, args.eval_episodes)
    rows.append(r)
    print(f"seed {seed}: " + "  ".join(f"{k}={v:6.1f}" for k, v in r.items()), flush=True)
print("mean:   " + "  ".join(f"{k}={np.mean([r[k] for r in rows]):6.1f}" for k in rows[0]))
