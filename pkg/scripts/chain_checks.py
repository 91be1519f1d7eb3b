"""Chain MDP: SARSA error vs dynamic programming, exact safe improvement, iterative vs one-step."""

import argparse

import numpy as np

from cfpi import experiments as ex

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seeds", type=int, default=5)
p.add_argument("--skip-iterative", action="store_true")
args = p.parse_args()

for seed in range(args.seeds):
    err, secs = ex.chain_sarsa_error(seed)
    print(f"seed {seed}: sarsa max|Q - Q_dp| = {err:.4f} ({secs:.0f}s)")
    out, jb = ex.chain_safe_improvement(seed)
    print("  J - J_behavior: " + "  ".join(f"{op}{'' if np.isnan(lt) else f'@{lt:g}'}={j - jb:+.3f}" for (op, lt), j in out.items()))
    if not args.skip_iterative:
        r = ex.chain_iterative(seed)
        print(f"  iterative {r['iterative']:.4f}  one-step {r['one_step']:.4f}  behavior {r['behavior']:.4f}  ({r['seconds']:.0f}s)")
