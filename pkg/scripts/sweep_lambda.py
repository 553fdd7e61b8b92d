"""Offline NDCG of Algorithm 2 over a lambda grid, averaged over seeds.

    python3 scripts/sweep_lambda.py --seeds 0,1,2 --grid 0,1/9,1/3,2/3,1
"""

import argparse
from dataclasses import replace
from fractions import Fraction

import numpy as np

from divrank.experiment import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--grid", default="0,1/9,1/3,2/3,1")
    ap.add_argument("--convention", default="derivation", choices=["derivation", "algorithm2_literal"])
    args = ap.parse_args()
    grid = tuple(float(Fraction(g)) for g in args.grid.split(","))
    seeds = [int(s) for s in args.seeds.split(",")]

    table = {lam: [] for lam in grid}
    for seed in seeds:
        cfg = PipelineConfig(sweep_grid=grid).with_seed(seed)
        cfg = replace(cfg, plan=replace(cfg.plan, exponent_convention=args.convention))
        res = run_pipeline(cfg, fresh=False)
        for lam, v in res.sweep.ndcg.items():
            table[lam].append(v)
        print(f"seed {seed}: " + "  ".join(f"{lam:.3g}={v:.5f}" for lam, v in res.sweep.ndcg.items()), flush=True)

    print(f"{'lambda':>8}  {'mean NDCG':>10}  {'se':>8}")
    for lam, vals in table.items():
        v = np.asarray(vals)
        se = v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else float("nan")
        print(f"{lam:8.4f}  {v.mean():10.5f}  {se:8.5f}")
    best = max(table, key=lambda lam: np.mean(table[lam]))
    print(f"argmax lambda = {best:.4g}")


if __name__ == "__main__":
    main()
