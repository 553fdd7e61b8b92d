"""Train and compare Algorithm 1 and Algorithm 2 on clustered and redundancy-free markets.

    python3 scripts/run_experiment.py --seeds 0,1,2,3,4 --out results/experiment.json

Prints per-seed paired differences (algorithm2 - algorithm1) and a t-statistic
per metric; writes everything as JSON.
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from divrank.experiment import PipelineConfig, paired_summary, run_pipeline
from divrank.simulator import MarketConfig

METRICS = ("offline_ndcg", "conditional_ndcg", "realized_bookings", "price_variance_top8", "geo_redundancy_top8")


def diffs(result) -> dict[str, float]:
    a1, a2 = result.fresh["algorithm1"], result.fresh["algorithm2"]
    return {
        "offline_ndcg": result.offline_ndcg["algorithm2"] - result.offline_ndcg["algorithm1"],
        "conditional_ndcg": result.conditional_ndcg["algorithm2"] - result.conditional_ndcg["algorithm1"],
        "realized_bookings": a2.realized_bookings - a1.realized_bookings,
        "price_variance_top8": a2.price_variance_top8 - a1.price_variance_top8,
        "geo_redundancy_top8": a2.geo_redundancy_top8 - a1.geo_redundancy_top8,
    }


def run_market(name: str, cfg: PipelineConfig, seeds) -> dict:
    rows = []
    for seed in seeds:
        res = run_pipeline(cfg.with_seed(seed))
        row = {"seed": seed, **diffs(res), "conditional_loss": res.conditional_loss,
               "seconds": round(res.timings["total"], 1)}
        if res.sweep is not None:
            row["sweep"] = {repr(k): v for k, v in res.sweep.ndcg.items()}
        rows.append(row)
        print(f"[{name}] seed {seed}: " + "  ".join(f"{m} {row[m]:+.4g}" for m in METRICS), flush=True)
    summary = {m: paired_summary([r[m] for r in rows]) for m in METRICS}
    for m, s in summary.items():
        print(f"[{name}] {m:22s} mean {s['mean']:+.5g}  se {s['se']:.3g}  t {s['t']:+.2f}")
    return {"runs": rows, "summary": summary}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--no-null", action="store_true", help="skip the redundancy-free control")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    out = {"clustered": run_market("clustered", PipelineConfig(), seeds)}
    if not args.no_null:
        m = MarketConfig()
        null = PipelineConfig(market=replace(m, cluster_count=m.n_listings), sweep_grid=None)
        out["null"] = run_market("null", null, seeds)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
