"""End-to-end pipeline on the simulator: train both models, then compare rankers."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .base import RankingModel, train_base
from .metrics import MetricReport
from .nn import TrainConfig
from .rerank import DEFAULT_GRID, RerankPlan, SweepResult, offline_ndcg, sweep_lambda
from .similarity import SimilarityModel, conditional_loss, conditional_set, improvement_z, train_similarity
from .simulator import (
    STREAM_EVAL,
    STREAM_HELDOUT,
    STREAM_SIMILARITY,
    STREAM_TRAIN,
    MarketConfig,
    generate_market,
    run_experiment,
    simulate_logs,
)

BASE_TRAIN = TrainConfig(learning_rate=2e-3, batch_size=256, epochs=10)
SIM_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=256, epochs=10, weight_decay=1e-4)


@dataclass(frozen=True)
class PipelineConfig:
    market: MarketConfig = MarketConfig()
    n_train: int = 30000
    # similarity training uses its own logs so base logits there are out-of-sample
    n_sim_train: int = 30000
    # policy that produces the similarity-training logs: "logging" or "algorithm1"
    similarity_policy: str = "algorithm1"
    # ship the trained similarity model only if it beats s == 0 on the
    # validation split with at least this paired z-score; None always ships it
    acceptance_z: float | None = 2.0
    n_heldout: int = 10000
    n_eval: int = 10000
    # tail share of each training split used for early stopping
    validation_fraction: float = 0.2
    base_train: TrainConfig = BASE_TRAIN
    sim_train: TrainConfig = SIM_TRAIN
    plan: RerankPlan = RerankPlan()
    sweep_grid: tuple[float, ...] | None = DEFAULT_GRID

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(
            self,
            market=replace(self.market, seed=seed),
            base_train=replace(self.base_train, seed=seed),
            sim_train=replace(self.sim_train, seed=seed),
        )


@dataclass
class PipelineResult:
    seed: int
    base: RankingModel
    sim: SimilarityModel
    offline_ndcg: dict[str, float]
    conditional_ndcg: dict[str, float]
    conditional_loss: dict[str, float]
    fresh: dict[str, MetricReport]
    sweep: SweepResult | None
    timings: dict[str, float] = field(default_factory=dict)
    # validation z-score of the similarity model over s == 0, and whether it shipped
    similarity_z: float = float("nan")
    similarity_accepted: bool = True


def zero_output(sim: SimilarityModel) -> SimilarityModel:
    """Copy of ``sim`` whose combiner output is zero, so s == 0 everywhere."""
    out = copy.deepcopy(sim)
    out.combiner.weights[-1][:] = 0.0
    out.combiner.biases[-1][:] = 0.0
    return out


def conditional_ndcg(logs, base: RankingModel, sim: SimilarityModel | None) -> float:
    """NDCG over searches booked below position 0, re-ranking positions >= 1.

    The logged position-0 listing stays on top; the rest are ordered by
    ``ubl - s(l, l_0)`` (or by ``ubl`` alone when ``sim`` is None).
    """
    from .base import context_vector
    from .metrics import ndcg_from_positions

    positions = []
    for log in logs:
        b = log.booked
        if b is None or b.position == 0:
            continue
        rest = log.impressions[1:]
        logits = base.score_many(log.context, rest)
        if sim is not None:
            emb = sim.embed_many(log.impressions)
            logits = logits - sim.combine(context_vector(log.context), emb[1:], emb[0])
        order = sorted(range(len(rest)), key=lambda i: (-logits[i], rest[i].listing_id))
        ids = [rest[i].listing_id for i in order]
        positions.append(1 + ids.index(b.listing_id))
    return ndcg_from_positions(positions)


def run_pipeline(cfg: PipelineConfig, fresh: bool = True) -> PipelineResult:
    """Train and compare both rankers on one market.

    The base model learns from exploration logs. It then serves as the
    production ranker (Algorithm 1) that records the similarity-training logs
    and the held-out logs used offline, so both look like what a live system
    records. The similarity model ships only if it beats s == 0 on its
    validation split by ``acceptance_z``; otherwise s == 0 and Algorithm 2
    reduces to Algorithm 1.
    """
    t0 = time.perf_counter()
    timings = {}
    market = generate_market(cfg.market)
    train_logs = simulate_logs(market, cfg.n_train, STREAM_TRAIN)
    timings["simulate"] = time.perf_counter() - t0

    t = time.perf_counter()
    cut = int(len(train_logs) * (1 - cfg.validation_fraction))
    base = train_base(train_logs[:cut], cfg.base_train, validation_logs=train_logs[cut:])
    timings["train_base"] = time.perf_counter() - t

    t = time.perf_counter()
    sim_logs = simulate_logs(market, cfg.n_sim_train, STREAM_SIMILARITY, policy=cfg.similarity_policy, models=(base,))
    cut = int(len(sim_logs) * (1 - cfg.validation_fraction))
    sim_logs, val = sim_logs[:cut], sim_logs[cut:]
    held = simulate_logs(market, cfg.n_heldout, STREAM_HELDOUT, policy="algorithm1", models=(base,))
    timings["simulate"] += time.perf_counter() - t

    t = time.perf_counter()
    sim = train_similarity(base, sim_logs, cfg.sim_train, validation_logs=val)
    z = improvement_z(sim, conditional_set(base, val))
    accepted = cfg.acceptance_z is None or z >= cfg.acceptance_z
    if not accepted:
        sim = zero_output(sim)
    timings["train_similarity"] = time.perf_counter() - t

    t = time.perf_counter()
    held_cond = conditional_set(base, held)
    cond_loss = {"base": conditional_loss(None, held_cond), "similarity": conditional_loss(sim, held_cond)}
    cond = {"algorithm1": conditional_ndcg(held, base, None), "algorithm2": conditional_ndcg(held, base, sim)}
    off = {"algorithm1": offline_ndcg(held, base), "algorithm2": offline_ndcg(held, base, sim, cfg.plan)}
    sweep = sweep_lambda(base, sim, held, cfg.sweep_grid, cfg.plan.exponent_convention) if cfg.sweep_grid else None
    timings["offline_eval"] = time.perf_counter() - t

    reports = {}
    if fresh:
        t = time.perf_counter()
        for ranker in ("algorithm1", "algorithm2"):
            reports[ranker] = run_experiment(
                market, ranker, (base, sim), cfg.plan, stream=STREAM_EVAL, n_searches=cfg.n_eval
            ).report
        timings["fresh_eval"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    return PipelineResult(cfg.market.seed, base, sim, off, cond, cond_loss, reports, sweep, timings, z, accepted)


def paired_summary(diffs) -> dict[str, float]:
    """Mean, standard error and t-statistic of per-seed paired differences."""
    d = np.asarray(diffs, dtype=np.float64)
    mean = float(d.mean())
    se = float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else float("nan")
    t = mean / se if se > 0 else (0.0 if mean == 0 else float("inf") * np.sign(mean))
    return {"mean": mean, "se": se, "t": float(t), "n": len(d)}
