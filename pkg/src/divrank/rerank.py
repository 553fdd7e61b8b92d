"""Ranking by booking logits and greedy diversity re-ranking.

``rank_algorithm2`` places the top base-logit listing first. At every later
step it subtracts ``weight_k * s(l, placed[k-1])`` from each remaining
candidate's running logit and takes the argmax. Only the most recent
antecedent contributes a new term, so the combiner runs N(N-1)/2 times and
the listing tower at most N times per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numba import njit

from .base import RankingModel, check_context, context_vector
from .data import ListingImpression, QueryContext, SearchLog
from .metrics import ndcg
from .similarity import EmbeddingCache, SimilarityModel

Convention = Literal["derivation", "algorithm2_literal"]
DEFAULT_LAMBDA = 1.0 / 3.0
DEFAULT_GRID = (0.0, 1.0 / 9.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)


@dataclass(frozen=True)
class RerankPlan:
    lam: float = DEFAULT_LAMBDA
    exponent_convention: Convention = "derivation"
    max_positions: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0) or math.isnan(self.lam):
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.exponent_convention not in ("derivation", "algorithm2_literal"):
            raise ValueError(f"unknown exponent convention {self.exponent_convention!r}")
        if self.max_positions is not None and self.max_positions < 1:
            raise ValueError("max_positions must be positive")

    def antecedent_weight(self, position: int) -> float:
        """Decay applied to the similarity with the antecedent placed at ``position``."""
        exp = position if self.exponent_convention == "derivation" else position + 1
        return self.lam**exp


@dataclass
class RankedResult:
    listing_ids: tuple[str, ...]
    base_logits: np.ndarray
    final_logits: np.ndarray
    antecedent_weights: np.ndarray
    # similarity[p, i]: s(listing at p, antecedent at i); nan where never evaluated
    similarity: np.ndarray
    combiner_evaluations: int = 0
    tower_evaluations: int = 0
    n_penalized: int = field(default=0)

    def breakdown(self, position: int) -> list[tuple[str, float, float]]:
        """(antecedent_id, weight, s) terms subtracted from the listing at ``position``."""
        depth = min(position, max(self.n_penalized - 1, 0))
        return [
            (self.listing_ids[i], float(self.antecedent_weights[i]), float(self.similarity[position, i]))
            for i in range(depth)
        ]

    @property
    def penalty_breakdown(self) -> list[list[tuple[str, float, float]]]:
        return [self.breakdown(p) for p in range(len(self.listing_ids))]


def _tie_ranks(ids: Sequence[str]) -> np.ndarray:
    ranks = np.empty(len(ids), dtype=np.int64)
    for r, i in enumerate(sorted(range(len(ids)), key=lambda i: ids[i])):
        ranks[i] = r
    return ranks


def _sorted_indices(logits: np.ndarray, ids: Sequence[str], subset: Sequence[int] | None = None) -> list[int]:
    idx = range(len(ids)) if subset is None else subset
    return sorted(idx, key=lambda i: (-logits[i], ids[i]))


def rank_algorithm1(model: RankingModel, ctx: QueryContext, listings: Sequence[ListingImpression]) -> RankedResult:
    """Descending base logit, ties by listing_id."""
    if not listings:
        raise ValueError("nothing to rank")
    logits = model.score_many(ctx, listings)
    ids = [imp.listing_id for imp in listings]
    order = _sorted_indices(logits, ids)
    n = len(order)
    return RankedResult(
        listing_ids=tuple(ids[i] for i in order),
        base_logits=logits[order],
        final_logits=logits[order],
        antecedent_weights=np.zeros(n),
        similarity=np.full((n, n), np.nan),
    )


def rank_logits(logits: Sequence[float], ids: Sequence[str]) -> list[int]:
    """Algorithm 1 on precomputed logits; returns input indices in rank order."""
    return _sorted_indices(np.asarray(logits, dtype=np.float64), ids)


# -- compiled greedy loop -------------------------------------------------------

_ACT_CODES = {"relu": 0, "tanh": 1, "identity": 2}


def pack_network(net) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten weights as [W0 row-major, b0, W1, b1, ...] for the compiled evaluator."""
    flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(net.weights, net.biases)])
    dims = np.array([net.layers[0].input_dim] + [s.output_dim for s in net.layers], dtype=np.int64)
    acts = np.array([_ACT_CODES[s.activation] for s in net.layers], dtype=np.int64)
    return flat, dims, acts


@njit(cache=True)
def _mlp_scalar(z, flat, dims, acts, h1, h2):
    cur = z
    n_in = dims[0]
    off = 0
    for li in range(acts.shape[0]):
        n_out = dims[li + 1]
        out = h1 if li % 2 == 0 else h2
        bias = off + n_in * n_out
        for j in range(n_out):
            out[j] = flat[bias + j]
        for i in range(n_in):
            xi = cur[i]
            row = off + i * n_out
            for j in range(n_out):
                out[j] += xi * flat[row + j]
        a = acts[li]
        for j in range(n_out):
            if a == 0:
                if out[j] < 0.0:
                    out[j] = 0.0
            elif a == 1:
                out[j] = math.tanh(out[j])
        off = bias + n_out
        cur = out
        n_in = n_out
    return cur[0]


@njit(cache=True)
def _argmax(running, placed, tie):
    best = -1
    for i in range(running.shape[0]):
        if placed[i]:
            continue
        if best < 0 or running[i] > running[best] or (running[i] == running[best] and tie[i] < tie[best]):
            best = i
    return best


@njit(cache=True)
def _greedy(base, emb, ctx, flat, dims, acts, weights, tie, n_greedy):
    n, d = emb.shape
    running = base.copy()
    placed = np.zeros(n, dtype=np.bool_)
    order = np.full(n, -1, dtype=np.int64)
    sims = np.full((n, n), np.nan)  # sims[candidate, antecedent position]
    z = np.empty(2 * d + ctx.shape[0])
    z[2 * d :] = ctx
    width = 1
    for k in range(dims.shape[0]):
        if dims[k] > width:
            width = dims[k]
    h1 = np.empty(width)
    h2 = np.empty(width)
    evals = 0
    first = _argmax(running, placed, tie)
    order[0] = first
    placed[first] = True
    for k in range(1, n_greedy):
        a = order[k - 1]
        z[d : 2 * d] = emb[a]
        w = weights[k - 1]
        for i in range(n):
            if placed[i]:
                continue
            z[:d] = emb[i]
            s = _mlp_scalar(z, flat, dims, acts, h1, h2)
            evals += 1
            sims[i, k - 1] = s
            running[i] -= w * s
        best = _argmax(running, placed, tie)
        order[k] = best
        placed[best] = True
    return order, running, sims, evals


def rank_algorithm2(
    base: RankingModel,
    sim: SimilarityModel,
    ctx: QueryContext,
    listings: Sequence[ListingImpression],
    plan: RerankPlan = RerankPlan(),
    cache: EmbeddingCache | None = None,
) -> RankedResult:
    """Greedy diversity re-ranking with decayed similarity penalties."""
    if not listings:
        raise ValueError("nothing to rank")
    if not isinstance(plan, RerankPlan):
        raise TypeError("plan must be a RerankPlan")
    check_context(sim.schema_ids, sim.dims, ctx)
    n = len(listings)
    logits = base.score_many(ctx, listings)
    cache = EmbeddingCache() if cache is None else cache
    before = cache.tower_evaluations
    emb = np.ascontiguousarray(sim.embed_many(listings, cache))
    ids = [imp.listing_id for imp in listings]
    n_greedy = n if plan.max_positions is None else min(plan.max_positions, n)
    weights = np.array([plan.antecedent_weight(i) for i in range(n)], dtype=np.float64)
    flat, dims, acts = pack_network(sim.combiner)
    order, running, sims, evals = _greedy(
        logits, emb, context_vector(ctx), flat, dims, acts, weights, _tie_ranks(ids), n_greedy
    )
    order = list(order[:n_greedy])
    if n_greedy < n:
        placed = set(order)
        order += _sorted_indices(running, ids, [i for i in range(n) if i not in placed])
    order = np.asarray(order, dtype=np.int64)
    return RankedResult(
        listing_ids=tuple(ids[i] for i in order),
        base_logits=logits[order],
        final_logits=running[order],
        antecedent_weights=weights,
        similarity=sims[order],
        combiner_evaluations=int(evals),
        tower_evaluations=cache.tower_evaluations - before,
        n_penalized=n_greedy,
    )


def rank_per_position(
    base: RankingModel,
    sim: SimilarityModel,
    ctx: QueryContext,
    listings: Sequence[ListingImpression],
    plan: RerankPlan = RerankPlan(),
) -> list[str]:
    """Reference ranking: at each position evaluate the expanded position model
    f_k(l) = f(l) - sum_{i<k} w_i s(l, placed_i) from scratch and take the argmax.

    Cubic in N; used to certify the greedy loop.
    """
    ids = [imp.listing_id for imp in listings]
    ubl = base.score_many(ctx, listings)
    emb = sim.tower.forward_batch(np.asarray([imp.features.values for imp in listings], dtype=np.float64))
    c = context_vector(ctx)
    n = len(listings)
    n_greedy = n if plan.max_positions is None else min(plan.max_positions, n)
    placed: list[int] = []
    scores: dict[int, float] = {}
    remaining = list(range(n))
    for k in range(n_greedy):
        scores = {}
        for j in remaining:
            val = ubl[j]
            for i, a in enumerate(placed):
                val -= plan.antecedent_weight(i) * float(sim.combine(c, emb[j], emb[a])[0])
            scores[j] = val
        best = min(remaining, key=lambda j: (-scores[j], ids[j]))
        placed.append(best)
        remaining.remove(best)
    # past max_positions the tail keeps the scores of the last penalized step
    tail = sorted(remaining, key=lambda j: (-scores[j], ids[j]))
    return [ids[i] for i in placed + tail]


# -- offline evaluation -----------------------------------------------------------


def rank_log(log: SearchLog, base: RankingModel, sim: SimilarityModel | None, plan: RerankPlan | None) -> RankedResult:
    if sim is None or plan is None:
        return rank_algorithm1(base, log.context, log.impressions)
    return rank_algorithm2(base, sim, log.context, log.impressions, plan)


def offline_ndcg(
    logs: Sequence[SearchLog], base: RankingModel, sim: SimilarityModel | None = None, plan: RerankPlan | None = None
) -> float:
    """NDCG after re-ranking each booked search's impressions."""
    rankings = []
    for log in logs:
        booked = log.booked
        if booked is None:
            continue
        rankings.append((rank_log(log, base, sim, plan).listing_ids, booked.listing_id))
    return ndcg(rankings)


@dataclass
class SweepResult:
    ndcg: dict[float, float]

    @property
    def argmax(self) -> float:
        return max(self.ndcg, key=lambda lam: (self.ndcg[lam], -lam))


def sweep_lambda(
    base: RankingModel,
    sim: SimilarityModel,
    logs: Sequence[SearchLog],
    grid: Sequence[float] = DEFAULT_GRID,
    convention: Convention = "derivation",
) -> SweepResult:
    if not len(grid):
        raise ValueError("empty lambda grid")
    plans = [RerankPlan(lam, convention) for lam in grid]
    return SweepResult({p.lam: offline_ndcg(logs, base, sim, p) for p in plans})
