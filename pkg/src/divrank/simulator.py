"""Synthetic two-sided marketplace with cascade browsing.

Listings belong to redundancy clusters that share a location, a price/quality
style and a descriptor code. Each search draws a candidate set from a few
clusters and a user whose taste point has three parts:

* price and quality targets, drawn from an 80/20 mixture of
  affordability-leaning and quality-leaning users; models see them with noise;
* a preferred location, the centre of one candidate cluster;
* a style key that marks half of all clusters as disliked, independently per
  cluster, so distinct clusters carry no information about each other.

Location and style are hidden from models. Rejecting a listing is evidence
against its whole cluster, which is the redundancy a similarity model can learn.
With one listing per cluster it says nothing about the style of other listings.

A user scans results top to bottom. Position j is reached with marginal
probability log2/log(2+j); a reached listing is booked with probability
sigmoid(temperature * utility) and the session stops at the first booking.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .data import FeatureSchema, FeatureVector, ListingImpression, QueryContext, SchemaSet, SearchLog
from .metrics import MetricReport, diversity_metrics, log_discount, ndcg_from_positions, pareto_split

Ranker = Literal["random", "logging", "algorithm1", "algorithm2"]

STREAM_TRAIN, STREAM_HELDOUT, STREAM_EVAL, STREAM_SIMILARITY = 0, 1, 2, 3


@dataclass(frozen=True)
class MarketConfig:
    n_listings: int = 3000
    n_searches: int = 20000
    price_mu: float = 4.6
    price_sigma: float = 0.8
    quality_correlation: float = 0.5
    cluster_count: int = 300
    cluster_spread: float = 0.3
    majority_fraction: float = 0.8
    attention: tuple[float, ...] | None = None
    seed: int = 0
    region_km: float = 20.0
    candidates_per_search: int = 30
    max_per_cluster: int = 5
    within_cluster_share: float = 0.15
    descriptor_dim: int = 4
    feature_noise: float = 0.1
    temperature: float = 4.0
    utility_bias: float = 1.5
    # (price weight, quality weight) per user class
    majority_weights: tuple[float, float] = (0.5, 0.15)
    minority_weights: tuple[float, float] = (0.1, 0.5)
    majority_taste: tuple[float, float] = (-2.0, 0.0)
    minority_taste: tuple[float, float] = (1.0, 2.0)
    taste_spread: float = 0.4
    location_weight: float = 0.6
    location_scale_km: float = 1.0
    # penalty on clusters the user's hidden style key marks as disliked
    style_weight: float = 2.0
    # Gumbel noise on the logging policy's scores, in utility units
    logging_noise: float = 0.3

    def __post_init__(self):
        if self.price_sigma <= 0:
            raise ValueError("price_sigma must be positive")
        if self.n_listings <= 0 or self.cluster_count <= 0 or self.n_searches < 0:
            raise ValueError("counts must be positive")
        if self.cluster_count > self.n_listings:
            raise ValueError("cluster_count cannot exceed n_listings")
        for name in ("quality_correlation", "majority_fraction", "within_cluster_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")
        if self.candidates_per_search < 1 or self.max_per_cluster < 1:
            raise ValueError("candidate sizes must be positive")
        if self.attention is not None and len(self.attention) < self.candidates_per_search:
            raise ValueError("attention curve shorter than the candidate list")

    def attention_curve(self) -> np.ndarray:
        if self.attention is None:
            return log_discount(self.candidates_per_search)
        return np.asarray(self.attention, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown market config field(s): {', '.join(sorted(unknown))}")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def market_schemas(cfg: MarketConfig) -> SchemaSet:
    return SchemaSet(
        FeatureSchema("sim.query.v1", 2),
        FeatureSchema("sim.user.v1", 2),
        FeatureSchema(f"sim.listing.v1.d{cfg.descriptor_dim}", 4 + cfg.descriptor_dim),
    )


@dataclass
class Market:
    """Listings with their latent attributes. The ground truth stays here."""

    cfg: MarketConfig
    ids: list[str]
    price: np.ndarray
    z_price: np.ndarray
    z_quality: np.ndarray
    location: np.ndarray
    cluster: np.ndarray
    cluster_centers: np.ndarray
    cluster_codes: np.ndarray
    features: list[FeatureVector]
    members: list[np.ndarray] = field(repr=False)

    @property
    def schemas(self) -> SchemaSet:
        return market_schemas(self.cfg)

    def ground_truth(self) -> dict:
        return {
            "listing_id": self.ids,
            "price": self.price.tolist(),
            "quality": self.z_quality.tolist(),
            "location": self.location.tolist(),
            "cluster": self.cluster.tolist(),
        }


@dataclass(frozen=True)
class User:
    preference: Literal["majority", "minority"]
    taste_price: float
    taste_quality: float
    taste_location: tuple[float, float]
    weights: tuple[float, float]
    query: tuple[float, float]
    # hidden; seeds the per-cluster dislike coin
    style_key: int = 0

    def features(self, cfg: MarketConfig, rng: np.random.Generator, schemas: SchemaSet) -> QueryContext:
        noisy = np.array([self.taste_price, self.taste_quality]) + rng.normal(0, cfg.feature_noise, 2)
        return QueryContext(
            FeatureVector(tuple(float(v) for v in self.query), schemas.query.schema_id),
            FeatureVector(tuple(float(v) for v in noisy), schemas.user.schema_id),
        )


def generate_market(cfg: MarketConfig) -> Market:
    rng = np.random.default_rng([cfg.seed, 7])
    n, c = cfg.n_listings, cfg.cluster_count
    # every cluster gets at least one listing
    cluster = np.concatenate([np.arange(c), rng.integers(0, c, n - c)])
    rng.shuffle(cluster)
    centers = rng.uniform(0.0, cfg.region_km, size=(c, 2))
    w = cfg.within_cluster_share
    zp = math.sqrt(1 - w) * rng.normal(size=c)[cluster] + math.sqrt(w) * rng.normal(size=n)
    eps = math.sqrt(1 - w) * rng.normal(size=c)[cluster] + math.sqrt(w) * rng.normal(size=n)
    rho = cfg.quality_correlation
    zq = rho * zp + math.sqrt(1 - rho * rho) * eps
    price = np.exp(cfg.price_mu + cfg.price_sigma * zp)
    location = centers[cluster] + rng.normal(0.0, 1.0, size=(n, 2)) * cfg.cluster_spread
    codes = rng.normal(size=(c, cfg.descriptor_dim))
    schemas = market_schemas(cfg)
    half = cfg.region_km / 2
    noise = cfg.feature_noise
    desc = codes[cluster] + rng.normal(0, noise, size=(n, cfg.descriptor_dim))
    q_obs = zq + rng.normal(0, noise, size=n)
    feats = np.column_stack([zp, q_obs, (location - half) / half, desc])
    features = [FeatureVector(tuple(float(v) for v in row), schemas.listing.schema_id) for row in feats]
    members = [np.flatnonzero(cluster == k) for k in range(c)]
    ids = [f"L{i:05d}" for i in range(n)]
    return Market(cfg, ids, price, zp, zq, location, cluster, centers, codes, features, members)


# -- searches -----------------------------------------------------------------


def search_rng(cfg: MarketConfig, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 11, stream, index])


def sample_candidates(market: Market, rng: np.random.Generator) -> np.ndarray:
    cfg = market.cfg
    out: list[int] = []
    for k in rng.permutation(cfg.cluster_count):
        m = market.members[k]
        take = min(len(m), cfg.max_per_cluster, cfg.candidates_per_search - len(out))
        out.extend(rng.choice(m, size=take, replace=False).tolist())
        if len(out) >= cfg.candidates_per_search:
            break
    return np.asarray(out, dtype=np.int64)


def sample_user(market: Market, candidates: np.ndarray, rng: np.random.Generator) -> User:
    cfg = market.cfg
    majority = rng.random() < cfg.majority_fraction
    taste = np.asarray(cfg.majority_taste if majority else cfg.minority_taste) + rng.normal(0, cfg.taste_spread, 2)
    clusters = np.unique(market.cluster[candidates])
    home = market.cluster_centers[rng.choice(clusters)]
    style_key = int(rng.integers(1 << 62))
    return User(
        "majority" if majority else "minority",
        float(taste[0]),
        float(taste[1]),
        (float(home[0]), float(home[1])),
        cfg.majority_weights if majority else cfg.minority_weights,
        (float(rng.random()), float(rng.random())),
        style_key,
    )


def dislikes(style_key: int, clusters: np.ndarray) -> np.ndarray:
    """Fair coin per (style_key, cluster), from a splitmix64 hash."""
    with np.errstate(over="ignore"):
        z = np.uint64(style_key) + (np.asarray(clusters, dtype=np.uint64) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(63)).astype(bool)


def utility(market: Market, user: User, idx: np.ndarray) -> np.ndarray:
    cfg = market.cfg
    wp, wq = user.weights
    dist = np.linalg.norm(market.location[idx] - np.asarray(user.taste_location), axis=1)
    return (
        cfg.utility_bias
        - wp * np.abs(market.z_price[idx] - user.taste_price)
        - wq * np.abs(market.z_quality[idx] - user.taste_quality)
        - cfg.location_weight * np.minimum(1.0, dist / cfg.location_scale_km)
        - cfg.style_weight * dislikes(user.style_key, market.cluster[idx])
    )


def expected_utility(market: Market, user: User, idx: np.ndarray, taste: np.ndarray) -> np.ndarray:
    """Utility with the location term averaged over the user's candidate clusters.

    This is what a well-tuned production ranker could know: the observed taste
    point but not the hidden location preference.
    """
    cfg = market.cfg
    wp, wq = user.weights
    clusters = np.unique(market.cluster[idx])
    homes = market.cluster_centers[clusters]
    dist = np.linalg.norm(market.location[idx][:, None, :] - homes[None, :, :], axis=2)
    loc = np.minimum(1.0, dist / cfg.location_scale_km).mean(axis=1)
    return (
        cfg.utility_bias
        - wp * np.abs(market.z_price[idx] - taste[0])
        - wq * np.abs(market.z_quality[idx] - taste[1])
        - cfg.location_weight * loc
        - 0.5 * cfg.style_weight
    )


def logging_order(market: Market, search: "SimulatedSearch") -> np.ndarray:
    """Plackett-Luce sample around expected utility: a noisy production ranker."""
    cand = search.candidates
    rng = search_rng(market.cfg, 1000 + search.stream, search.index)
    taste = np.asarray(search.ctx.user_features.values)
    score = expected_utility(market, search.user, cand, taste)
    score = score + market.cfg.logging_noise * rng.gumbel(size=len(cand))
    return cand[np.argsort(-score, kind="stable")]


def booking_probabilities(market: Market, user: User, idx: np.ndarray) -> np.ndarray:
    """Probability that ``user`` books each listing once it is examined."""
    t = market.cfg.temperature * utility(market, user, idx)
    return 1.0 / (1.0 + np.exp(-t))


def expected_search_bookings(p_in_order: np.ndarray, attention: np.ndarray) -> float:
    """Ground-truth expected bookings of one presented list.

    The booking probability at position j is the listing's own probability
    times the chance that nothing above it was booked.
    """
    p = np.asarray(p_in_order, dtype=np.float64)
    survive = np.concatenate([[1.0], np.cumprod(1.0 - p)[:-1]])
    return float(np.sum(attention[: len(p)] * p * survive))


@dataclass(frozen=True)
class SearchDraws:
    """Uniform variates for one search: continuation per position, booking per candidate."""

    continue_u: np.ndarray
    book_u: dict[int, float]


def draw_outcomes(rng: np.random.Generator, candidates: np.ndarray) -> SearchDraws:
    cont = rng.random(len(candidates))
    book = rng.random(len(candidates))
    return SearchDraws(cont, {int(c): float(b) for c, b in zip(candidates, book)})


def simulate_search(
    market: Market,
    user: User,
    presented_order: Sequence[int],
    attention: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    draws: SearchDraws | None = None,
    search_id: str = "S0",
    ctx: QueryContext | None = None,
) -> SearchLog:
    """Run the cascade over ``presented_order`` (listing indices) and log it."""
    order = np.asarray(presented_order, dtype=np.int64)
    if len(np.unique(order)) != len(order) or np.any(order < 0) or np.any(order >= len(market.ids)):
        raise ValueError("presented_order must be a permutation of distinct listing indices")
    attention = market.cfg.attention_curve() if attention is None else np.asarray(attention, dtype=np.float64)
    if len(attention) < len(order):
        raise ValueError("attention curve shorter than the presented list")
    if rng is None:
        rng = np.random.default_rng()
    if draws is None:
        draws = draw_outcomes(rng, order)
    if ctx is None:
        ctx = user.features(market.cfg, rng, market.schemas)
    p = booking_probabilities(market, user, order)
    booked_at = -1
    for j in range(len(order)):
        if j > 0:
            cont = attention[j] / attention[j - 1]
            if draws.continue_u[j] >= cont:
                break
        if draws.book_u[int(order[j])] < p[j]:
            booked_at = j
            break
    impressions = tuple(
        ListingImpression(
            market.ids[i],
            j,
            market.features[i],
            j == booked_at,
            float(market.price[i]),
            (float(market.location[i, 0]), float(market.location[i, 1])),
        )
        for j, i in enumerate(order)
    )
    return SearchLog(search_id, ctx, impressions)


@dataclass
class SimulatedSearch:
    """One search with everything needed to replay it under another ranking."""

    search_id: str
    user: User
    ctx: QueryContext
    candidates: np.ndarray
    draws: SearchDraws
    stream: int = 0
    index: int = 0


def sample_search(market: Market, stream: int, index: int) -> SimulatedSearch:
    rng = search_rng(market.cfg, stream, index)
    candidates = sample_candidates(market, rng)
    user = sample_user(market, candidates, rng)
    ctx = user.features(market.cfg, rng, market.schemas)
    draws = draw_outcomes(rng, candidates)
    # candidate order is shuffled so that no ranker sees cluster-grouped input
    candidates = candidates[rng.permutation(len(candidates))]
    return SimulatedSearch(f"S{stream}-{index:06d}", user, ctx, candidates, draws, stream, index)


def candidate_impressions(market: Market, candidates: np.ndarray) -> list[ListingImpression]:
    return [
        ListingImpression(
            market.ids[i],
            j,
            market.features[i],
            False,
            float(market.price[i]),
            (float(market.location[i, 0]), float(market.location[i, 1])),
        )
        for j, i in enumerate(candidates)
    ]


@dataclass
class ExperimentResult:
    logs: list[SearchLog]
    truths: list[dict]
    report: MetricReport


def present(market: Market, search: SimulatedSearch, ranker: Ranker, models=None, plan=None) -> np.ndarray:
    """Listing indices of ``search`` in the order the ranker shows them."""
    cand = search.candidates
    if ranker == "random":
        # sample_search already shuffled the candidates
        return cand
    if ranker == "logging":
        return logging_order(market, search)
    from .rerank import RerankPlan, rank_algorithm1, rank_algorithm2

    if models is None or models[0] is None:
        raise ValueError(f"ranker {ranker!r} needs a trained base model")
    imps = candidate_impressions(market, cand)
    if ranker == "algorithm1":
        result = rank_algorithm1(models[0], search.ctx, imps)
    elif ranker == "algorithm2":
        if len(models) < 2 or models[1] is None:
            raise ValueError("algorithm2 needs a similarity model")
        result = rank_algorithm2(models[0], models[1], search.ctx, imps, plan or RerankPlan())
    else:
        raise ValueError(f"unknown ranker {ranker!r}")
    pos = {market.ids[i]: i for i in cand}
    return np.asarray([pos[lid] for lid in result.listing_ids], dtype=np.int64)


def run_experiment(
    cfg: MarketConfig | Market,
    ranker: Ranker = "random",
    models: tuple | None = None,
    plan=None,
    stream: int = STREAM_EVAL,
    n_searches: int | None = None,
    start: int = 0,
) -> ExperimentResult:
    """Simulate fresh searches under one ranker and score the outcome.

    Searches are a pure function of (seed, stream, index), so two rankers
    run on the same stream face identical users, candidates and random draws.
    """
    market = cfg if isinstance(cfg, Market) else generate_market(cfg)
    mcfg = market.cfg
    n = mcfg.n_searches if n_searches is None else n_searches
    attention = mcfg.attention_curve()
    logs, truths, presented, positions, expected, booked_values = [], [], [], [], 0.0, []
    for i in range(start, start + n):
        search = sample_search(market, stream, i)
        order = present(market, search, ranker, models, plan)
        log = simulate_search(market, search.user, order, attention, draws=search.draws,
                              search_id=search.search_id, ctx=search.ctx)
        p = booking_probabilities(market, search.user, order)
        e = expected_search_bookings(p, attention)
        expected += e
        logs.append(log)
        presented.append(log.impressions)
        b = log.booked
        if b is not None:
            positions.append(b.position)
            booked_values.append(b.price)
        truths.append(
            {
                "search_id": search.search_id,
                "preference": search.user.preference,
                "taste": [search.user.taste_price, search.user.taste_quality],
                "taste_location": list(search.user.taste_location),
                "style_key": search.user.style_key,
                "booking_probabilities": p.tolist(),
                "expected_bookings": e,
            }
        )
    div = diversity_metrics(presented)
    pareto = pareto_split(booked_values) if booked_values else None
    report = MetricReport(
        ndcg=ndcg_from_positions(positions),
        expected_bookings=expected / n if n else float("nan"),
        realized_bookings=len(positions) / n if n else float("nan"),
        price_variance_top8=div.price_variance_top8,
        geo_redundancy_top8=div.geo_redundancy_top8,
        n_searches=n,
        n_booked=len(positions),
        pareto=[] if pareto is None else [(pareto.split_point, 0.5)],
    )
    return ExperimentResult(logs, truths, report)


def simulate_logs(
    market: Market,
    n_searches: int,
    stream: int = STREAM_TRAIN,
    start: int = 0,
    policy: Ranker = "logging",
    models=None,
) -> list[SearchLog]:
    """Logs produced under a logging policy, by default the noisy exploration ranker."""
    return run_experiment(market, policy, models, stream=stream, n_searches=n_searches, start=start).logs


def write_ground_truth(path, market: Market, truths: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        f.write(json.dumps({"market": market.ground_truth()}, separators=(",", ":")) + "\n")
        for t in truths:
            f.write(json.dumps(t, separators=(",", ":")) + "\n")
    return path
