"""Unconditional pairwise booking model f(q, u, l)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import checkpoint
from .data import ListingImpression, QueryContext, SearchLog
from .nn import Network, TrainConfig, TrainHistory, fit, pairwise_gradients, pairwise_loss, sigmoid

DEFAULT_HIDDEN = (64, 32)
MAX_PAIRS_PER_SEARCH = 30


class SchemaMismatch(ValueError):
    pass


def context_vector(ctx: QueryContext) -> np.ndarray:
    return np.asarray(ctx.query_features.values + ctx.user_features.values, dtype=np.float64)


def listing_matrix(listings: Sequence[ListingImpression]) -> np.ndarray:
    return np.asarray([imp.features.values for imp in listings], dtype=np.float64)


@dataclass
class RankingModel:
    net: Network
    schema_ids: dict[str, str]
    dims: dict[str, int]
    history: TrainHistory | None = field(default=None, compare=False)

    def check(self, ctx: QueryContext, listings: Sequence[ListingImpression]) -> None:
        check_context(self.schema_ids, self.dims, ctx)
        for imp in listings:
            check_listing(self.schema_ids, self.dims, imp)

    def inputs(self, ctx: QueryContext, listings: Sequence[ListingImpression]) -> np.ndarray:
        c = context_vector(ctx)
        lm = listing_matrix(listings)
        return np.hstack([np.broadcast_to(c, (len(lm), len(c))), lm])

    def score_many(self, ctx: QueryContext, listings: Sequence[ListingImpression]) -> np.ndarray:
        self.check(ctx, listings)
        if not listings:
            return np.zeros(0)
        return self.net.forward_batch(self.inputs(ctx, listings))[:, 0]

    def save(self, path, meta: dict | None = None) -> str:
        meta = dict(meta or {})
        meta.setdefault("dims", self.dims)
        return checkpoint.save_checkpoint(path, "base", {"net": self.net}, self.schema_ids, meta)

    @classmethod
    def load(cls, path) -> "RankingModel":
        doc = checkpoint.load_checkpoint(path, expect_kind="base")
        return cls(doc["networks"]["net"], doc["schema_ids"], doc["meta"]["dims"])


def check_context(schema_ids, dims, ctx: QueryContext) -> None:
    for role, fv in (("query", ctx.query_features), ("user", ctx.user_features)):
        if fv.schema_id != schema_ids[role] or len(fv) != dims[role]:
            raise SchemaMismatch(
                f"{role} features ({fv.schema_id!r}, dim {len(fv)}) do not match "
                f"model schema ({schema_ids[role]!r}, dim {dims[role]})"
            )


def check_listing(schema_ids, dims, imp: ListingImpression) -> None:
    fv = imp.features
    if fv.schema_id != schema_ids["listing"] or len(fv) != dims["listing"]:
        raise SchemaMismatch(
            f"listing {imp.listing_id!r} features ({fv.schema_id!r}, dim {len(fv)}) do not match "
            f"model schema ({schema_ids['listing']!r}, dim {dims['listing']})"
        )


def score(model: RankingModel, ctx: QueryContext, listing: ListingImpression) -> float:
    return float(model.score_many(ctx, [listing])[0])


def pairwise_probability(logit_x: float, logit_y: float) -> float:
    """P(l_x > l_y) = e^a / (e^a + e^b)."""
    if not (math.isfinite(logit_x) and math.isfinite(logit_y)):
        raise ValueError("pairwise_probability needs finite logits")
    return float(sigmoid(logit_x - logit_y))


def bradley_terry(p_x: float, p_y: float) -> float:
    """Pairwise win probability from two pointwise booking probabilities."""
    if p_x < 0 or p_y < 0:
        raise ValueError("probabilities must be non-negative")
    if p_x + p_y <= 0:
        raise ValueError("bradley_terry is undefined when both probabilities are zero")
    return p_x / (p_x + p_y)


def schemas_of(logs: Sequence[SearchLog]) -> tuple[dict[str, str], dict[str, int]]:
    for log in logs:
        if log.impressions:
            ctx = log.context
            f = log.impressions[0].features
            ids = {"query": ctx.query_features.schema_id, "user": ctx.user_features.schema_id, "listing": f.schema_id}
            dims = {"query": len(ctx.query_features), "user": len(ctx.user_features), "listing": len(f)}
            return ids, dims
    raise ValueError("logs hold no impressions")


def pair_matrices(
    logs: Sequence[SearchLog], max_pairs_per_search: int | None = MAX_PAIRS_PER_SEARCH, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Model inputs for (booked, not booked) pairs, capped per search by seeded sampling."""
    rng = np.random.default_rng(seed)
    xb, xn = [], []
    for log in logs:
        booked = log.booked
        if booked is None:
            continue
        others = [imp for imp in log.impressions if not imp.booked]
        if not others:
            continue
        if max_pairs_per_search is not None and len(others) > max_pairs_per_search:
            keep = np.sort(rng.choice(len(others), size=max_pairs_per_search, replace=False))
            others = [others[i] for i in keep]
        c = context_vector(log.context)
        b = np.concatenate([c, booked.features.values])
        xb.append(np.broadcast_to(b, (len(others), len(b))))
        xn.append(np.hstack([np.broadcast_to(c, (len(others), len(c))), listing_matrix(others)]))
    if not xb:
        return np.zeros((0, 0)), np.zeros((0, 0))
    return np.vstack(xb), np.vstack(xn)


def mean_pairwise_loss(net: Network, xb: np.ndarray, xn: np.ndarray) -> float:
    out = net.forward_batch(np.vstack([xb, xn]))[:, 0]
    n = len(xb)
    return float(np.mean(pairwise_loss(out[:n], out[n:])))


def train_base(
    logs: Sequence[SearchLog],
    cfg: TrainConfig = TrainConfig(),
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    max_pairs_per_search: int | None = MAX_PAIRS_PER_SEARCH,
    validation_logs: Sequence[SearchLog] | None = None,
) -> RankingModel:
    """Train f on all (booked, not booked) pairs of ``logs``."""
    ids, dims = schemas_of(logs)
    xb, xn = pair_matrices(logs, max_pairs_per_search, cfg.seed)
    if len(xb) == 0:
        raise ValueError("logs yield no training pairs")
    in_dim = dims["query"] + dims["user"] + dims["listing"]
    net = Network.create([in_dim, *hidden, 1], seed=cfg.seed)
    validate = None
    if validation_logs:
        vb, vn = pair_matrices(validation_logs, None)
        if len(vb):
            validate = lambda: mean_pairwise_loss(net, vb, vn)  # noqa: E731
    history = fit(net.params(), lambda idx: pairwise_gradients(net, xb[idx], xn[idx]), len(xb), cfg, validate)
    return RankingModel(net, ids, dims, history)
