"""Antecedent-similarity model s(q, u, l, l_a) with a shared, cached listing tower.

The tower maps listing features to an embedding. A shallow combiner takes
``[embed(l), embed(l_a), query, user]`` and emits the similarity logit, which
is subtracted from the frozen base logit when ranking below an antecedent.
"""

from __future__ import annotations

import copy
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import checkpoint
from .base import RankingModel, check_context, check_listing, context_vector, listing_matrix
from .data import ListingImpression, QueryContext, SearchLog, build_conditional_pairs
from .nn import Network, TrainConfig, TrainHistory, fit, pairwise_loss, sigmoid, softplus

TOWER_HIDDEN = 32
EMBED_DIM = 16
COMBINER_HIDDEN = 16


class EmbeddingCache:
    """listing_id -> tower output. Reads are lock-free; inserts take a lock."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.tower_evaluations = 0

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, listing_id: str) -> bool:
        return listing_id in self._store

    def get(self, listing_id: str) -> np.ndarray | None:
        return self._store.get(listing_id)

    def put_many(self, ids: Sequence[str], embeddings: np.ndarray) -> None:
        with self._lock:
            for lid, e in zip(ids, embeddings):
                if lid not in self._store:
                    e = e.copy()
                    e.flags.writeable = False
                    self._store[lid] = e
            self.tower_evaluations += len(ids)


@dataclass
class SimilarityModel:
    tower: Network
    combiner: Network
    schema_ids: dict[str, str]
    dims: dict[str, int]
    history: TrainHistory | None = field(default=None, compare=False)

    def __post_init__(self):
        d = self.tower.output_dim
        want = 2 * d + self.dims["query"] + self.dims["user"]
        if self.combiner.input_dim != want or self.combiner.output_dim != 1:
            raise ValueError(f"combiner must map {want} inputs to 1 output")
        if self.tower.input_dim != self.dims["listing"]:
            raise ValueError("tower input dim must equal the listing schema dim")

    @property
    def d(self) -> int:
        return self.tower.output_dim

    @classmethod
    def create(
        cls,
        schema_ids: dict[str, str],
        dims: dict[str, int],
        seed: int = 0,
        tower_hidden: int = TOWER_HIDDEN,
        embed_dim: int = EMBED_DIM,
        combiner_hidden: int = COMBINER_HIDDEN,
        zero: bool = False,
    ) -> "SimilarityModel":
        """Fresh model whose output layer is zero, so s starts as the zero map.

        With ``zero`` every weight is zero.
        """
        tower_dims = [dims["listing"], tower_hidden, embed_dim]
        comb_dims = [2 * embed_dim + dims["query"] + dims["user"], combiner_hidden, 1]
        if zero:
            tower = Network.zeros(tower_dims, ["relu", "relu"])
            comb = Network.zeros(comb_dims)
        else:
            tower = Network.create(tower_dims, ["relu", "relu"], seed=seed)
            comb = Network.create(comb_dims, seed=seed + 1, zero_output=True)
        return cls(tower, comb, dict(schema_ids), dict(dims))

    def params(self) -> list[np.ndarray]:
        return self.tower.params() + self.combiner.params()

    def embed_many(self, listings: Sequence[ListingImpression], cache: EmbeddingCache | None = None) -> np.ndarray:
        for imp in listings:
            check_listing(self.schema_ids, self.dims, imp)
        if cache is None:
            cache = EmbeddingCache()
        missing: dict[str, ListingImpression] = {}
        for imp in listings:
            if imp.listing_id not in cache and imp.listing_id not in missing:
                missing[imp.listing_id] = imp
        if missing:
            emb = self.tower.forward_batch(listing_matrix(list(missing.values())))
            cache.put_many(list(missing), emb)
        if not listings:
            return np.zeros((0, self.d))
        return np.vstack([cache.get(imp.listing_id) for imp in listings])

    def combine(self, ctx_vec: np.ndarray, emb_l: np.ndarray, emb_a: np.ndarray) -> np.ndarray:
        """Similarity logits for rows of ``emb_l`` against one or many antecedent embeddings."""
        emb_l = np.atleast_2d(emb_l)
        emb_a = np.broadcast_to(emb_a, emb_l.shape)
        c = np.broadcast_to(ctx_vec, (len(emb_l), len(ctx_vec)))
        return self.combiner.forward_batch(np.hstack([emb_l, emb_a, c]))[:, 0]

    def save(self, path, meta: dict | None = None) -> str:
        meta = dict(meta or {})
        meta.setdefault("dims", self.dims)
        meta.setdefault("embedding_dim", self.d)
        nets = {"tower": self.tower, "combiner": self.combiner}
        return checkpoint.save_checkpoint(path, "similarity", nets, self.schema_ids, meta)

    @classmethod
    def load(cls, path) -> "SimilarityModel":
        doc = checkpoint.load_checkpoint(path, expect_kind="similarity")
        nets = doc["networks"]
        return cls(nets["tower"], nets["combiner"], doc["schema_ids"], doc["meta"]["dims"])


def embed(model: SimilarityModel, listing: ListingImpression, cache: EmbeddingCache) -> np.ndarray:
    return model.embed_many([listing], cache)[0]


def similarity_logit(
    model: SimilarityModel,
    ctx: QueryContext,
    listing: ListingImpression,
    antecedent: ListingImpression,
    cache: EmbeddingCache | None = None,
) -> float:
    check_context(model.schema_ids, model.dims, ctx)
    e = model.embed_many([listing, antecedent], cache)
    return float(model.combine(context_vector(ctx), e[0], e[1])[0])


# -- training ------------------------------------------------------------------


@dataclass
class ConditionalSet:
    """Dense arrays for conditional pairs; base logits are precomputed constants."""

    x_booked: np.ndarray
    x_not_booked: np.ndarray
    x_antecedent: np.ndarray
    ctx: np.ndarray
    ubl_booked: np.ndarray
    ubl_not_booked: np.ndarray
    # index of the source search, for per-search aggregation
    search: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x_booked)


def conditional_set(base: RankingModel, logs: Sequence[SearchLog]) -> ConditionalSet:
    examples = build_conditional_pairs(logs)
    if not examples:
        dim = base.dims["listing"]
        z = np.zeros((0, dim))
        c = np.zeros((0, base.dims["query"] + base.dims["user"]))
        return ConditionalSet(z, z, z, c, np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64))
    ubl: dict[tuple[str, str], float] = {}
    by_search: dict[str, SearchLog] = {log.search_id: log for log in logs}
    for sid in dict.fromkeys(ex.search_id for ex in examples):
        log = by_search[sid]
        for imp, s in zip(log.impressions, base.score_many(log.context, log.impressions)):
            ubl[(sid, imp.listing_id)] = float(s)
    ctx_cache: dict[str, np.ndarray] = {}
    cols = {k: [] for k in ("xb", "xn", "xa", "c", "ub", "un")}
    search_index: list[int] = []
    for ex in examples:
        if ex.search_id not in ctx_cache:
            ctx_cache[ex.search_id] = context_vector(ex.context)
        search_index.append(len(ctx_cache) - 1)
        cols["xb"].append(ex.booked.features.values)
        cols["xn"].append(ex.not_booked.features.values)
        cols["xa"].append(ex.antecedent.features.values)
        cols["c"].append(ctx_cache[ex.search_id])
        cols["ub"].append(ubl[(ex.search_id, ex.booked.listing_id)])
        cols["un"].append(ubl[(ex.search_id, ex.not_booked.listing_id)])
    arr = {k: np.asarray(v, dtype=np.float64) for k, v in cols.items()}
    return ConditionalSet(arr["xb"], arr["xn"], arr["xa"], arr["c"], arr["ub"], arr["un"], np.asarray(search_index))


def _similarities(model: SimilarityModel, data: ConditionalSet, idx, keep=False):
    n = len(idx)
    emb, tcache = model.tower.forward_batch(
        np.vstack([data.x_booked[idx], data.x_not_booked[idx], data.x_antecedent[idx]]), keep=True
    )
    e_b, e_n, e_a = emb[:n], emb[n : 2 * n], emb[2 * n :]
    c = data.ctx[idx]
    comb_in = np.vstack([np.hstack([e_b, e_a, c]), np.hstack([e_n, e_a, c])])
    s, ccache = model.combiner.forward_batch(comb_in, keep=True)
    return (s[:n, 0], s[n:, 0], tcache, ccache) if keep else (s[:n, 0], s[n:, 0])


def conditional_loss_and_grads(model: SimilarityModel, data: ConditionalSet, idx):
    """Mean loss of (ubl - s) pairwise logits; gradients w.r.t. the similarity weights only."""
    n = len(idx)
    d = model.d
    s_b, s_n, tcache, ccache = _similarities(model, data, idx, keep=True)
    diff = (data.ubl_booked[idx] - s_b) - (data.ubl_not_booked[idx] - s_n)
    loss = float(np.mean(softplus(-diff)))
    g = sigmoid(-diff) / n  # = dL/ds_booked = -dL/ds_not_booked
    comb_grads, g_in = model.combiner.backward_batch(ccache, np.concatenate([g, -g])[:, None])
    g_eb, g_ea1 = g_in[:n, :d], g_in[:n, d : 2 * d]
    g_en, g_ea2 = g_in[n:, :d], g_in[n:, d : 2 * d]
    tower_grads, _ = model.tower.backward_batch(tcache, np.vstack([g_eb, g_en, g_ea1 + g_ea2]))
    return loss, tower_grads + comb_grads


def conditional_pair_losses(model: SimilarityModel | None, data: ConditionalSet) -> np.ndarray:
    """Per-pair loss; ``None`` means s == 0."""
    if model is None:
        return np.atleast_1d(pairwise_loss(data.ubl_booked, data.ubl_not_booked))
    s_b, s_n = _similarities(model, data, np.arange(len(data)))
    return np.atleast_1d(pairwise_loss(data.ubl_booked - s_b, data.ubl_not_booked - s_n))


def improvement_z(model: SimilarityModel, data: ConditionalSet) -> float:
    """Paired z-score of the loss reduction of ``model`` over s == 0.

    Pairs from one search share an antecedent, so differences are summed per
    search before taking the standard error.
    """
    diff = conditional_pair_losses(None, data) - conditional_pair_losses(model, data)
    groups = data.search if data.search is not None else np.arange(len(data))
    per_search = np.bincount(groups, weights=diff)
    per_search = per_search[np.bincount(groups) > 0]
    if len(per_search) < 2:
        return 0.0
    se = per_search.std(ddof=1) * np.sqrt(len(per_search))
    return float(per_search.sum() / se) if se > 0 else 0.0


def conditional_loss(model: SimilarityModel | None, data: ConditionalSet) -> float:
    """Mean pairwise loss on the conditional set; ``None`` means s == 0."""
    if len(data) == 0:
        raise ValueError("empty conditional set")
    if model is None:
        return float(np.mean(pairwise_loss(data.ubl_booked, data.ubl_not_booked)))
    s_b, s_n = _similarities(model, data, np.arange(len(data)))
    return float(np.mean(pairwise_loss(data.ubl_booked - s_b, data.ubl_not_booked - s_n)))


def train_similarity(
    base: RankingModel,
    logs: Sequence[SearchLog],
    cfg: TrainConfig = TrainConfig(),
    validation_logs: Sequence[SearchLog] | None = None,
    init: SimilarityModel | None = None,
) -> SimilarityModel:
    """Fit s on conditional pairs with the base model frozen.

    The base model is evaluated once per impression to produce constant
    unconditional logits; its weights are never read again.
    """
    if base is None or not any(np.any(w) for w in base.net.weights):
        raise ValueError("train_similarity needs a trained base model")
    data = conditional_set(base, logs)
    if len(data) == 0:
        raise ValueError("logs yield no conditional pairs")
    if init is not None:
        model = copy.deepcopy(init)
    else:
        model = SimilarityModel.create(base.schema_ids, base.dims, seed=cfg.seed)
    validate = None
    if validation_logs:
        vdata = conditional_set(base, validation_logs)
        if len(vdata):
            validate = lambda: conditional_loss(model, vdata)  # noqa: E731
    model.history = fit(
        model.params(), lambda idx: conditional_loss_and_grads(model, data, idx), len(data), cfg, validate
    )
    return model
