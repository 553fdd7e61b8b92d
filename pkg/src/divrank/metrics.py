"""Ranking metrics, diversity measures and brute-force ordering oracles.

Positions are 0-based throughout; the discount at position j is
log(2) / log(2 + j).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_ORACLE_K = 8
TOP_N = 8
PROXIMITY_KM = 0.5


def log_discount(k: int) -> np.ndarray:
    """log(2)/log(2+j) for j = 0..k-1."""
    return math.log(2.0) / np.log(2.0 + np.arange(k))


@dataclass(frozen=True)
class AttentionCurve:
    values: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size == 0 or np.any(v <= 0) or np.any(v > 1):
            raise ValueError("attention values must lie in (0, 1]")
        if np.any(np.diff(v) >= 0):
            raise ValueError("attention must be strictly decreasing")

    @classmethod
    def log_discount(cls, k: int) -> "AttentionCurve":
        return cls(tuple(log_discount(k).tolist()))

    def __len__(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


# -- NDCG and expected bookings ---------------------------------------------------


def ndcg_from_positions(positions: Iterable[int]) -> float:
    """Mean of log2/log(2+pos) over searches that have a booking."""
    pos = np.asarray(list(positions), dtype=np.float64)
    if pos.size == 0:
        return float("nan")
    return float(np.mean(math.log(2.0) / np.log(2.0 + pos)))


def booked_position(ordering: Sequence[str], booked_id: str) -> int:
    try:
        return list(ordering).index(booked_id)
    except ValueError:
        raise ValueError(f"booked listing {booked_id!r} is absent from the ordering") from None


def ndcg(rankings: Iterable[tuple[Sequence[str], str | None]]) -> float:
    """NDCG over (ordered listing ids, booked id) pairs; unbooked searches are skipped."""
    return ndcg_from_positions(
        booked_position(order, booked) for order, booked in rankings if booked is not None
    )


def _attention_array(attention) -> np.ndarray:
    return attention.array() if isinstance(attention, AttentionCurve) else np.asarray(attention, dtype=np.float64)


def expected_bookings(probabilities: Sequence[float], attention, ordering: Sequence[int] | None = None) -> float:
    """Sum over positions of P_booking(listing at j) * attention(j).

    ``ordering[j]`` is the index into ``probabilities`` of the listing placed at j.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    a = _attention_array(attention)
    if ordering is None:
        ordering = range(len(p))
    ordering = np.asarray(list(ordering), dtype=np.int64)
    if len(ordering) != len(p) or len(a) < len(p):
        raise ValueError("probabilities, attention and ordering lengths disagree")
    return float(np.dot(p[ordering], a[: len(p)]))


def expected_ndcg(probabilities: Sequence[float], ordering: Sequence[int] | None = None) -> float:
    """Per-search expected NDCG: booking probabilities weighted by the log discount."""
    return expected_bookings(probabilities, log_discount(len(probabilities)), ordering)


def swap_delta_bookings(b_x: float, b_y: float, a_x: float, a_y: float) -> float:
    """Change in expected bookings when listings at attention a_x and a_y trade places."""
    return (b_y - b_x) * (a_x - a_y)


def swap_delta_ndcg(p_x: float, p_y: float, pos_x: int, pos_y: int) -> float:
    """Gain in expected NDCG from swapping the listings at pos_x < pos_y."""
    if pos_x == pos_y:
        raise ValueError("swap positions must differ")
    if pos_x > pos_y:
        raise ValueError("expected pos_x < pos_y")
    ln2 = math.log(2.0)
    return (p_y - p_x) * (ln2 / math.log(2 + pos_x) - ln2 / math.log(2 + pos_y))


def oracle_best_ordering(probabilities: Sequence[float], attention=None) -> tuple[tuple[int, ...], float]:
    """Exhaustive argmax of sum_j p[order[j]] * w[j] over all orderings.

    ``attention`` defaults to the log discount, which makes the objective the
    expected NDCG. The first maximizer in lexicographic order is returned.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    k = len(p)
    if k > MAX_ORACLE_K:
        raise ValueError(f"oracle enumeration limited to K <= {MAX_ORACLE_K}, got {k}")
    w = log_discount(k) if attention is None else _attention_array(attention)[:k]
    best, best_val = None, -math.inf
    for perm in itertools.permutations(range(k)):
        val = float(np.dot(p[list(perm)], w))
        if val > best_val:
            best, best_val = perm, val
    return best, best_val


def sorted_ordering(probabilities: Sequence[float]) -> tuple[int, ...]:
    p = np.asarray(probabilities, dtype=np.float64)
    return tuple(int(i) for i in np.argsort(-p, kind="stable"))


# -- diversity ------------------------------------------------------------------


@dataclass(frozen=True)
class DiversityStats:
    price_variance_top8: float
    geo_redundancy_top8: float
    n_searches: int
    n_short: int


def price_variance(prices: Sequence[float]) -> float:
    """Population variance."""
    return float(np.var(np.asarray(prices, dtype=np.float64)))


def proximate_pairs(locations: Sequence[tuple[float, float]], radius_km: float = PROXIMITY_KM) -> int:
    loc = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    if len(loc) < 2:
        return 0
    d = np.sqrt(((loc[:, None, :] - loc[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(len(loc), k=1)
    return int(np.sum(d[iu] < radius_km))


def diversity_metrics(ranked: Iterable[Sequence], top_n: int = TOP_N) -> DiversityStats:
    """Mean top-N price variance and proximate-pair count.

    Each element of ``ranked`` is a position-ordered sequence of objects with
    ``price`` and ``location`` attributes. Searches shorter than ``top_n``
    contribute their whole list and are counted in ``n_short``.
    """
    variances, pairs, short = [], [], 0
    for listings in ranked:
        head = list(listings)[:top_n]
        if not head:
            continue
        if len(head) < top_n:
            short += 1
        variances.append(price_variance([l.price for l in head]))
        pairs.append(proximate_pairs([l.location for l in head]))
    if not variances:
        return DiversityStats(float("nan"), float("nan"), 0, 0)
    return DiversityStats(float(np.mean(variances)), float(np.mean(pairs)), len(variances), short)


# -- Pareto split -----------------------------------------------------------------


@dataclass(frozen=True)
class ParetoSplit:
    booking_fraction: np.ndarray
    value_fraction: np.ndarray
    split_point: float


def pareto_split(values: Sequence[float]) -> ParetoSplit:
    """Fraction of bookings (largest first) needed to cover half the total value."""
    v = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    if v.size == 0:
        raise ValueError("pareto_split needs at least one booking")
    if np.any(v < 0):
        raise ValueError("booking values must be non-negative")
    cum = np.cumsum(v) / v.sum()
    frac = np.arange(1, len(v) + 1) / len(v)
    k = int(np.searchsorted(cum, 0.5 - 1e-12))
    return ParetoSplit(frac, cum, float(frac[k]))


# -- reports --------------------------------------------------------------------


@dataclass
class MetricReport:
    ndcg: float
    expected_bookings: float | None = None
    realized_bookings: float | None = None
    price_variance_top8: float | None = None
    geo_redundancy_top8: float | None = None
    n_searches: int = 0
    n_booked: int = 0
    pareto: list[tuple[float, float]] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("pareto")
        return {k: v for k, v in d.items() if v is not None}


def report_csv(rows: Sequence[tuple[str, MetricReport]]) -> str:
    """One row per (experiment, metric)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "metric", "value"])
    for name, rep in rows:
        for metric, value in rep.scalars().items():
            w.writerow([name, metric, repr(float(value))])
    return buf.getvalue()
