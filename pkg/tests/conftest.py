from dataclasses import dataclass, replace

import numpy as np
import pytest

from divrank.data import FeatureVector, ListingImpression, QueryContext, SearchLog
from divrank.base import RankingModel, train_base
from divrank.experiment import PipelineConfig, run_pipeline
from divrank.nn import TrainConfig
from divrank.simulator import STREAM_HELDOUT, STREAM_TRAIN, Market, MarketConfig, generate_market, simulate_logs

Q, U, L = "q.v1", "u.v1", "l.v1"


def ctx(q=(0.0, 1.0), u=(0.5,)):
    return QueryContext(FeatureVector(tuple(q), Q), FeatureVector(tuple(u), U))


def impression(lid, pos, feats, booked=False, price=100.0, loc=(0.0, 0.0)):
    return ListingImpression(lid, pos, FeatureVector(tuple(feats), L), booked, price, loc)


def make_log(sid, n, booked_at=None, rng=None, dim=3):
    rng = rng or np.random.default_rng(0)
    imps = tuple(
        impression(f"{sid}-L{i}", i, rng.normal(size=dim), booked=(i == booked_at),
                   price=float(rng.uniform(20, 400)), loc=tuple(rng.uniform(0, 5, 2)))
        for i in range(n)
    )
    return SearchLog(sid, ctx(), imps)


def random_logs(n_searches, k=6, seed=0, dim=3, booked_fraction=0.8):
    rng = np.random.default_rng(seed)
    logs = []
    for s in range(n_searches):
        b = int(rng.integers(0, k)) if rng.random() < booked_fraction else None
        logs.append(make_log(f"S{s}", k, b, rng, dim))
    return logs


SMALL_MARKET = MarketConfig(n_listings=800, cluster_count=80, n_searches=0)


@dataclass
class SmallBase:
    market: Market
    base: RankingModel
    heldout: list


@pytest.fixture(scope="session")
def small_base():
    """A base model trained on exploration logs of a small clustered market."""
    market = generate_market(SMALL_MARKET)
    train = simulate_logs(market, 5000, STREAM_TRAIN)
    base = train_base(train[:4000], TrainConfig(learning_rate=2e-3, epochs=6), validation_logs=train[4000:])
    return SmallBase(market, base, simulate_logs(market, 1000, STREAM_HELDOUT))


ACCEPTANCE_SEEDS = (0, 1, 2, 3, 4)


def null_market() -> MarketConfig:
    """Every listing is its own cluster, so there is no redundancy to exploit."""
    m = MarketConfig()
    return replace(m, cluster_count=m.n_listings)


@pytest.fixture(scope="session")
def clustered_runs():
    return [run_pipeline(PipelineConfig().with_seed(s)) for s in ACCEPTANCE_SEEDS]


@pytest.fixture(scope="session")
def null_runs():
    cfg = PipelineConfig(market=null_market(), sweep_grid=None)
    return [run_pipeline(cfg.with_seed(s)) for s in ACCEPTANCE_SEEDS]


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
