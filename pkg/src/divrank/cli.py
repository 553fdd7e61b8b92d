"""divrank command line.

Every command reads a declarative JSON config (``--config``), applies
``--set section.field=value`` overrides, and writes a manifest next to its
outputs. Failures print one line ``divrank-error <category>: <message>`` on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import platform
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .base import RankingModel, SchemaMismatch, train_base
from .checkpoint import CheckpointError, file_hash
from .data import LogFormatError, load_logs, save_logs
from .experiment import PipelineConfig, paired_summary, run_pipeline
from .metrics import MetricReport, diversity_metrics, ndcg, report_csv
from .nn import TrainConfig
from .rerank import DEFAULT_GRID, RerankPlan, rank_algorithm1, rank_algorithm2
from .similarity import EmbeddingCache, SimilarityModel, train_similarity
from .simulator import (
    STREAM_EVAL,
    STREAM_HELDOUT,
    STREAM_SIMILARITY,
    STREAM_TRAIN,
    MarketConfig,
    expected_search_bookings,
    generate_market,
    run_experiment,
    write_ground_truth,
)

SEED_ENV = "DIVRANK_SEED"
_ARGV: list[str] = []
STREAMS = {"train": STREAM_TRAIN, "heldout": STREAM_HELDOUT, "eval": STREAM_EVAL, "similarity": STREAM_SIMILARITY}
SECTIONS = ("seed", "market", "simulate", "base_train", "sim_train", "base_model", "plan", "pipeline")

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "config": 3,
    "input": 4,
    "schema": 5,
    "model": 6,
    "io": 7,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# -- config -------------------------------------------------------------------


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg: dict = {}
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise CliError("io", f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise CliError("config", f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
        if not isinstance(cfg, dict):
            raise CliError("config", f"{path}: top level must be an object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise CliError("config", f"unknown config section(s): {', '.join(sorted(unknown))}")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError("usage", f"override {item!r} is not key=value")
        parts = key.split(".")
        if parts[0] not in SECTIONS:
            raise CliError("config", f"unknown config section {parts[0]!r} in override {key!r}")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise CliError("config", f"override {key!r} descends into a scalar")
        node[parts[-1]] = _parse_value(raw)
    return cfg


def resolve_seed(cfg: dict, flag: int | None) -> int:
    if flag is not None:
        return flag
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError("config", f"{SEED_ENV}={env!r} is not an integer") from None
    return 0


def _build(cls, section: str, d: dict | None, **forced):
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise CliError("config", f"unknown field(s) in '{section}': {', '.join(sorted(unknown))}")
    d.update(forced)
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise CliError("config", f"invalid '{section}' config: {e}") from None


def require(cfg: dict, *path: str):
    node = cfg
    for i, p in enumerate(path):
        if not isinstance(node, dict) or p not in node:
            raise CliError("config", f"missing config field '{'.'.join(path[: i + 1])}'")
        node = node[p]
    return node


def market_config(cfg: dict, seed: int) -> MarketConfig:
    require(cfg, "market")
    return _build(MarketConfig, "market", cfg["market"], seed=seed)


def train_config(cfg: dict, section: str, seed: int, default: TrainConfig) -> TrainConfig:
    merged = {**dataclasses.asdict(default), **(cfg.get(section) or {}), "seed": seed}
    return _build(TrainConfig, section, merged)


def plan_config(cfg: dict, args) -> RerankPlan:
    d = dict(cfg.get("plan") or {})
    if getattr(args, "lam", None) is not None:
        d["lam"] = args.lam
    if getattr(args, "convention", None) is not None:
        d["exponent_convention"] = args.convention
    if getattr(args, "max_positions", None) is not None:
        d["max_positions"] = args.max_positions
    if "lam" in d:
        d["lam"] = parse_fraction(d["lam"])
    return _build(RerankPlan, "plan", d)


def parse_fraction(v) -> float:
    if isinstance(v, (int, float)):
        return float(v)
    try:
        return float(Fraction(str(v).strip()))
    except (ValueError, ZeroDivisionError):
        raise CliError("config", f"not a number: {v!r}") from None


def parse_grid(raw: str | list | None) -> tuple[float, ...]:
    if raw is None:
        return DEFAULT_GRID
    items = raw if isinstance(raw, list) else [s for s in str(raw).split(",") if s.strip()]
    grid = tuple(parse_fraction(x) for x in items)
    if not grid:
        raise CliError("config", "empty lambda grid")
    for lam in grid:
        if not 0.0 <= lam <= 1.0:
            raise CliError("config", f"lambda {lam} outside [0, 1]")
    return grid


# -- manifests ------------------------------------------------------------------


def sha256_file(path) -> str:
    return file_hash(path)


def versions() -> dict:
    import numba

    return {
        "divrank": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def write_manifest(path: Path, command: str, args, cfg: dict, seeds, inputs, outputs, checkpoints=None, extra=None):
    doc = {
        "command": command,
        "argv": list(_ARGV),
        "config_path": getattr(args, "config", None),
        "config": cfg,
        "seeds": list(seeds),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "checkpoints": checkpoints or {},
        "versions": versions(),
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError("io", f"cannot create output directory {p}: {e.strerror}") from None
    if not os.access(p, os.W_OK):
        raise CliError("io", f"output directory {p} is not writable")
    return p


def _out_file(path: str) -> Path:
    p = Path(path)
    _out_dir(str(p.parent) if str(p.parent) else ".")
    return p


def _manifest_for(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


# -- loading inputs ---------------------------------------------------------------


def read_logs(path: str):
    try:
        return load_logs(path)
    except FileNotFoundError:
        raise CliError("io", f"log file not found: {path}") from None
    except LogFormatError as e:
        raise CliError("input", str(e).replace("\n", " ")) from None


def read_base(path: str | None) -> RankingModel:
    if not path:
        raise CliError("model", "a base checkpoint is required (--base)")
    try:
        return RankingModel.load(path)
    except FileNotFoundError:
        raise CliError("io", f"checkpoint not found: {path}") from None
    except CheckpointError as e:
        raise CliError("model", str(e)) from None


def read_sim(path: str) -> SimilarityModel:
    try:
        return SimilarityModel.load(path)
    except FileNotFoundError:
        raise CliError("io", f"checkpoint not found: {path}") from None
    except CheckpointError as e:
        raise CliError("model", str(e)) from None


def read_ground_truth(path: str | None) -> dict[str, np.ndarray]:
    if not path:
        return {}
    out = {}
    try:
        with open(path) as f:
            next(f)  # market record
            for line in f:
                t = json.loads(line)
                out[t["search_id"]] = np.asarray(t["booking_probabilities"], dtype=np.float64)
    except FileNotFoundError:
        raise CliError("io", f"ground truth not found: {path}") from None
    except (json.JSONDecodeError, KeyError, StopIteration) as e:
        raise CliError("input", f"malformed ground truth {path}: {e}") from None
    return out


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args, cfg: dict) -> None:
    seed = resolve_seed(cfg, args.seed)
    mcfg = market_config(cfg, seed)
    sim = cfg.get("simulate") or {}
    unknown = set(sim) - {"stream", "policy", "start", "n_searches"}
    if unknown:
        raise CliError("config", f"unknown field(s) in 'simulate': {', '.join(sorted(unknown))}")
    stream = sim.get("stream", "train")
    if stream not in STREAMS:
        raise CliError("config", f"simulate.stream must be one of {sorted(STREAMS)}")
    policy = sim.get("policy", "logging")
    n = int(sim.get("n_searches", mcfg.n_searches))
    if n < 0:
        raise CliError("config", "simulate.n_searches must be >= 0")
    models = None
    checkpoints = {}
    if policy in ("algorithm1", "algorithm2"):
        base = read_base(args.base)
        s = read_sim(args.sim) if policy == "algorithm2" and args.sim else None
        if policy == "algorithm2" and s is None:
            raise CliError("model", "policy algorithm2 needs --sim")
        models = (base, s)
        checkpoints["base"] = sha256_file(args.base)
        if s is not None:
            checkpoints["similarity"] = sha256_file(args.sim)
    elif policy not in ("logging", "random"):
        raise CliError("config", f"unknown simulate.policy {policy!r}")
    out = _out_dir(args.out)
    market = generate_market(mcfg)
    res = run_experiment(market, policy, models, plan_config(cfg, args), STREAMS[stream], n, int(sim.get("start", 0)))
    logs_path = save_logs(out / "logs.jsonl", res.logs, market.schemas)
    gt_path = write_ground_truth(out / "ground_truth.jsonl", market, res.truths)
    write_manifest(
        out / "manifest.json", "simulate", args, cfg, [seed], [],
        [logs_path, out / "schemas.json", gt_path], checkpoints,
        {"market_config": mcfg.to_dict(), "stream": stream, "policy": policy, "n_searches": n},
    )
    print(f"wrote {len(res.logs)} searches to {logs_path}")


def cmd_train_base(args, cfg: dict) -> None:
    seed = resolve_seed(cfg, args.seed)
    tcfg = train_config(cfg, "base_train", seed, PipelineConfig().base_train)
    bm = dict(cfg.get("base_model") or {})
    unknown = set(bm) - {"hidden", "max_pairs_per_search"}
    if unknown:
        raise CliError("config", f"unknown field(s) in 'base_model': {', '.join(sorted(unknown))}")
    logs = read_logs(args.logs)
    val = read_logs(args.validation) if args.validation else None
    try:
        model = train_base(
            logs, tcfg, hidden=tuple(bm.get("hidden", (64, 32))),
            max_pairs_per_search=bm.get("max_pairs_per_search", 30), validation_logs=val,
        )
    except ValueError as e:
        raise CliError("input", str(e)) from None
    out = _out_file(args.out)
    h = model.history
    meta = {"train_config": dataclasses.asdict(tcfg), "final_train_loss": h.final_loss,
            "final_validation_loss": h.final_validation_loss, "best_epoch": h.best_epoch}
    digest = model.save(out, meta)
    inputs = [args.logs] + ([args.validation] if args.validation else [])
    write_manifest(_manifest_for(out), "train-base", args, cfg, [seed], inputs, [out], {"base": digest},
                   {"losses": {"train": h.epoch_loss, "validation": h.validation_loss}})
    print(f"base checkpoint {out} sha256={digest}")


def cmd_train_sim(args, cfg: dict) -> None:
    seed = resolve_seed(cfg, args.seed)
    tcfg = train_config(cfg, "sim_train", seed, PipelineConfig().sim_train)
    base = read_base(args.base)
    logs = read_logs(args.logs)
    val = read_logs(args.validation) if args.validation else None
    try:
        model = train_similarity(base, logs, tcfg, validation_logs=val)
    except SchemaMismatch as e:
        raise CliError("schema", str(e)) from None
    except ValueError as e:
        raise CliError("input", str(e)) from None
    out = _out_file(args.out)
    h = model.history
    base_hash = sha256_file(args.base)
    meta = {"train_config": dataclasses.asdict(tcfg), "base_checkpoint": base_hash,
            "final_train_loss": h.final_loss, "final_validation_loss": h.final_validation_loss,
            "best_epoch": h.best_epoch}
    digest = model.save(out, meta)
    inputs = [args.logs, args.base] + ([args.validation] if args.validation else [])
    write_manifest(_manifest_for(out), "train-sim", args, cfg, [seed], inputs, [out],
                   {"base": base_hash, "similarity": digest},
                   {"losses": {"train": h.epoch_loss, "validation": h.validation_loss}})
    print(f"similarity checkpoint {out} sha256={digest}")


def _rank(log, base, sim, plan, cache):
    if sim is None:
        return rank_algorithm1(base, log.context, log.impressions)
    return rank_algorithm2(base, sim, log.context, log.impressions, plan, cache)


def cmd_rerank(args, cfg: dict) -> None:
    """Writes the logs re-positioned in ranked order plus a penalty ledger."""
    base = read_base(args.base)
    sim = read_sim(args.sim) if args.sim else None
    plan = plan_config(cfg, args)
    logs = read_logs(args.logs)
    out = _out_file(args.out)
    ledger_path = out.with_name(out.name + ".ledger.jsonl")
    cache = EmbeddingCache()
    reranked, ledger = [], io.StringIO()
    try:
        for log in logs:
            r = _rank(log, base, sim, plan, cache)
            by_id = {imp.listing_id: imp for imp in log.impressions}
            imps = tuple(dataclasses.replace(by_id[lid], position=k) for k, lid in enumerate(r.listing_ids))
            reranked.append(dataclasses.replace(log, impressions=imps))
            rec = {
                "search_id": log.search_id,
                "ranking": list(r.listing_ids),
                "base_logits": r.base_logits.tolist(),
                "final_logits": r.final_logits.tolist(),
                "penalties": [[[a, w, s] for a, w, s in r.breakdown(p)] for p in range(len(r.listing_ids))],
            }
            ledger.write(json.dumps(rec, separators=(",", ":")) + "\n")
    except SchemaMismatch as e:
        raise CliError("schema", str(e)) from None
    save_logs(out, reranked)
    ledger_path.write_text(ledger.getvalue())
    ckpts = {"base": sha256_file(args.base)} | ({"similarity": sha256_file(args.sim)} if args.sim else {})
    write_manifest(_manifest_for(out), "rerank", args, cfg, [], [args.logs], [out, ledger_path], ckpts,
                   {"plan": dataclasses.asdict(plan)})
    print(f"ranked {len(logs)} searches into {out}")


def evaluate_logs(logs, base, sim, plan, truth, attention) -> MetricReport:
    cache = EmbeddingCache()
    rankings, ranked, expected = [], [], []
    for log in logs:
        r = _rank(log, base, sim, plan, cache)
        by_id = {imp.listing_id: imp for imp in log.impressions}
        ordered = [by_id[i] for i in r.listing_ids]
        ranked.append(ordered)
        b = log.booked
        rankings.append((r.listing_ids, b.listing_id if b else None))
        if log.search_id in truth:
            p = truth[log.search_id]
            p_new = np.asarray([p[imp.position] for imp in ordered])
            expected.append(expected_search_bookings(p_new, attention))
    div = diversity_metrics(ranked)
    return MetricReport(
        ndcg=ndcg(rankings),
        expected_bookings=float(np.mean(expected)) if expected else None,
        price_variance_top8=div.price_variance_top8,
        geo_redundancy_top8=div.geo_redundancy_top8,
        n_searches=len(logs),
        n_booked=sum(log.booked is not None for log in logs),
    )


def _csv_with_hash(rows, input_hash: str) -> str:
    text = report_csv(rows)
    lines = text.splitlines()
    out = [lines[0] + ",input_hash"] + [line + "," + input_hash for line in lines[1:]]
    return "\n".join(out) + "\n"


def cmd_evaluate(args, cfg: dict) -> None:
    base = read_base(args.base)
    sim = read_sim(args.sim) if args.sim else None
    plan = plan_config(cfg, args)
    logs = read_logs(args.logs)
    truth = read_ground_truth(args.ground_truth)
    attention = market_config(cfg, 0).attention_curve() if "market" in cfg else None
    if attention is None:
        from .metrics import log_discount

        attention = log_discount(max((len(l.impressions) for l in logs), default=1))
    rows = []
    try:
        rows.append(("algorithm1", evaluate_logs(logs, base, None, plan, truth, attention)))
        if sim is not None:
            rows.append((f"algorithm2_lam{plan.lam:.6g}_{plan.exponent_convention}",
                         evaluate_logs(logs, base, sim, plan, truth, attention)))
    except SchemaMismatch as e:
        raise CliError("schema", str(e)) from None
    out = _out_file(args.out)
    out.write_text(_csv_with_hash(rows, sha256_file(args.logs)))
    ckpts = {"base": sha256_file(args.base)} | ({"similarity": sha256_file(args.sim)} if args.sim else {})
    inputs = [args.logs] + ([args.ground_truth] if args.ground_truth else [])
    write_manifest(_manifest_for(out), "evaluate", args, cfg, [], inputs, [out], ckpts,
                   {"plan": dataclasses.asdict(plan)})
    print(out.read_text(), end="")


def cmd_sweep(args, cfg: dict) -> None:
    grid = parse_grid(args.grid if args.grid is not None else (cfg.get("pipeline") or {}).get("sweep_grid"))
    n = len(args.logs)
    if not (len(args.base) == len(args.sim) == n):
        raise CliError("usage", "--logs, --base and --sim must be given the same number of times")
    seeds = args.seeds if args.seeds else list(range(n))
    if len(seeds) != n:
        raise CliError("usage", "--seeds must list one label per --logs")
    conv = args.convention or (cfg.get("plan") or {}).get("exponent_convention", "derivation")
    table: dict[float, list[float]] = {lam: [] for lam in grid}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "lambda", "ndcg"])
    for seed, lp, bp, sp in zip(seeds, args.logs, args.base, args.sim):
        logs, base, sim = read_logs(lp), read_base(bp), read_sim(sp)
        for lam in grid:
            plan = _build(RerankPlan, "plan", {"lam": lam, "exponent_convention": conv})
            try:
                rep = evaluate_logs(logs, base, sim, plan, {}, None)
            except SchemaMismatch as e:
                raise CliError("schema", str(e)) from None
            table[lam].append(rep.ndcg)
            w.writerow([seed, repr(lam), repr(rep.ndcg)])
    means = {lam: float(np.mean(v)) for lam, v in table.items()}
    for lam, m in means.items():
        w.writerow(["mean", repr(lam), repr(m)])
    best = max(means, key=lambda lam: (means[lam], -lam))
    w.writerow(["argmax", repr(best), repr(means[best])])
    out = _out_file(args.out)
    out.write_text(buf.getvalue())
    ckpts = {f"base[{i}]": sha256_file(p) for i, p in enumerate(args.base)}
    ckpts |= {f"similarity[{i}]": sha256_file(p) for i, p in enumerate(args.sim)}
    write_manifest(_manifest_for(out), "sweep-lambda", args, cfg, seeds, args.logs, [out], ckpts,
                   {"grid": list(grid), "convention": conv})
    print(buf.getvalue(), end="")


def pipeline_config(cfg: dict, seed: int, null: bool) -> PipelineConfig:
    mcfg = market_config(cfg, seed)
    if null:
        mcfg = dataclasses.replace(mcfg, cluster_count=mcfg.n_listings)
    pipe = dict(cfg.get("pipeline") or {})
    pipe.pop("seeds", None)
    grid = parse_grid(pipe.pop("sweep_grid")) if "sweep_grid" in pipe else DEFAULT_GRID
    defaults = PipelineConfig()
    return _build(
        PipelineConfig, "pipeline", pipe,
        market=mcfg,
        base_train=train_config(cfg, "base_train", seed, defaults.base_train),
        sim_train=train_config(cfg, "sim_train", seed, defaults.sim_train),
        plan=plan_config(cfg, argparse.Namespace()),
        sweep_grid=grid,
    )


REPORT_METRICS = ("offline_ndcg", "conditional_ndcg", "fresh_ndcg", "realized_bookings",
                  "expected_bookings", "price_variance_top8", "geo_redundancy_top8")


def cmd_report(args, cfg: dict) -> None:
    seeds = args.seeds if args.seeds else (cfg.get("pipeline") or {}).get("seeds") or [resolve_seed(cfg, args.seed)]
    out = _out_dir(args.out)
    rows = []
    diffs: dict[str, list[float]] = {m: [] for m in REPORT_METRICS}
    markets = [("clustered", False)] + ([("null", True)] if args.null_control else [])
    summary = []
    for name, null in markets:
        for m in diffs:
            diffs[m] = []
        for seed in seeds:
            pcfg = pipeline_config(cfg, int(seed), null)
            if null:
                pcfg = dataclasses.replace(pcfg, sweep_grid=None)
            res = run_pipeline(pcfg)
            per = {}
            for ranker in ("algorithm1", "algorithm2"):
                fr = res.fresh[ranker]
                per[ranker] = {
                    "offline_ndcg": res.offline_ndcg[ranker],
                    "conditional_ndcg": res.conditional_ndcg[ranker],
                    "fresh_ndcg": fr.ndcg,
                    "realized_bookings": fr.realized_bookings,
                    "expected_bookings": fr.expected_bookings,
                    "price_variance_top8": fr.price_variance_top8,
                    "geo_redundancy_top8": fr.geo_redundancy_top8,
                }
                for metric, v in per[ranker].items():
                    rows.append([name, seed, ranker, metric, repr(float(v))])
            for metric in REPORT_METRICS:
                diffs[metric].append(per["algorithm2"][metric] - per["algorithm1"][metric])
            if res.sweep is not None:
                for lam, v in res.sweep.ndcg.items():
                    rows.append([name, seed, f"sweep_lam{lam:.6g}", "offline_ndcg", repr(float(v))])
        summary.append(f"[{name} market, seeds {list(seeds)}] algorithm2 - algorithm1")
        for metric in REPORT_METRICS:
            s = paired_summary(diffs[metric])
            rows.append([name, "summary", "diff_mean", metric, repr(s["mean"])])
            rows.append([name, "summary", "diff_t", metric, repr(s["t"])])
            summary.append(f"  {metric:22s} mean {s['mean']:+.6g}  se {s['se']:.3g}  t {s['t']:+.2f}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["market", "seed", "variant", "metric", "value"])
    w.writerows(rows)
    csv_path = out / "report.csv"
    csv_path.write_text(buf.getvalue())
    txt = out / "summary.txt"
    txt.write_text("\n".join(summary) + "\n")
    write_manifest(out / "manifest.json", "report", args, cfg, seeds, [], [csv_path, txt])
    print(txt.read_text(), end="")


# -- entry point ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="divrank", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"divrank {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        sp.add_argument("--seed", type=int, default=None, help=f"seed (default: config, then ${SEED_ENV}, then 0)")

    def plan_flags(sp):
        sp.add_argument("--lam", type=parse_fraction, default=None, help="decay, e.g. 1/3")
        sp.add_argument("--convention", choices=["derivation", "algorithm2_literal"], default=None)
        sp.add_argument("--max-positions", type=int, default=None)

    s = sub.add_parser("simulate", help="generate logs and a ground-truth sidecar")
    common(s, config_required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--base", help="base checkpoint for policy algorithm1/algorithm2")
    s.add_argument("--sim", help="similarity checkpoint for policy algorithm2")
    plan_flags(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train-base", help="train the booking model")
    common(s)
    s.add_argument("--logs", required=True)
    s.add_argument("--validation")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.set_defaults(func=cmd_train_base)

    s = sub.add_parser("train-sim", help="train the similarity model on a frozen base")
    common(s)
    s.add_argument("--logs", required=True)
    s.add_argument("--base", required=False)
    s.add_argument("--validation")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_sim)

    s = sub.add_parser("rerank", help="rank logged searches and write orderings")
    common(s)
    s.add_argument("--logs", required=True)
    s.add_argument("--base", required=False)
    s.add_argument("--sim")
    s.add_argument("--out", required=True)
    plan_flags(s)
    s.set_defaults(func=cmd_rerank)

    s = sub.add_parser("evaluate", help="metric report CSV for algorithm1 and algorithm2")
    common(s)
    s.add_argument("--logs", required=True)
    s.add_argument("--base", required=False)
    s.add_argument("--sim")
    s.add_argument("--ground-truth")
    s.add_argument("--out", required=True)
    plan_flags(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-lambda", help="offline NDCG over a lambda grid")
    common(s)
    s.add_argument("--logs", action="append", required=True)
    s.add_argument("--base", action="append", required=True)
    s.add_argument("--sim", action="append", required=True)
    s.add_argument("--seeds", type=lambda v: [int(x) for x in v.split(",")], default=None)
    s.add_argument("--grid", default=None, help="comma separated, fractions allowed (default 0,1/9,1/3,2/3,1)")
    s.add_argument("--convention", choices=["derivation", "algorithm2_literal"], default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="full simulate/train/compare pipeline over seeds")
    common(s, config_required=False)
    s.add_argument("--seeds", type=lambda v: [int(x) for x in v.split(",")], default=None)
    s.add_argument("--null-control", action="store_true", help="also run the redundancy-free market")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    global _ARGV
    _ARGV = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("usage", "a subcommand is required; see --help")
        cfg = load_config(args.config, args.set)
        if args.command == "report" and "market" not in cfg:
            cfg["market"] = {}
        args.func(args, cfg)
    except CliError as e:
        print(f"divrank-error {e.category}: {_one_line(e)}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except SchemaMismatch as e:
        print(f"divrank-error schema: {_one_line(e)}", file=sys.stderr)
        return EXIT_CODES["schema"]
    except OSError as e:
        print(f"divrank-error io: {_one_line(e)}", file=sys.stderr)
        return EXIT_CODES["io"]
    except Exception as e:  # noqa: BLE001
        print(f"divrank-error internal: {type(e).__name__}: {_one_line(e)}", file=sys.stderr)
        return EXIT_CODES["internal"]
    return 0


def _one_line(e: Exception) -> str:
    return " ".join(str(e).split())


if __name__ == "__main__":
    sys.exit(main())
