"""End-to-end experiment pipeline: load, split, group, train, recommend,
re-rank, evaluate and write the run artifacts."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines, plotting
from .bpr import FactorModel, RecommendationSet, TrainConfig, recommend_all, save_checkpoint, train
from .ile import Distance, GroupLossTrace, IleConfig
from .ingest import (InteractionDataset, SplitDataset, assign_popularity_groups, load_interactions,
                     profile_distribution, split_train_test)
from .metrics import MetricsReport, evaluate, write_metrics_csv
from .synth import synth_dataset

log = logging.getLogger(__name__)

METHODS = ("BPR", "ILE", "IPS", "CP", "PUFR")

# Plain SGD on batch-mean losses needs a far larger step than the adaptive
# optimizer behind the published learning rate; this preset is tuned for the
# synthetic dataset defaults.
PRESETS = {
    "published": {},
    "desk": {"learning_rate": 1.0, "dim": 32, "epochs": 100, "batch_size": 256},
}


class ExperimentError(RuntimeError):
    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


@dataclass
class ExperimentConfig:
    dataset: str = "synth"
    format: str = "auto"
    delimiter: str = "auto"
    header: bool = False
    synth_users: int = 200
    synth_items: int = 100
    synth_interactions: int = 8000
    synth_zipf: float = 1.2
    synth_seed: int = 0
    train_ratio: float = 0.8
    split_seed: int = 0
    learning_rate: float = 1e-4
    dim: int = 128
    epochs: int = 200
    batch_size: int = 256
    l2_reg: float = 1e-4
    seed: int = 0
    method: str = "ILE"
    lam: float = 0.25
    distance: str = "STD"
    ent_floor: float = 1e-8
    cp_n: int = 100
    ips_gamma: float = 1.0
    ips_clip: float = 30.0
    uncertainty_seeds: str = ""
    k: int = 10
    out_dir: str = "runs"
    plots: bool = True

    def __post_init__(self):
        self.method = self.method.upper()
        self.distance = self.distance.upper()
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        Distance(self.distance)
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.method == "CP" and not (self.cp_n >= self.k and 0 <= self.lam <= 1):
            raise ValueError("CP needs cp_n >= K and lambda in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.dim, self.epochs, self.batch_size,
                           self.l2_reg, self.seed)

    def ile_config(self) -> IleConfig:
        lam = self.lam if self.method == "ILE" else 0.0
        return IleConfig(lam, self.distance, self.ent_floor)

    def seeds_for_uncertainty(self) -> tuple:
        if self.uncertainty_seeds:
            return tuple(int(s) for s in self.uncertainty_seeds.replace(";", ",").split(","))
        return baselines.default_uncertainty_seeds(self.seed)

    def method_params(self) -> dict:
        if self.method == "ILE":
            return {"lam": self.lam, "D": self.distance}
        if self.method == "CP":
            return {"lam": self.lam, "N": self.cp_n}
        if self.method == "PUFR":
            return {"lam": self.lam}
        if self.method == "IPS":
            return {"gamma": self.ips_gamma, "clip": self.ips_clip}
        return {}

    def run_name(self) -> str:
        params = "_".join(f"{k}-{v}" for k, v in sorted(self.method_params().items()))
        return "_".join(x for x in (self.method, params, f"seed{self.seed}") if x)


def _coerce(kind, text):
    if kind is bool or kind == "bool":
        return str(text).strip().lower() in ("1", "true", "yes", "on")
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return str(text)


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(FIELD_TYPES[key], value)
    return values


def build_config(preset: str | None = None, config_file=None, **overrides) -> ExperimentConfig:
    """Defaults, then preset, then config file, then explicit overrides."""
    values = {}
    if preset:
        values.update(PRESETS[preset])
    if config_file:
        values.update(parse_config_file(config_file))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


class PhaseTimer:
    def __init__(self):
        self.ms: dict[str, float] = {}
        self._start = time.perf_counter()

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except ExperimentError:
            raise
        except Exception as exc:
            raise ExperimentError(name, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + 1000.0 * (time.perf_counter() - t0)

    def total_ms(self) -> float:
        return 1000.0 * (time.perf_counter() - self._start)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "ms"])
            for name, ms in self.ms.items():
                w.writerow([name, f"{ms:.3f}"])
            w.writerow(["total", f"{self.total_ms():.3f}"])


def read_timing_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {rec["phase"]: float(rec["ms"]) for rec in csv.DictReader(fh)}


def load_dataset(cfg: ExperimentConfig) -> InteractionDataset:
    if cfg.dataset == "synth":
        return synth_dataset(cfg.synth_users, cfg.synth_items, cfg.synth_interactions,
                             cfg.synth_zipf, cfg.synth_seed)
    return load_interactions(cfg.dataset, cfg.format,
                             None if cfg.delimiter == "whitespace" else cfg.delimiter, cfg.header)


def prepare(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = split_train_test(ds, cfg.train_ratio, cfg.split_seed)
    return ds, split, assign_popularity_groups(split.train)


def dataset_fingerprint(ds: InteractionDataset) -> str:
    h = hashlib.sha256()
    h.update(np.asarray([ds.n, ds.m], dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(ds.keys, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def train_fingerprint(tcfg: TrainConfig, seeds) -> str:
    payload = repr(sorted(asdict(replace(tcfg, seed=0)).items())) + repr(tuple(seeds))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cached_uncertainty(cfg: ExperimentConfig, split: SplitDataset, grouping, cache_dir: Path):
    seeds = cfg.seeds_for_uncertainty()
    tcfg = cfg.train_config()
    key = f"{dataset_fingerprint(split.train)}_{train_fingerprint(tcfg, seeds)}"
    path = cache_dir / f"uncertainty_{key}.csv"
    if path.exists():
        values = baselines.read_item_table(path, split.train.m, split.train.item_index)
        return baselines.UncertaintyTable(values, seeds)
    table = baselines.estimate_uncertainty(split.train, grouping, tcfg, seeds)
    cache_dir.mkdir(parents=True, exist_ok=True)
    baselines.write_item_table(path, table.uncertainty, split.train.item_ids)
    return table


@dataclass
class RunArtifacts:
    name: str
    report: MetricsReport
    params: dict
    paths: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    trace: GroupLossTrace | None = None
    model: FactorModel | None = None
    recommendations: RecommendationSet | None = None


def _rerank_cp(cfg, model, split, grouping, long_recs):
    out = RecommendationSet()
    for u in long_recs.users():
        items, scores = long_recs.items[u], long_recs.scores[u]
        if items.size <= cfg.k or split.train.user_items(u).size == 0:
            out.add(u, items[:cfg.k], scores[:cfg.k])
            continue
        profile = profile_distribution(u, split.train, grouping)
        r_items, r_scores = baselines.cp_rerank(items, scores, profile, grouping, cfg.lam, cfg.k)
        out.add(u, r_items, r_scores)
    return out


def _rerank_pufr(cfg, model, split, grouping, table):
    out = RecommendationSet()
    all_scores = model.user_factors @ model.item_factors.T
    for u in range(split.train.n):
        items, scores = baselines.pufr_rerank(all_scores[u], table, grouping, cfg.lam, cfg.k,
                                              split.train.user_items(u))
        out.add(u, items, scores)
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True, model_cache: dict | None = None,
                   prepared=None) -> RunArtifacts:
    """Run one configuration through the full pipeline.

    Only ILE and IPS alter training; CP and PUFR re-rank lists of a plain BPR
    model. ``model_cache`` lets sweeps reuse that base model across lambdas.
    """
    timer = PhaseTimer()
    out_dir = Path(cfg.out_dir)
    name = cfg.run_name()
    written: list[Path] = []
    try:
        with timer.phase("load"):
            ds, split, grouping = prepared if prepared is not None else prepare(cfg)
        tcfg = cfg.train_config()
        ile_cfg = cfg.ile_config()
        with timer.phase("train"):
            if cfg.method == "IPS":
                table = baselines.build_propensities(grouping.counts, cfg.ips_gamma, cfg.ips_clip)
                trace = GroupLossTrace(0.0, ile_cfg.distance, ile_cfg.ent_floor)
                model, trace = baselines.train_ips(split.train, grouping, tcfg, table, trace)
            else:
                key = (dataset_fingerprint(split.train), tcfg, ile_cfg)
                if model_cache is not None and key in model_cache:
                    model, trace = model_cache[key]
                else:
                    model, trace = train(split.train, grouping, tcfg, ile_cfg)
                    if model_cache is not None:
                        model_cache[key] = (model, trace)
        if cfg.method == "PUFR":
            with timer.phase("uncertainty"):
                table = cached_uncertainty(cfg, split, grouping, out_dir / "cache")
        with timer.phase("recommend"):
            if cfg.method == "CP":
                base = recommend_all(model, split.train, cfg.cp_n)
            elif cfg.method != "PUFR":
                recs = recommend_all(model, split.train, cfg.k)
        with timer.phase("rerank"):
            if cfg.method == "CP":
                recs = _rerank_cp(cfg, model, split, grouping, base)
            elif cfg.method == "PUFR":
                recs = _rerank_pufr(cfg, model, split, grouping, table)
        with timer.phase("evaluate"):
            report = evaluate(recs, split.train, split.test, grouping, cfg.k)
        art = RunArtifacts(name, report, cfg.method_params(), trace=trace, model=model,
                           recommendations=recs)
        art.timings = dict(timer.ms)
        if write:
            with timer.phase("write"):
                out_dir.mkdir(parents=True, exist_ok=True)
                paths = {
                    "metrics": out_dir / f"{name}_metrics.csv",
                    "trace": out_dir / f"{name}_trace.csv",
                    "checkpoint": out_dir / f"{name}_model.ckpt",
                    "recommendations": out_dir / f"{name}_recs.csv",
                    "timing": out_dir / f"{name}_timing.csv",
                }
                written.extend(paths.values())
                write_metrics_csv(paths["metrics"], [(cfg.method, art.params, report)])
                trace.write_csv(paths["trace"])
                save_checkpoint(paths["checkpoint"], model)
                recs.write_csv(paths["recommendations"], split.train.user_ids, split.train.item_ids)
                if cfg.plots:
                    paths["figure"] = out_dir / f"{name}_group_losses.png"
                    written.append(paths["figure"])
                    plotting.plot_group_losses(trace, paths["figure"], title=name)
                art.paths = paths
            art.timings = dict(timer.ms)
            timer.write_csv(paths["timing"])
        return art
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise


SWEEP_COLUMNS = ("method", "lambda", "ndcg", "upd", "ad", "ee", "status")


def sweep(cfg: ExperimentConfig, lambda_values, methods=None, write: bool = True) -> list[dict]:
    """One run per (method, lambda) on a shared split and seeds.

    Failed points are kept as rows with status ``failed`` and the sweep
    continues.
    """
    lambda_values = list(lambda_values)
    if not lambda_values:
        raise ValueError("need at least one lambda value")
    methods = [m.upper() for m in (methods or [cfg.method])]
    prepared = prepare(cfg)
    cache: dict = {}
    rows = []
    for method in methods:
        for lam in lambda_values:
            row = {"method": method, "lambda": float(lam)}
            try:
                art = run_experiment(replace(cfg, method=method, lam=float(lam)), write=write,
                                     model_cache=cache, prepared=prepared)
                row.update(ndcg=art.report.ndcg, upd=art.report.upd, ad=art.report.ad,
                           ee=art.report.ee, status="ok")
            except Exception as exc:  # noqa: BLE001 - failures are recorded per point
                log.error("sweep point %s lambda=%s failed: %s", method, lam, exc)
                row.update(ndcg=float("nan"), upd=float("nan"), ad=float("nan"),
                           ee=float("nan"), status="failed")
            rows.append(row)
    if write:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(out_dir / "sweep.csv", rows)
        if cfg.plots:
            plotting.plot_tradeoff(rows, out_dir / "sweep_tradeoff.png")
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["method"], repr(r["lambda"])] + [repr(float(r[c])) for c in
                        ("ndcg", "upd", "ad", "ee")] + [r["status"]])


def read_sweep_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"method": rec["method"], "status": rec["status"], "lambda": float(rec["lambda"])}
            row.update({c: float(rec[c]) for c in ("ndcg", "upd", "ad", "ee")})
            out.append(row)
    return out


def compare(cfg: ExperimentConfig, methods, write: bool = True) -> list[RunArtifacts]:
    """Run several methods on one split; writes a combined table and a runtime chart."""
    prepared = prepare(cfg)
    # no model cache here: each method's timings must include its own training
    runs = [run_experiment(replace(cfg, method=m.upper()), write=write, prepared=prepared)
            for m in methods]
    if write:
        out_dir = Path(cfg.out_dir)
        write_metrics_csv(out_dir / "table.csv", [(r.name.split("_")[0], r.params, r.report) for r in runs])
        if cfg.plots:
            plotting.plot_runtimes({r.name: r.timings for r in runs}, out_dir / "runtimes.png")
    return runs

