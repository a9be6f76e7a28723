"""Ranking quality and popularity-fairness metrics over recommendation lists."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .bpr import RecommendationSet
from .ingest import GroupDistribution, InteractionDataset, PopularityGrouping, profile_distribution


def _kl2(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits, so the result lies in [0, 1]."""
    p = p.as_array() if isinstance(p, GroupDistribution) else np.asarray(p, dtype=float)
    q = q.as_array() if isinstance(q, GroupDistribution) else np.asarray(q, dtype=float)
    mid = 0.5 * (p + q)
    value = 0.5 * _kl2(p, mid) + 0.5 * _kl2(q, mid)
    return min(max(value, 0.0), 1.0)


def list_distribution(items, grouping: PopularityGrouping) -> GroupDistribution:
    return GroupDistribution.from_counts(np.bincount(grouping.group_of[np.asarray(items)], minlength=3))


def per_group_hit_shares(recs: RecommendationSet, grouping: PopularityGrouping) -> dict:
    return {u: list_distribution(recs.items[u], grouping) for u in recs.users() if recs.items[u].size}


def upd(recs: RecommendationSet, train: InteractionDataset, grouping: PopularityGrouping) -> float:
    """Mean JSD between each user's training-profile and list group mix.

    Users with an empty profile or an empty list are skipped.
    """
    values = []
    for u in recs.users():
        if recs.items[u].size == 0 or train.user_items(u).size == 0:
            continue
        values.append(jsd(profile_distribution(u, train, grouping), list_distribution(recs.items[u], grouping)))
    return math.fsum(values) / len(values) if values else 0.0


def aggregate_diversity(recs: RecommendationSet, m: int) -> float:
    if m <= 0:
        raise ValueError("catalog size must be positive")
    seen = set()
    for u in recs.users():
        seen.update(int(i) for i in recs.items[u])
    return len(seen) / m


def position_exposure(rank) -> np.ndarray:
    return 1.0 / (1.0 + np.log2(rank))


def item_exposure(recs: RecommendationSet, m: int) -> np.ndarray:
    exposure = np.zeros(m)
    for u in recs.users():
        items = recs.items[u]
        np.add.at(exposure, items, position_exposure(np.arange(1, items.size + 1)))
    return exposure


def gini(values) -> float:
    """Gini index via the sorted-index formula sum((2i - n - 1) x_i) / (n sum x)."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    total = x.sum()
    if n == 0 or total <= 0:
        raise ValueError("Gini index needs a non-empty vector with positive total")
    idx = np.arange(1, n + 1)
    return float(np.sum((2 * idx - n - 1) * x) / (n * total))


def equality_of_exposure(recs: RecommendationSet, m: int) -> float:
    if m <= 0:
        raise ValueError("catalog size must be positive")
    return 1.0 - gini(item_exposure(recs, m))


def user_ndcg(ranked, relevant: set, k: int) -> float:
    dcg = sum(1.0 / math.log2(r + 1) for r, i in enumerate(ranked[:k], start=1) if int(i) in relevant)
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def ndcg_at_k(recs: RecommendationSet, test: InteractionDataset, k: int) -> float:
    """Binary-relevance nDCG@k averaged over listed users with test items."""
    if k < 1:
        raise ValueError("K must be >= 1")
    values = []
    for u in recs.users():
        relevant = set(test.user_items(u).tolist())
        if relevant:
            values.append(user_ndcg(recs.items[u], relevant, k))
    return math.fsum(values) / len(values) if values else 0.0


@dataclass(frozen=True)
class MetricsReport:
    ndcg: float
    upd: float
    ad: float
    ee: float
    users_evaluated: int


def evaluate(recs: RecommendationSet, train: InteractionDataset, test: InteractionDataset,
             grouping: PopularityGrouping, k: int) -> MetricsReport:
    evaluated = sum(1 for u in recs.users() if test.user_items(u).size)
    return MetricsReport(
        ndcg=ndcg_at_k(recs, test, k),
        upd=upd(recs, train, grouping),
        ad=aggregate_diversity(recs, train.m),
        ee=equality_of_exposure(recs, train.m),
        users_evaluated=evaluated,
    )


METRIC_COLUMNS = ("method", "params", "ndcg", "upd", "ad", "ee")


def format_params(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def write_metrics_csv(path, rows) -> None:
    """``rows`` are (method, params dict, MetricsReport) triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for method, params, report in rows:
            w.writerow([method, format_params(params)] + [repr(float(v)) for v in
                        (report.ndcg, report.upd, report.ad, report.ee)])


def read_metrics_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"method": rec["method"], "params": rec["params"]}
            row.update({c: float(rec[c]) for c in METRIC_COLUMNS[2:]})
            out.append(row)
    return out


def report_dict(report: MetricsReport) -> dict:
    return asdict(report)
