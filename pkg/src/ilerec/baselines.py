"""Popularity-bias baselines: IPS loss weighting, calibrated-popularity
greedy re-ranking and uncertainty-shifted (PUFR) re-ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .bpr import FactorModel, TrainConfig, rank_items, train
from .ingest import Group, GroupDistribution, InteractionDataset, PopularityGrouping
from .metrics import jsd

DEFAULT_CLIP = 30.0
N_UNCERTAINTY_SEEDS = 5


@dataclass(frozen=True, eq=False)
class PropensityTable:
    propensity: np.ndarray
    weights: np.ndarray
    clip_cap: float


@dataclass(frozen=True, eq=False)
class UncertaintyTable:
    uncertainty: np.ndarray
    seeds_used: tuple

    def __post_init__(self):
        if len(set(self.seeds_used)) != N_UNCERTAINTY_SEEDS:
            raise ValueError(f"uncertainty needs exactly {N_UNCERTAINTY_SEEDS} distinct seeds")


def build_propensities(counts, gamma: float = 1.0, clip_cap: float = DEFAULT_CLIP,
                       min_propensity: float | None = None) -> PropensityTable:
    """Power-law propensities ``(count / max_count) ** gamma``.

    Propensities are floored at ``min_propensity`` (default ``1/max_count``,
    the value an item with a single interaction gets at gamma=1), inverted,
    clipped at ``clip_cap`` and rescaled so the interaction-weighted mean
    weight is 1.
    """
    counts = np.asarray(counts, dtype=float)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    top = counts.max(initial=0.0)
    if top <= 0:
        raise ValueError("all item counts are zero")
    floor = 1.0 / top if min_propensity is None else min_propensity
    prop = np.maximum((counts / top) ** gamma, floor)
    w = np.minimum(1.0 / prop, clip_cap)
    w = w * counts.sum() / np.dot(counts, w)
    return PropensityTable(prop, w, clip_cap)


def train_ips(train_set: InteractionDataset, grouping: PopularityGrouping, cfg: TrainConfig,
              table: PropensityTable, trace=None):
    """Plain BPR where each pair's gradient is scaled by its positive item's weight."""
    return train(train_set, grouping, cfg, ile_cfg=None, item_weights=table.weights, trace=trace)


def cp_rerank(candidates, scores, profile: GroupDistribution, grouping: PopularityGrouping,
              lam: float, k: int):
    """Greedy calibrated-popularity re-ranking of a long list.

    ``candidates`` is the long list in its original rank order with matching
    ``scores``. Each step appends the candidate maximizing
    ``(1 - lam) * rel - lam * JSD(profile, mix(list + [c]))`` with ``rel`` the
    min-max normalized score; ties go to the better original rank.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    if candidates.size < k:
        raise ValueError(f"long list has {candidates.size} items, fewer than K={k}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("CP lambda must lie in [0, 1]")
    lo, hi = scores.min(), scores.max()
    rel = (scores - lo) / (hi - lo) if hi > lo else np.zeros_like(scores)
    groups = grouping.group_of[candidates].astype(np.int64)
    target = profile.as_array()
    mix = np.zeros(3)
    available = np.ones(candidates.size, dtype=bool)
    picked = []
    for step in range(k):
        best, best_val = -1, -np.inf
        for g in range(3):
            # within a group the gain differs only through rel, so the first
            # available candidate of each group is that group's best
            idx = np.flatnonzero(available & (groups == g))
            if idx.size == 0:
                continue
            trial = mix.copy()
            trial[g] += 1
            penalty = jsd(target, trial / (step + 1)) if lam else 0.0
            gains = (1 - lam) * rel[idx] - lam * penalty
            c = idx[np.argmax(gains)]
            val = gains.max()
            if val > best_val or (val == best_val and c < best):
                best, best_val = c, val
        picked.append(best)
        available[best] = False
        mix[groups[best]] += 1
    picked = np.asarray(picked)
    return candidates[picked], scores[picked]


def item_mean_scores(model: FactorModel) -> np.ndarray:
    """Average predicted score of every item over all users."""
    return model.user_factors.mean(axis=0) @ model.item_factors.T


def uncertainty_from_models(models, seeds) -> UncertaintyTable:
    means = np.stack([item_mean_scores(mdl) for mdl in models])
    # centering on the first row leaves the std unchanged but makes agreeing
    # models give exactly zero instead of a rounding residue
    return UncertaintyTable((means - means[0]).std(axis=0, ddof=0), tuple(seeds))


def default_uncertainty_seeds(seed: int) -> tuple:
    return tuple(seed + 1 + k for k in range(N_UNCERTAINTY_SEEDS))


def estimate_uncertainty(train_set: InteractionDataset, grouping: PopularityGrouping,
                         cfg: TrainConfig, seeds) -> UncertaintyTable:
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) != N_UNCERTAINTY_SEEDS or len(set(seeds)) != N_UNCERTAINTY_SEEDS:
        raise ValueError(f"need {N_UNCERTAINTY_SEEDS} distinct seeds, got {seeds}")
    models = [train(train_set, grouping, replace(cfg, seed=s))[0] for s in seeds]
    return uncertainty_from_models(models, seeds)


def pufr_adjust(scores, uncertainty, grouping: PopularityGrouping, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("PUFR lambda must be non-negative")
    scores = np.asarray(scores, dtype=float)
    u = uncertainty.uncertainty if isinstance(uncertainty, UncertaintyTable) else np.asarray(uncertainty)
    sign = np.zeros(scores.size)
    sign[grouping.group_of == Group.TAIL] = 1.0
    sign[grouping.group_of == Group.HEAD] = -1.0
    return scores + lam * sign * u


def pufr_rerank(scores, uncertainty, grouping: PopularityGrouping, lam: float, k: int, exclude=()):
    """Top-k after shifting Tail scores up and Head scores down by lam * u_i."""
    return rank_items(pufr_adjust(scores, uncertainty, grouping, lam), exclude, k)


def write_item_table(path, values, item_ids=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "value"])
        for i, v in enumerate(values):
            w.writerow([item_ids[i] if item_ids else i, repr(float(v))])


def read_item_table(path, m: int, item_index=None) -> np.ndarray:
    values = np.full(m, np.nan)
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            i = item_index[rec["item_id"]] if item_index else int(rec["item_id"])
            values[i] = float(rec["value"])
    if np.isnan(values).any():
        raise ValueError(f"{path}: table does not cover every item")
    return values
