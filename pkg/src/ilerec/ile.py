"""Item loss equalization: group loss aggregation, dispersion measures and
the per-pair gradient weights used by the SGD trainer.

The penalised objective on a batch of B pairs is

    L* = mean(losses) + lam * D({L_g})

with L_g the mean pair loss over pairs whose positive item sits in group g.
Its derivative with respect to a single pair loss is
``1/B + lam * dD/dL_g / B_g``; ``pair_gradient_weights`` returns exactly that.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ingest import GROUPS

N_GROUPS = len(GROUPS)


class Distance(str, Enum):
    STD = "STD"
    ENT = "ENT"
    MAD = "MAD"
    NONE = "NONE"


@dataclass(frozen=True)
class IleConfig:
    lam: float = 0.0
    distance: Distance = Distance.STD
    ent_floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "distance", Distance(str.upper(self.distance)))
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not 0 < self.ent_floor <= 1e-3:
            raise ValueError("ent_floor must lie in (0, 1e-3]")


def group_average_losses(losses, groups):
    """Mean loss per group plus per-group counts.

    Returns ``(means, counts)`` as length-3 arrays indexed by group; groups
    with no pairs get count 0 and a NaN mean (absent, not zero).
    """
    losses = np.asarray(losses, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    if losses.size == 0:
        raise ValueError("need at least one pair loss")
    counts = np.bincount(groups, minlength=N_GROUPS)
    sums = np.bincount(groups, weights=losses, minlength=N_GROUPS)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return means, counts


def _clamped(values, floor):
    return np.maximum(values, floor)


def distance(values, which, ent_floor: float = 1e-8) -> float:
    """Dispersion of the present group losses; lower is fairer."""
    which = Distance(which)
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("distance of an empty set of group losses")
    if which is Distance.NONE:
        return 0.0
    if which is Distance.STD:
        return float(np.sqrt(np.mean((v - v.mean()) ** 2)))
    if which is Distance.MAD:
        return float(np.mean(np.abs(v - v.mean())))
    c = _clamped(v, ent_floor)
    return float(-np.sum(c * np.log(c)))


def distance_gradient(values, which, ent_floor: float = 1e-8) -> np.ndarray:
    """Partial derivatives of ``distance`` with respect to each group loss."""
    which = Distance(which)
    v = np.asarray(values, dtype=float)
    g = v.size
    if which is Distance.NONE:
        return np.zeros(g)
    if which is Distance.STD:
        d = distance(v, which)
        if d <= 0.0:
            return np.zeros(g)
        return (v - v.mean()) / (g * d)
    if which is Distance.MAD:
        s = np.sign(v - v.mean())
        return (s - s.sum() / g) / g
    return -(np.log(_clamped(v, ent_floor)) + 1.0)


def ile_objective(mean_loss: float, group_losses, cfg: IleConfig) -> float:
    present = np.asarray(group_losses, dtype=float)
    present = present[~np.isnan(present)]
    if cfg.distance is Distance.NONE or cfg.lam == 0 or present.size == 0:
        return float(mean_loss)
    return float(mean_loss + cfg.lam * distance(present, cfg.distance, cfg.ent_floor))


def pair_gradient_weights(losses, groups, cfg: IleConfig) -> np.ndarray:
    """d L* / d loss_k for every pair of the batch.

    Weights can be negative under ENT and MAD for groups above the mean;
    they are returned unclipped.
    """
    losses = np.asarray(losses, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    b = losses.size
    means, counts = group_average_losses(losses, groups)
    present = counts > 0
    dgrad = np.zeros(N_GROUPS)
    dgrad[present] = distance_gradient(means[present], cfg.distance, cfg.ent_floor)
    per_group = cfg.lam * dgrad / np.maximum(counts, 1)
    return 1.0 / b + per_group[groups]


def batch_objective(losses, groups, cfg: IleConfig) -> float:
    """L* evaluated on one batch of pair losses."""
    losses = np.asarray(losses, dtype=float)
    means, _ = group_average_losses(losses, groups)
    return ile_objective(losses.mean(), means, cfg)


@dataclass
class GroupLossTrace:
    """Per-epoch global loss, per-group losses, distance and penalised loss."""

    lam: float = 0.0
    distance: Distance = Distance.STD
    ent_floor: float = 1e-8
    rows: list = field(default_factory=list)

    def record(self, epoch: int, loss_sums, counts) -> dict:
        sums = np.asarray(loss_sums, dtype=float)
        counts = np.asarray(counts, dtype=float)
        total = float(sums.sum() / counts.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        present = means[~np.isnan(means)]
        d = distance(present, self.distance, self.ent_floor) if present.size else 0.0
        row = {
            "epoch": epoch,
            "L": total,
            "L_H": float(means[0]),
            "L_M": float(means[1]),
            "L_T": float(means[2]),
            "D": d,
            "L_star": total + self.lam * d,
        }
        self.rows.append(row)
        return row

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    COLUMNS = ("epoch", "L", "L_H", "L_M", "L_T", "D", "L_star")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])

    @classmethod
    def read_csv(cls, path, lam: float = 0.0, distance=Distance.STD) -> "GroupLossTrace":
        trace = cls(lam=lam, distance=Distance(distance))
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                row = {c: float(rec[c]) for c in cls.COLUMNS[1:]}
                row["epoch"] = int(rec["epoch"])
                trace.rows.append(row)
        return trace


def final_group_spread(trace: GroupLossTrace) -> float:
    """Population std of the last epoch's (L_H, L_M, L_T), absent groups dropped."""
    last = trace.rows[-1]
    vals = [last[k] for k in ("L_H", "L_M", "L_T") if not math.isnan(last[k])]
    return distance(vals, Distance.STD)
