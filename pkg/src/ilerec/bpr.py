"""Matrix-factorization BPR: scoring, triplet sampling, minibatch SGD with
optional item loss equalization or per-item loss weights, and top-K lists.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .ile import GroupLossTrace, IleConfig, N_GROUPS, pair_gradient_weights
from .ingest import InteractionDataset, PopularityGrouping

log = logging.getLogger(__name__)

INIT_STD = 0.1

CHECKPOINT_MAGIC = b"ILEMF\x00\x01\n"
_HEADER = struct.Struct("<8s5q")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    dim: int = 128
    epochs: int = 200
    batch_size: int = 256
    l2_reg: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("dim, epochs and batch_size must be >= 1")
        if not self.l2_reg >= 0:
            raise ValueError("l2_reg must be non-negative")


@dataclass(eq=False)
class FactorModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    seed: int = 0
    epoch: int = 0

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n(self) -> int:
        return self.user_factors.shape[0]

    @property
    def m(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "FactorModel":
        return FactorModel(self.user_factors.copy(), self.item_factors.copy(), self.seed, self.epoch)

    def user_scores(self, users) -> np.ndarray:
        return self.user_factors[users] @ self.item_factors.T


@dataclass(frozen=True)
class Triplet:
    user: int
    pos: int
    neg: int


def _streams(seed: int):
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(sample_seq)


def init_model(cfg: TrainConfig, n: int, m: int) -> FactorModel:
    if n <= 0 or m <= 0:
        raise ValueError("n and m must be positive")
    rng, _ = _streams(cfg.seed)
    p = rng.normal(0.0, INIT_STD, size=(n, cfg.dim))
    q = rng.normal(0.0, INIT_STD, size=(m, cfg.dim))
    return FactorModel(p, q, seed=cfg.seed, epoch=0)


def score(model: FactorModel, u: int, i: int) -> float:
    return float(model.user_factors[u] @ model.item_factors[i])


def pair_loss(s_ui, s_uj):
    """-log sigmoid(s_ui - s_uj), computed as softplus(s_uj - s_ui)."""
    out = np.logaddexp(0.0, np.subtract(s_uj, s_ui, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _sigmoid_neg(x):
    # sigmoid(-x) without overflow
    return np.exp(-np.logaddexp(0.0, x))


class TripletSampler:
    """Uniform (user, positive) pairs with uniform rejection-sampled negatives.

    Interactions of users who have seen every item are never drawn, since
    they admit no negative.
    """

    def __init__(self, train: InteractionDataset, rng: np.random.Generator):
        self.train = train
        self.rng = rng
        full = train.user_degrees() >= train.m
        self.eligible = np.flatnonzero(~full[train.users])
        if self.eligible.size == 0:
            raise TrainingError("no user has an unseen item to sample as a negative")

    def sample(self, size: int):
        rng, train = self.rng, self.train
        idx = self.eligible[rng.integers(0, self.eligible.size, size=size)]
        users = train.users[idx]
        pos = train.items[idx]
        neg = rng.integers(0, train.m, size=size)
        bad = np.flatnonzero(train.contains(users, neg))
        while bad.size:
            neg[bad] = rng.integers(0, train.m, size=bad.size)
            bad = bad[train.contains(users[bad], neg[bad])]
        return users, pos, neg


def sample_triplet(train: InteractionDataset, rng: np.random.Generator) -> Triplet:
    u, i, j = TripletSampler(train, rng).sample(1)
    return Triplet(int(u[0]), int(i[0]), int(j[0]))


def batch_losses(model: FactorModel, users, pos, neg) -> np.ndarray:
    pu = model.user_factors[users]
    x = np.einsum("bd,bd->b", pu, model.item_factors[pos] - model.item_factors[neg])
    return np.logaddexp(0.0, -x)


def batch_gradients(model: FactorModel, users, pos, neg, pair_weights):
    """Gradient of sum_k pair_weights[k] * loss_k w.r.t. both factor matrices.

    Returns dense ``(grad_user, grad_item, losses)``; rows outside the batch
    are zero.
    """
    p, q = model.user_factors, model.item_factors
    pu = p[users]
    diff = q[pos] - q[neg]
    x = np.einsum("bd,bd->b", pu, diff)
    losses = np.logaddexp(0.0, -x)
    g = -np.asarray(pair_weights, dtype=float) * _sigmoid_neg(x)
    grad_p = np.zeros_like(p)
    grad_q = np.zeros_like(q)
    np.add.at(grad_p, users, g[:, None] * diff)
    gp = g[:, None] * pu
    np.add.at(grad_q, pos, gp)
    np.add.at(grad_q, neg, -gp)
    return grad_p, grad_q, losses


def _plain_weights(b: int) -> np.ndarray:
    return np.full(b, 1.0 / b)


def sgd_step(model: FactorModel, users, pos, neg, groups, cfg: TrainConfig,
             ile_cfg: IleConfig | None = None, item_weights=None) -> np.ndarray:
    """One minibatch update in place; returns the batch's pair losses."""
    p, q = model.user_factors, model.item_factors
    b = users.size
    x = np.einsum("bd,bd->b", p[users], q[pos] - q[neg])
    losses = np.logaddexp(0.0, -x)
    if ile_cfg is not None:
        w = pair_gradient_weights(losses, groups, ile_cfg)
    else:
        w = _plain_weights(b)
    if item_weights is not None:
        w = w * item_weights[pos]
    grad_p, grad_q, _ = batch_gradients(model, users, pos, neg, w)
    tu = np.unique(users)
    ti = np.unique(np.concatenate([pos, neg]))
    if cfg.l2_reg:
        grad_p[tu] += cfg.l2_reg * p[tu]
        grad_q[ti] += cfg.l2_reg * q[ti]
    p[tu] -= cfg.learning_rate * grad_p[tu]
    q[ti] -= cfg.learning_rate * grad_q[ti]
    return losses


def train_epoch(model: FactorModel, train: InteractionDataset, grouping: PopularityGrouping,
                cfg: TrainConfig, sampler: TripletSampler, ile_cfg: IleConfig | None = None,
                trace: GroupLossTrace | None = None, item_weights=None) -> dict:
    """Run |train| sampled triplets through minibatch SGD.

    ``ile_cfg=None`` is plain BPR; ``item_weights`` (indexed by positive item)
    rescales each pair's gradient, which is how IPS training is expressed.
    Returns the epoch's trace row.
    """
    if model.n != train.n or model.m != train.m:
        raise ValueError("model shape does not match dataset")
    total = len(train)
    n_batches = -(-total // cfg.batch_size)
    users, pos, neg = sampler.sample(total)
    groups = grouping.group_of[pos].astype(np.int64)
    sums = np.zeros(N_GROUPS)
    counts = np.zeros(N_GROUPS)
    epoch = model.epoch + 1
    for b in range(n_batches):
        sl = slice(b * cfg.batch_size, min((b + 1) * cfg.batch_size, total))
        losses = sgd_step(model, users[sl], pos[sl], neg[sl], groups[sl], cfg, ile_cfg, item_weights)
        sums += np.bincount(groups[sl], weights=losses, minlength=N_GROUPS)
        counts += np.bincount(groups[sl], minlength=N_GROUPS)
        if not (np.isfinite(model.user_factors[users[sl]]).all()
                and np.isfinite(model.item_factors[pos[sl]]).all()
                and np.isfinite(model.item_factors[neg[sl]]).all()):
            raise TrainingError(f"non-finite factors at epoch {epoch}, batch {b + 1}")
    model.epoch = epoch
    if trace is None:
        trace = GroupLossTrace()
    return trace.record(epoch, sums, counts)


def train(train_set: InteractionDataset, grouping: PopularityGrouping, cfg: TrainConfig,
          ile_cfg: IleConfig | None = None, item_weights=None, trace: GroupLossTrace | None = None,
          model: FactorModel | None = None) -> tuple[FactorModel, GroupLossTrace]:
    """Train from a seeded initialization for ``cfg.epochs`` epochs."""
    if trace is None:
        trace = GroupLossTrace(lam=ile_cfg.lam if ile_cfg else 0.0,
                               distance=ile_cfg.distance if ile_cfg else "STD")
    if model is None:
        model = init_model(cfg, train_set.n, train_set.m)
    _, sample_rng = _streams(cfg.seed)
    sampler = TripletSampler(train_set, sample_rng)
    for _ in range(cfg.epochs):
        row = train_epoch(model, train_set, grouping, cfg, sampler, ile_cfg, trace, item_weights)
        log.debug("epoch %d L=%.5f H=%.5f M=%.5f T=%.5f", row["epoch"], row["L"],
                  row["L_H"], row["L_M"], row["L_T"])
    return model, trace


@dataclass
class RecommendationSet:
    """Per-user ranked lists (rank 1 first) with their final scores."""

    items: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)
    truncated: set = field(default_factory=set)

    def add(self, user: int, items, scores) -> None:
        self.items[int(user)] = np.asarray(items, dtype=np.int64)
        self.scores[int(user)] = np.asarray(scores, dtype=float)

    def users(self) -> list[int]:
        return sorted(self.items)

    def write_csv(self, path, user_ids=None, item_ids=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user_id", "rank", "item_id", "score"])
            for u in self.users():
                for rank, (i, s) in enumerate(zip(self.items[u], self.scores[u]), start=1):
                    w.writerow([user_ids[u] if user_ids else u, rank,
                                item_ids[i] if item_ids else int(i), repr(float(s))])

    @classmethod
    def read_csv(cls, path, user_index=None, item_index=None) -> "RecommendationSet":
        rows: dict[int, list] = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                u = user_index[rec["user_id"]] if user_index else int(rec["user_id"])
                i = item_index[rec["item_id"]] if item_index else int(rec["item_id"])
                rows.setdefault(u, []).append((int(rec["rank"]), i, float(rec["score"])))
        out = cls()
        for u, entries in rows.items():
            entries.sort()
            out.add(u, [e[1] for e in entries], [e[2] for e in entries])
        return out


def rank_items(scores, exclude=(), k: int | None = None):
    """Order eligible items by (score desc, index asc); returns (items, scores)."""
    scores = np.asarray(scores, dtype=float).copy()
    excl = np.asarray(exclude, dtype=np.int64)
    scores[excl] = -np.inf
    order = np.argsort(-scores, kind="stable")
    eligible = scores.size - np.unique(excl).size
    order = order[:eligible if k is None else min(k, eligible)]
    return order, scores[order]


def recommend_topk(model: FactorModel, user: int, k: int, exclude=()):
    """Top-``k`` unseen items for ``user``.

    Returns ``(items, scores, complete)``; ``complete`` is False when fewer
    than ``k`` items were eligible.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    items, scores = rank_items(model.user_factors[user] @ model.item_factors.T, exclude, k)
    return items, scores, items.size == k


def recommend_all(model: FactorModel, train: InteractionDataset, k: int, users=None,
                  chunk: int = 1024) -> RecommendationSet:
    if k < 1:
        raise ValueError("K must be >= 1")
    users = np.arange(train.n) if users is None else np.asarray(users)
    recs = RecommendationSet()
    for start in range(0, users.size, chunk):
        block = users[start:start + chunk]
        s = model.user_scores(block)
        for row, u in zip(s, block):
            items, sc = rank_items(row, train.user_items(u), k)
            recs.add(u, items, sc)
            if items.size < k:
                recs.truncated.add(int(u))
    return recs


def save_checkpoint(path, model: FactorModel) -> None:
    """Little-endian: 8-byte magic, int64 n, m, d, seed, epoch, then the
    user and item factor matrices as row-major float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, model.n, model.m, model.dim, model.seed, model.epoch))
        fh.write(np.ascontiguousarray(model.user_factors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.item_factors, dtype="<f8").tobytes())


def load_checkpoint(path) -> FactorModel:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated checkpoint header")
        magic, n, m, d, seed, epoch = _HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a factor-model checkpoint")
        p = np.frombuffer(fh.read(8 * n * d), dtype="<f8")
        q = np.frombuffer(fh.read(8 * m * d), dtype="<f8")
        if p.size != n * d or q.size != m * d:
            raise ValueError(f"{path}: truncated checkpoint body")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after checkpoint body")
    return FactorModel(p.reshape(n, d).astype(float), q.reshape(m, d).astype(float), seed, epoch)
