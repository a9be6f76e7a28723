"""Interaction loading, per-user splitting and popularity grouping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class Group(IntEnum):
    HEAD = 0
    MID = 1
    TAIL = 2

    @property
    def label(self) -> str:
        return "HMT"[self.value]


GROUPS = (Group.HEAD, Group.MID, Group.TAIL)

HEAD_FRACTION = 0.2
TAIL_FRACTION = 0.2


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Binary implicit-feedback matrix stored as sorted (user, item) pairs.

    ``users``/``items`` are parallel int64 arrays, unique and sorted by
    (user, item). ``n`` and ``m`` are the sizes of the full universes, which
    train and test partitions of one dataset share.
    """

    n: int
    m: int
    users: np.ndarray
    items: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    _indptr: np.ndarray = field(init=False, repr=False)
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n <= 0 or self.m <= 0:
            raise DatasetError("dataset needs at least one user and one item")
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise DatasetError("users and items must be parallel 1-d arrays")
        if users.size:
            if users.min() < 0 or users.max() >= self.n:
                raise DatasetError("user index out of range")
            if items.min() < 0 or items.max() >= self.m:
                raise DatasetError("item index out of range")
        keys = users * self.m + items
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        if keys.size > 1 and np.any(keys[1:] == keys[:-1]):
            raise DatasetError("duplicate (user, item) pair")
        users, items = users[order], items[order]
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=self.n), out=indptr[1:])
        object.__setattr__(self, "_indptr", indptr)
        keys.setflags(write=False)
        object.__setattr__(self, "_keys", keys)

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def keys(self) -> np.ndarray:
        """Sorted ``user * m + item`` codes, handy for membership tests."""
        return self._keys

    def user_items(self, u: int) -> np.ndarray:
        return self.items[self._indptr[u]:self._indptr[u + 1]]

    def user_degrees(self) -> np.ndarray:
        return np.diff(self._indptr)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.m)

    def contains(self, users, items) -> np.ndarray:
        keys = self.keys
        q = np.asarray(users, dtype=np.int64) * self.m + np.asarray(items, dtype=np.int64)
        if keys.size == 0:
            return np.zeros(np.shape(q), dtype=bool)
        pos = np.minimum(np.searchsorted(keys, q), keys.size - 1)
        return keys[pos] == q

    def subset(self, mask: np.ndarray) -> "InteractionDataset":
        return InteractionDataset(self.n, self.m, self.users[mask], self.items[mask],
                                  self.user_ids, self.item_ids)

    @property
    def user_index(self) -> dict[str, int]:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    @property
    def item_index(self) -> dict[str, int]:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    def summary(self) -> dict:
        degrees = self.user_degrees()
        return {
            "users": self.n,
            "items": self.m,
            "interactions": len(self),
            "density": len(self) / (self.n * self.m),
            "min_user_degree": int(degrees.min()),
            "max_user_degree": int(degrees.max()),
        }


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: InteractionDataset
    test: InteractionDataset
    split_seed: int


@dataclass(frozen=True, eq=False)
class PopularityGrouping:
    counts: np.ndarray
    group_of: np.ndarray
    boundaries: tuple[int, int]

    def members(self, group: Group) -> np.ndarray:
        return np.flatnonzero(self.group_of == group)

    def sizes(self) -> tuple[int, int, int]:
        return tuple(int(np.sum(self.group_of == g)) for g in GROUPS)


@dataclass(frozen=True)
class GroupDistribution:
    p_head: float
    p_mid: float
    p_tail: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_head, self.p_mid, self.p_tail])

    @classmethod
    def from_counts(cls, counts) -> "GroupDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValueError("cannot form a distribution from an empty profile")
        p = counts / total
        return cls(float(p[0]), float(p[1]), float(p[2]))


def _detect_delimiter(line: str) -> str | None:
    if "::" in line:
        return "::"
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # whitespace


def _split_line(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        return line.split()
    return [f.strip() for f in line.split(delimiter)]


def load_interactions(path, fmt: str = "auto", delimiter: str | None = "auto",
                      header: bool = False) -> InteractionDataset:
    """Read a delimited interaction file into a deduplicated dataset.

    ``fmt`` is ``"triples"`` (user, item, rating[, timestamp]), ``"pairs"``
    (user, item) or ``"auto"`` (decided from the first data line). Every
    observed rating counts as a positive interaction. Dense indices follow
    order of first appearance. Lines starting with ``#`` are skipped.
    """
    if fmt not in ("auto", "triples", "pairs"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8", errors="replace")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    with fh:
        seen_header = not header
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if delimiter == "auto":
                delimiter = _detect_delimiter(line)
            if not seen_header:
                seen_header = True
                continue
            fields = _split_line(line, delimiter)
            if fmt == "auto":
                fmt = "pairs" if len(fields) == 2 else "triples"
            if fmt == "pairs" and len(fields) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
            if fmt == "triples":
                if len(fields) not in (3, 4):
                    raise DatasetError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
                try:
                    float(fields[2])
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: rating {fields[2]!r} is not numeric") from None
            uid, iid = fields[0], fields[1]
            if not uid or not iid:
                raise DatasetError(f"{path}:{lineno}: empty user or item id")
            users.append(user_index.setdefault(uid, len(user_index)))
            items.append(item_index.setdefault(iid, len(item_index)))

    if not users:
        raise DatasetError(f"{path}: no interactions")
    m = len(item_index)
    keys = np.unique(np.asarray(users, dtype=np.int64) * m + np.asarray(items, dtype=np.int64))
    return InteractionDataset(len(user_index), m, keys // m, keys % m,
                              tuple(user_index), tuple(item_index))


def from_pairs(pairs, n: int | None = None, m: int | None = None) -> InteractionDataset:
    """Build a dataset from integer (user, item) pairs, collapsing duplicates."""
    arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        raise DatasetError("no interactions")
    n = int(arr[:, 0].max()) + 1 if n is None else n
    m = int(arr[:, 1].max()) + 1 if m is None else m
    keys = np.unique(arr[:, 0] * m + arr[:, 1])
    return InteractionDataset(n, m, keys // m, keys % m,
                              tuple(str(u) for u in range(n)), tuple(str(i) for i in range(m)))


def split_train_test(ds: InteractionDataset, train_ratio: float = 0.8, seed: int = 0) -> SplitDataset:
    """Per-user random split; each user keeps ceil(ratio * degree) items in train."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    in_train = np.zeros(len(ds), dtype=bool)
    indptr = ds._indptr
    for u in range(ds.n):
        start, stop = indptr[u], indptr[u + 1]
        deg = stop - start
        if deg == 0:
            continue
        # tiny epsilon keeps 0.8 * 10 from rounding up through float error
        keep = min(deg, math.ceil(train_ratio * deg - 1e-9))
        chosen = rng.permutation(deg)[:keep]
        in_train[start + chosen] = True
    return SplitDataset(ds.subset(in_train), ds.subset(~in_train), seed)


def assign_popularity_groups(train: InteractionDataset) -> PopularityGrouping:
    """Rank items by (training count desc, index asc) and cut 20/60/20."""
    if len(train) == 0:
        raise DatasetError("cannot group items of an empty training set")
    counts = train.item_counts()
    m = train.m
    order = np.lexsort((np.arange(m), -counts))
    n_head = math.ceil(HEAD_FRACTION * m - 1e-9)
    n_tail = math.floor(TAIL_FRACTION * m + 1e-9)
    n_tail = min(n_tail, m - n_head)
    group_of = np.full(m, Group.MID, dtype=np.int8)
    group_of[order[:n_head]] = Group.HEAD
    if n_tail:
        group_of[order[m - n_tail:]] = Group.TAIL
    head_min = int(counts[order[n_head - 1]])
    tail_max = int(counts[order[m - n_tail]]) if n_tail else -1
    group_of.setflags(write=False)
    return PopularityGrouping(counts, group_of, (head_min, tail_max))


def profile_distribution(user: int, interactions: InteractionDataset,
                         grouping: PopularityGrouping) -> GroupDistribution:
    items = interactions.user_items(user)
    if items.size == 0:
        raise ValueError(f"user {user} has an empty profile; skip this user")
    return GroupDistribution.from_counts(np.bincount(grouping.group_of[items], minlength=3))


def write_grouping(path, grouping: PopularityGrouping, item_ids=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "count", "group"])
        for i in range(grouping.counts.size):
            label = Group(int(grouping.group_of[i])).label
            w.writerow([item_ids[i] if item_ids else i, int(grouping.counts[i]), label])
