"""Zipf-skewed synthetic implicit-feedback datasets."""

from __future__ import annotations

import numpy as np

from .ingest import DatasetError, InteractionDataset

DEFAULT_USERS = 200
DEFAULT_ITEMS = 100
DEFAULT_INTERACTIONS = 8000
DEFAULT_ZIPF = 1.2


def zipf_probabilities(items: int, s: float) -> np.ndarray:
    ranks = np.arange(1, items + 1, dtype=float)
    w = ranks ** -s
    return w / w.sum()


def synth_dataset(users: int = DEFAULT_USERS, items: int = DEFAULT_ITEMS,
                  interactions: int = DEFAULT_INTERACTIONS, zipf_s: float = DEFAULT_ZIPF,
                  seed: int = 0) -> InteractionDataset:
    """Draw distinct (user, item) pairs: user uniform, item by Zipf rank.

    Popularity ranks are assigned to item indices through a seeded
    permutation so index order carries no popularity signal. Duplicate draws
    are rejected, which flattens the head once popular items saturate.
    """
    if users <= 0 or items <= 0 or interactions <= 0:
        raise DatasetError("users, items and interactions must be positive")
    if interactions > users * items:
        raise DatasetError(f"{interactions} interactions do not fit in a {users}x{items} matrix")
    if zipf_s < 0:
        raise DatasetError("zipf exponent must be non-negative")
    rng = np.random.default_rng(seed)
    rank_to_item = rng.permutation(items)
    p = zipf_probabilities(items, zipf_s)

    taken = np.zeros(users * items, dtype=bool)
    keys = []
    have = 0
    while have < interactions:
        chunk = max(1024, 2 * (interactions - have))
        u = rng.integers(0, users, size=chunk)
        i = rank_to_item[rng.choice(items, size=chunk, p=p)]
        k = u * items + i
        _, first = np.unique(k, return_index=True)
        k = k[np.sort(first)]
        k = k[~taken[k]][: interactions - have]
        taken[k] = True
        keys.append(k)
        have += k.size
    keys = np.concatenate(keys)
    return InteractionDataset(users, items, keys // items, keys % items,
                              tuple(f"u{x}" for x in range(users)),
                              tuple(f"i{x}" for x in range(items)))
