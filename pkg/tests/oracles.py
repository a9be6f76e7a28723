"""Independent reference computations used as test oracles.

Nothing here calls into the package's loss, gradient or metric code; the
package is imported only for its model container and enum types.
"""

import itertools
import math

import numpy as np

from ilerec.bpr import FactorModel
from ilerec.ile import Distance

FD_STEP = 1e-5


def loop_objective(p, q, users, pos, neg, groups, lam, which, ent_floor=1e-8):
    """L* for one batch, written with scalar loops and math only."""
    losses = []
    for u, i, j in zip(users, pos, neg):
        x = sum(p[u, d] * (q[i, d] - q[j, d]) for d in range(p.shape[1]))
        losses.append(math.log1p(math.exp(-x)) if x > -30 else -x + math.log1p(math.exp(x)))
    mean = math.fsum(losses) / len(losses)
    by_group = {}
    for loss, g in zip(losses, groups):
        by_group.setdefault(int(g), []).append(loss)
    vals = [math.fsum(v) / len(v) for _, v in sorted(by_group.items())]
    if lam == 0 or which == Distance.NONE:
        return mean
    avg = math.fsum(vals) / len(vals)
    if which == Distance.STD:
        d = math.sqrt(math.fsum((v - avg) ** 2 for v in vals) / len(vals))
    elif which == Distance.MAD:
        d = math.fsum(abs(v - avg) for v in vals) / len(vals)
    else:
        d = -math.fsum(max(v, ent_floor) * math.log(max(v, ent_floor)) for v in vals)
    return mean + lam * d


def np_objective(p, q, users, pos, neg, groups, lam, which, ent_floor=1e-8):
    """Same objective as ``loop_objective`` in numpy.

    ``p`` and ``q`` may carry a leading stack axis; one objective value is
    returned per stacked copy.
    """
    x = np.sum(p[..., users, :] * (q[..., pos, :] - q[..., neg, :]), axis=-1)
    losses = np.log1p(np.exp(-np.abs(x))) + np.maximum(-x, 0.0)
    mean = losses.mean(axis=-1)
    if lam == 0 or which == Distance.NONE:
        return mean
    onehot = (groups[:, None] == np.arange(3)[None, :]).astype(float)
    counts = onehot.sum(axis=0)
    present = counts > 0
    vals = (losses @ onehot)[..., present] / counts[present]
    centered = vals - vals.mean(axis=-1, keepdims=True)
    if which == Distance.STD:
        d = np.sqrt(np.mean(centered ** 2, axis=-1))
    elif which == Distance.MAD:
        d = np.mean(np.abs(centered), axis=-1)
    else:
        c = np.maximum(vals, ent_floor)
        d = -np.sum(c * np.log(c), axis=-1)
    return mean + lam * d


def fd_gradient(objective, p, q, h=FD_STEP):
    """Central differences of ``objective(p, q)`` for every entry of p and q.

    All 2 * (p.size + q.size) perturbed copies are stacked and evaluated in
    one call, so ``objective`` must accept a leading stack axis.
    """
    n_p, n_q = p.size, q.size
    total = n_p + n_q
    ps = np.broadcast_to(p, (2 * total,) + p.shape).copy()
    qs = np.broadcast_to(q, (2 * total,) + q.shape).copy()
    for c in range(total):
        for sign, row in ((1.0, c), (-1.0, total + c)):
            if c < n_p:
                ps[row].flat[c] += sign * h
            else:
                qs[row].flat[c - n_p] += sign * h
    vals = objective(ps, qs)
    grad = (vals[:total] - vals[total:]) / (2 * h)
    return grad[:n_p].reshape(p.shape), grad[n_p:].reshape(q.shape)


def relative_error(analytic, numeric, floor=1e-6):
    """Largest entrywise |a - f| / max(|a|, |f|, floor)."""
    a = np.asarray(analytic).ravel()
    f = np.asarray(numeric).ravel()
    return float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)))


def random_batch(rng, n=10, m=20, d=4, b=64):
    model = FactorModel(rng.normal(0, 0.5, (n, d)), rng.normal(0, 0.5, (m, d)))
    users = rng.integers(0, n, b)
    pos = rng.integers(0, m, b)
    neg = (pos + rng.integers(1, m, b)) % m
    groups = rng.integers(0, 3, b)
    return model, users, pos, neg, groups


# --- brute-force metric references ------------------------------------------------

def bf_jsd(p, q):
    def kl(a, b):
        total = 0.0
        for x, y in zip(a, b):
            if x > 0:
                total += x * math.log(x / y, 2)
        return total
    mid = [(x + y) / 2 for x, y in zip(p, q)]
    return kl(p, mid) / 2 + kl(q, mid) / 2


def bf_distribution(items, group_of):
    counts = [0, 0, 0]
    for i in items:
        counts[int(group_of[i])] += 1
    total = sum(counts)
    return [c / total for c in counts]


def bf_ndcg(lists, test_sets, k):
    scores = []
    for u, ranked in lists.items():
        rel = test_sets.get(u, set())
        if not rel:
            continue
        dcg = 0.0
        for pos, item in enumerate(ranked[:k]):
            if item in rel:
                dcg += 1.0 / math.log2(pos + 2)
        idcg = 0.0
        for pos in range(min(k, len(rel))):
            idcg += 1.0 / math.log2(pos + 2)
        scores.append(dcg / idcg)
    return sum(scores) / len(scores) if scores else 0.0


def bf_upd(lists, profiles, group_of):
    vals = [bf_jsd(bf_distribution(profiles[u], group_of), bf_distribution(lists[u], group_of))
            for u in lists if lists[u] and profiles.get(u)]
    return sum(vals) / len(vals) if vals else 0.0


def bf_ad(lists, m):
    return len({i for ranked in lists.values() for i in ranked}) / m


def bf_gini_pairwise(x):
    """Mean absolute difference form: sum_ij |x_i - x_j| / (2 n^2 mean)."""
    n = len(x)
    mean = sum(x) / n
    return sum(abs(a - b) for a in x for b in x) / (2 * n * n * mean)


def bf_ee(lists, m):
    exposure = [0.0] * m
    for ranked in lists.values():
        for pos, item in enumerate(ranked, start=1):
            exposure[item] += 1.0 / (1.0 + math.log2(pos))
    return 1.0 - bf_gini_pairwise(exposure)


def all_lists(m, k):
    """Every ordered list of k distinct items from range(m)."""
    return list(itertools.permutations(range(m), k))


def random_metric_instance(rng, max_users=5, max_items=8, max_k=3):
    """Small random train/test/list instance for exhaustive metric checks.

    Returns (train, test, grouping, recs, lists, profiles, test_sets, k) where
    the last four are plain Python structures for the brute-force functions.
    """
    from ilerec.bpr import RecommendationSet
    from ilerec.ingest import assign_popularity_groups, from_pairs

    n = int(rng.integers(1, max_users + 1))
    m = int(rng.integers(3, max_items + 1))
    k = int(rng.integers(1, min(max_k, m) + 1))
    cells = rng.random((n, m))
    train_pairs = [(u, i) for u in range(n) for i in range(m) if cells[u, i] < 0.4]
    test_pairs = [(u, i) for u in range(n) for i in range(m) if 0.4 <= cells[u, i] < 0.6]
    if not train_pairs:
        train_pairs = [(0, 0)]
    train = from_pairs(train_pairs, n=n, m=m)
    test = from_pairs(test_pairs or [(0, m - 1)], n=n, m=m)
    grouping = assign_popularity_groups(train)
    recs = RecommendationSet()
    lists, profiles, test_sets = {}, {}, {}
    for u in range(n):
        length = int(rng.integers(1 if u == 0 else 0, k + 1))
        ranked = [int(i) for i in rng.permutation(m)[:length]]
        recs.add(u, ranked, np.linspace(1, 0, length))
        lists[u] = ranked
        profiles[u] = [i for uu, i in train_pairs if uu == u]
        test_sets[u] = {i for uu, i in (test_pairs or [(0, m - 1)]) if uu == u}
    return train, test, grouping, recs, lists, profiles, test_sets, k
