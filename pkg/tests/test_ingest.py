import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ilerec.ingest import (DatasetError, Group, InteractionDataset, assign_popularity_groups,
                           from_pairs, load_interactions, profile_distribution, split_train_test,
                           write_grouping)


def _write(tmp_path, text, name="data.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _counts_dataset(counts):
    """Item k gets counts[k] distinct users."""
    pairs = [(u, i) for i, c in enumerate(counts) for u in range(c)]
    return from_pairs(pairs, n=max(counts), m=len(counts))


class TestLoadInteractions:
    def test_three_line_file(self, tmp_path):
        ds = load_interactions(_write(tmp_path, "a x\na y\nb x\n"), "pairs")
        assert (ds.n, ds.m, len(ds)) == (2, 2, 3)
        assert ds.user_ids == ("a", "b")
        assert ds.item_ids == ("x", "y")

    def test_duplicates_collapse(self, tmp_path):
        ds = load_interactions(_write(tmp_path, "u1 i1\nu1 i1\n"), "pairs")
        assert len(ds) == 1

    def test_movielens_style_triples(self, tmp_path):
        text = "1::1193::5::978300760\n1::661::3::978302109\n2::1193::1::978298413\n"
        ds = load_interactions(_write(tmp_path, text), "triples")
        assert (ds.n, ds.m, len(ds)) == (2, 2, 3)

    @pytest.mark.parametrize("text", ["u,i,4.0\nv,i,1\n", "u\ti\t4\nv\ti\t1\n", "u i 4\nv i 1\n"])
    def test_delimiters_autodetected(self, tmp_path, text):
        ds = load_interactions(_write(tmp_path, text))
        assert (ds.n, ds.m, len(ds)) == (2, 1, 2)

    def test_comments_and_header(self, tmp_path):
        text = "# exported\nuser,item,rating\nu,i,3\n"
        ds = load_interactions(_write(tmp_path, text), "triples", header=True)
        assert len(ds) == 1

    def test_low_ratings_still_positive(self, tmp_path):
        ds = load_interactions(_write(tmp_path, "u i 0.5\nu j 1\n"), "triples")
        assert len(ds) == 2

    def test_malformed_line_reports_number(self, tmp_path):
        with pytest.raises(DatasetError, match=":3:"):
            load_interactions(_write(tmp_path, "a x\nb y\nc\n"), "pairs")

    def test_non_numeric_rating(self, tmp_path):
        with pytest.raises(DatasetError, match=":1:"):
            load_interactions(_write(tmp_path, "a x good\n"), "triples")

    def test_empty_file(self, tmp_path):
        with pytest.raises(DatasetError, match="no interactions"):
            load_interactions(_write(tmp_path, "# nothing\n\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_interactions(tmp_path / "absent.txt")


class TestDatasetInvariants:
    def test_rejects_duplicates_and_ranges(self):
        with pytest.raises(DatasetError):
            InteractionDataset(2, 2, np.array([0, 0]), np.array([1, 1]), ("a", "b"), ("x", "y"))
        with pytest.raises(DatasetError):
            InteractionDataset(2, 2, np.array([2]), np.array([0]), ("a", "b"), ("x", "y"))

    def test_contains(self):
        ds = from_pairs([(0, 1), (1, 0)])
        assert ds.contains(np.array([0, 0, 1]), np.array([1, 0, 0])).tolist() == [True, False, True]


class TestSplit:
    def test_ratio_rounding(self):
        ds = from_pairs([(0, i) for i in range(10)] + [(1, 0)])
        sp = split_train_test(ds, 0.8, seed=3)
        assert sp.train.user_items(0).size == 8
        assert sp.test.user_items(0).size == 2
        assert sp.train.user_items(1).size == 1
        assert sp.test.user_items(1).size == 0

    def test_deterministic(self):
        ds = from_pairs([(u, i) for u in range(5) for i in range(u, 12)])
        a = split_train_test(ds, 0.8, seed=7)
        b = split_train_test(ds, 0.8, seed=7)
        assert np.array_equal(a.train.keys, b.train.keys)
        assert np.array_equal(a.test.keys, b.test.keys)

    def test_bad_ratio(self):
        ds = from_pairs([(0, 0)])
        for r in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                split_train_test(ds, r, 0)

    def test_partition_over_seeds(self):
        rng = np.random.default_rng(0)
        for seed in range(100):
            n, m = rng.integers(1, 8), rng.integers(1, 10)
            k = rng.integers(1, n * m + 1)
            keys = rng.choice(n * m, size=k, replace=False)
            ds = from_pairs(np.stack([keys // m, keys % m], 1), n=n, m=m)
            sp = split_train_test(ds, 0.8, seed)
            assert np.intersect1d(sp.train.keys, sp.test.keys).size == 0
            assert np.array_equal(np.sort(np.concatenate([sp.train.keys, sp.test.keys])), ds.keys)
            for u in range(n):
                deg = ds.user_items(u).size
                if deg:
                    assert sp.train.user_items(u).size == math.ceil(0.8 * deg - 1e-9)


class TestGrouping:
    def test_ten_items_descending(self):
        ds = _counts_dataset([100, 90, 80, 70, 60, 50, 40, 30, 20, 10])
        g = assign_popularity_groups(ds)
        assert g.members(Group.HEAD).tolist() == [0, 1]
        assert g.members(Group.TAIL).tolist() == [8, 9]
        assert g.sizes() == (2, 6, 2)

    def test_five_items(self):
        g = assign_popularity_groups(_counts_dataset([5, 4, 3, 2, 1]))
        assert g.sizes() == (1, 3, 1)

    def test_ties_by_index(self):
        g = assign_popularity_groups(_counts_dataset([3] * 10))
        assert g.members(Group.HEAD).tolist() == [0, 1]
        assert g.members(Group.TAIL).tolist() == [8, 9]

    def test_zero_count_items_go_to_tail(self):
        ds = from_pairs([(0, 0), (1, 0), (0, 1)], n=2, m=5)
        g = assign_popularity_groups(ds)
        assert g.group_of[0] == Group.HEAD
        assert g.group_of[4] == Group.TAIL
        assert g.counts.tolist() == [2, 1, 0, 0, 0]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 30), min_size=1, max_size=40))
    def test_sizes_and_monotonicity(self, counts):
        if sum(counts) == 0:
            counts = counts[:-1] + [1]
        g = assign_popularity_groups(_counts_dataset(counts))
        m = len(counts)
        h, mid, t = g.sizes()
        assert h + mid + t == m
        assert h == math.ceil(0.2 * m - 1e-9)
        assert t == min(math.floor(0.2 * m + 1e-9), m - h)
        c = np.asarray(counts)
        for a in range(m):
            for b in range(m):
                if c[a] > c[b]:
                    assert g.group_of[a] <= g.group_of[b]

    def test_dump(self, tmp_path):
        ds = _counts_dataset([3, 2, 1, 1, 1])
        g = assign_popularity_groups(ds)
        path = tmp_path / "groups.csv"
        write_grouping(path, g, ds.item_ids)
        lines = path.read_text().splitlines()
        assert lines[0] == "item_id,count,group"
        assert lines[1] == "0,3,H"
        assert len(lines) == 6


class TestProfileDistribution:
    def test_ratios(self):
        ds = _counts_dataset([100, 90, 80, 70, 60, 50, 40, 30, 20, 10])
        g = assign_popularity_groups(ds)
        # user 0 interacted with everything: 2 H, 6 M, 2 T
        d = profile_distribution(0, ds, g)
        assert (d.p_head, d.p_mid, d.p_tail) == pytest.approx((0.2, 0.6, 0.2))

    def test_examples(self):
        m = 20
        ds = _counts_dataset(list(range(40, 20, -1)))  # items 0-3 head, 4-15 mid, 16-19 tail
        g = assign_popularity_groups(ds)
        prof = from_pairs([(1, 0), (1, 1)] + [(2, i) for i in [0, 1, 2, 3, 4, 5, 6, 7, 16, 17]],
                          n=3, m=m)
        d2 = profile_distribution(1, prof, g)
        assert d2.as_array().tolist() == [1.0, 0.0, 0.0]
        d3 = profile_distribution(2, prof, g)
        assert d3.as_array() == pytest.approx([0.4, 0.4, 0.2])

    def test_five_three_two(self):
        ds = _counts_dataset(list(range(100, 50, -1)))  # 50 items: 10 H, 30 M, 10 T
        g = assign_popularity_groups(ds)
        items = [0, 1, 2, 3, 4, 10, 11, 12, 45, 46]
        prof = from_pairs([(0, i) for i in items], n=1, m=50)
        d = profile_distribution(0, prof, g)
        assert d.as_array() == pytest.approx([0.5, 0.3, 0.2])
        assert d.as_array().sum() == pytest.approx(1.0, abs=1e-9)

    def test_empty_profile(self):
        ds = from_pairs([(0, 0)], n=2, m=1)
        g = assign_popularity_groups(ds)
        with pytest.raises(ValueError, match="skip"):
            profile_distribution(1, ds, g)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 49), min_size=1, max_size=50, unique=True))
    def test_sums_to_one(self, items):
        ds = _counts_dataset(list(range(100, 50, -1)))
        g = assign_popularity_groups(ds)
        prof = from_pairs([(0, i) for i in items], n=1, m=50)
        assert profile_distribution(0, prof, g).as_array().sum() == pytest.approx(1.0, abs=1e-9)
