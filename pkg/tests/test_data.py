"""Loader, split and partition behavior, including hand-traced fixtures."""

from __future__ import annotations

import os

import numpy as np
import pytest

from fedrec import data
from fedrec.data import ClientPartition, SplitSpec

ML1M_PATH = os.environ.get("FEDREC_ML1M")
ANIME_PATH = os.environ.get("FEDREC_ANIME")


# ---------------------------------------------------------------------------
# MovieLens loader
# ---------------------------------------------------------------------------


def test_movielens_two_line_fixture(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::10::5::0\n2::10::3::0\n")
    m = data.load_movielens(str(path))
    # raw users 1,2 -> 0,1; raw item 10 -> 0
    assert m.num_users == 2 and m.num_items == 1
    assert list(zip(m.user_idx, m.item_idx, m.values)) == [(0, 0, 5.0), (1, 0, 3.0)]
    assert list(m.user_raw_ids) == [1, 2]
    assert list(m.item_raw_ids) == [10]


def test_movielens_empty_file(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("")
    m = data.load_movielens(str(path))
    assert m.num_users == 0 and m.num_items == 0 and m.num_entries == 0


def test_movielens_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::10::5::0\n1::11::5\n")
    with pytest.raises(ValueError, match="line 2"):
        data.load_movielens(str(path))


def test_movielens_non_integer_field(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::x::5::0\n")
    with pytest.raises(ValueError, match="line 1"):
        data.load_movielens(str(path))


def test_movielens_duplicate_pair_rejected(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::10::5::0\n1::10::3::0\n")
    with pytest.raises(ValueError, match="duplicate"):
        data.load_movielens(str(path))


def test_movielens_rating_out_of_scale(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::10::7::0\n")
    with pytest.raises(ValueError, match="outside 1..5"):
        data.load_movielens(str(path))


@pytest.mark.skipif(ML1M_PATH is None, reason="set FEDREC_ML1M to the ratings.dat path")
def test_movielens_real_file_attributes():
    m = data.load_movielens(ML1M_PATH)
    assert m.num_users == 6040
    assert m.num_items == 3706
    assert abs(m.sparsity - 0.96) < 0.01


# ---------------------------------------------------------------------------
# Anime loader
# ---------------------------------------------------------------------------


def _write_anime(path, rows):
    path.write_text("user_id,anime_id,rating\n" + "".join(f"{u},{a},{r}\n" for u, a, r in rows))


def test_anime_threshold_boundary(tmp_path):
    # user 1 has 20 ratings, user 2 only 19; items all above threshold
    rows = [(1, a, 7) for a in range(1, 21)] + [(2, a, 7) for a in range(1, 20)]
    # bulk users so every item clears the 20-rating item threshold
    rows += [(u, a, 6) for u in range(3, 23) for a in range(1, 21)]
    path = tmp_path / "rating.csv"
    _write_anime(path, rows)
    m = data.load_anime(str(path), min_ratings=20, max_users=6000)
    assert 2 not in m.user_raw_ids  # 19 ratings: below threshold
    assert 1 in m.user_raw_ids


def test_anime_unrated_sentinel_dropped_before_counting(tmp_path):
    # user 1 has 20 rows but one is the -1 sentinel -> 19 rated -> dropped
    rows = [(1, a, 7) for a in range(1, 20)] + [(1, 20, -1)]
    rows += [(u, a, 6) for u in range(2, 23) for a in range(1, 21)]
    path = tmp_path / "rating.csv"
    _write_anime(path, rows)
    m = data.load_anime(str(path), min_ratings=20, max_users=6000)
    assert 1 not in m.user_raw_ids
    assert m.load_stats["unrated_dropped"] == 1


def test_anime_user_cap_keeps_item_universe(tmp_path):
    # 3 surviving users; cap at 2 -> user 3 dropped, but its items remain columns
    rows = [(u, a, 5) for u in (1, 2, 3) for a in range(1, 21)]
    rows += [(3, 21, 5)]
    rows += [(u, 21, 5) for u in range(4, 23)]  # item 21 clears item threshold
    path = tmp_path / "rating.csv"
    _write_anime(path, rows)
    m = data.load_anime(str(path), min_ratings=20, max_users=2)
    assert m.num_users == 2
    assert list(m.user_raw_ids) == [1, 2]
    assert 21 in m.item_raw_ids  # rated only by dropped users, still a column
    assert m.load_stats["items_after_threshold"] == m.num_items


def test_anime_bad_header(tmp_path):
    path = tmp_path / "rating.csv"
    path.write_text("a,b,c\n1,1,5\n")
    with pytest.raises(ValueError, match="header"):
        data.load_anime(str(path))


def test_anime_rating_out_of_scale(tmp_path):
    path = tmp_path / "rating.csv"
    path.write_text("user_id,anime_id,rating\n1,1,11\n")
    with pytest.raises(ValueError, match="line 2"):
        data.load_anime(str(path))


@pytest.mark.skipif(ANIME_PATH is None, reason="set FEDREC_ANIME to the rating.csv path")
def test_anime_real_file_attributes():
    m = data.load_anime(ANIME_PATH)
    assert m.load_stats["items_after_threshold"] == 9927
    assert abs(m.sparsity - 0.99) < 0.01


# ---------------------------------------------------------------------------
# Binarize
# ---------------------------------------------------------------------------


def _matrix(values, items=None):
    values = np.asarray(values, dtype=np.float64)
    items = np.arange(len(values)) if items is None else np.asarray(items)
    return data.RatingMatrix.from_entries(
        1, int(items.max()) + 1, np.zeros(len(values), dtype=np.int64), items, values
    )


def test_binarize_rule():
    m = _matrix([5.0, 2.0, 4.0])
    b = data.binarize(m, 3.5)
    assert list(b.values) == [1.0, 0.0, 1.0]
    np.testing.assert_array_equal(b.per_user_rated[0], m.per_user_rated[0])
    assert b.implicit and b.rating_scale is None


def test_binarize_strict_inequality():
    m = _matrix([3.5, 4.0])
    b = data.binarize(m, 3.5)
    assert list(b.values) == [0.0, 1.0]


def test_binarize_preserves_entry_sets():
    rng = np.random.default_rng(0)
    m = data.gen_synthetic(20, 15, sparsity=0.7, seed=4)
    b = data.binarize(m, 3.5)
    assert b.num_entries == m.num_entries
    for u in range(m.num_users):
        np.testing.assert_array_equal(b.per_user_rated[u], m.per_user_rated[u])
    with pytest.raises(ValueError):
        data.binarize(b, 0.5)


# ---------------------------------------------------------------------------
# Split
# ---------------------------------------------------------------------------


def test_split_counts():
    m = data.gen_synthetic(5, 10, sparsity=0.8, seed=0)
    m = m.subset_entries(np.arange(10))
    train, test = data.split(m, SplitSpec(0.8, seed=0))
    assert train.num_entries == 8 and test.num_entries == 2


def test_split_is_deterministic_and_seed_sensitive():
    m = data.gen_synthetic(20, 20, sparsity=0.75, seed=2)
    a1, b1 = data.split(m, SplitSpec(0.8, seed=5))
    a2, b2 = data.split(m, SplitSpec(0.8, seed=5))
    np.testing.assert_array_equal(a1.user_idx, a2.user_idx)
    np.testing.assert_array_equal(a1.item_idx, a2.item_idx)
    a3, _ = data.split(m, SplitSpec(0.8, seed=6))
    assert not (
        a1.user_idx.shape == a3.user_idx.shape
        and (a1.user_idx == a3.user_idx).all()
        and (a1.item_idx == a3.item_idx).all()
    )


def test_split_disjoint_union():
    m = data.gen_synthetic(15, 12, sparsity=0.7, seed=3)
    train, test = data.split(m, SplitSpec(0.8, seed=1))
    assert train.num_entries + test.num_entries == m.num_entries
    pairs = set(zip(m.user_idx, m.item_idx))
    train_pairs = set(zip(train.user_idx, train.item_idx))
    test_pairs = set(zip(test.user_idx, test.item_idx))
    assert train_pairs | test_pairs == pairs
    assert not (train_pairs & test_pairs)
    assert train.num_users == m.num_users and train.num_items == m.num_items


def test_split_bad_fraction():
    m = data.gen_synthetic(5, 5, sparsity=0.5, seed=0)
    for frac in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            data.split(m, SplitSpec(frac, seed=0))


# ---------------------------------------------------------------------------
# Partition
# ---------------------------------------------------------------------------


def test_partition_single_client():
    m = data.gen_synthetic(10, 8, sparsity=0.6, seed=1)
    p = data.partition(m, 1, seed=0)
    assert list(p.members[0]) == list(range(10))
    np.testing.assert_array_equal(p.item_index_sets[0], m.rated_items())


def test_partition_one_user_per_client():
    m = data.gen_synthetic(10, 8, sparsity=0.6, seed=1)
    p = data.partition(m, 10, seed=0)
    assert all(len(us) == 1 for us in p.members)
    covered = sorted(int(us[0]) for us in p.members)
    assert covered == list(range(10))


def test_partition_bounds():
    m = data.gen_synthetic(5, 8, sparsity=0.5, seed=1)
    with pytest.raises(ValueError):
        data.partition(m, 6, seed=0)
    with pytest.raises(ValueError):
        data.partition(m, 0, seed=0)


def test_partition_item_sets_by_hand():
    # users with rated sets {0,2}, {1,3}, {0}; c0={u0,u2}, c1={u1}
    m = data.RatingMatrix.from_entries(
        3, 4,
        np.array([0, 0, 1, 1, 2]),
        np.array([0, 2, 1, 3, 0]),
        np.array([5.0, 4.0, 3.0, 2.0, 1.0]),
    )
    p = ClientPartition.from_assignment(m, np.array([0, 1, 0]), 2)
    assert list(p.item_index_sets[0]) == [0, 2]
    assert list(p.item_index_sets[1]) == [1, 3]


def test_partition_entry_round_trip_and_coverage():
    m = data.gen_synthetic(30, 20, sparsity=0.8, seed=7)
    train, _ = data.split(m, SplitSpec(0.8, seed=7))
    p = data.partition(train, 7, seed=7)
    per_client = sum(
        sum(len(train.per_user_rated[u]) for u in us) for us in p.members
    )
    assert per_client == train.num_entries
    union = np.unique(np.concatenate(p.item_index_sets))
    np.testing.assert_array_equal(union, train.rated_items())
    for item_set in p.item_index_sets:
        assert item_set.min() >= 0 and item_set.max() < train.num_items


def test_partition_deterministic():
    m = data.gen_synthetic(12, 9, sparsity=0.6, seed=2)
    p1 = data.partition(m, 3, seed=9)
    p2 = data.partition(m, 3, seed=9)
    np.testing.assert_array_equal(p1.assignment, p2.assignment)


def test_partition_manifest(tmp_path):
    m = data.gen_synthetic(6, 5, sparsity=0.5, seed=2)
    p = data.partition(m, 2, seed=1)
    out = tmp_path / "partition.tsv"
    data.export_partition_manifest(p, m, str(out))
    lines = out.read_text().splitlines()
    assert len(lines) == 6
    parsed = [tuple(map(int, line.split("\t"))) for line in lines]
    for client_id, raw_id in parsed:
        user = int(np.flatnonzero(m.user_raw_ids == raw_id)[0])
        assert p.assignment[user] == client_id


# ---------------------------------------------------------------------------
# Synthetic generator and helpers
# ---------------------------------------------------------------------------


def test_gen_synthetic_properties():
    m = data.gen_synthetic(50, 40, sparsity=0.9, seed=11)
    assert m.num_users == 50 and m.num_items == 40
    assert m.values.min() >= 1.0 and m.values.max() <= 5.0
    assert np.allclose(m.values, np.round(m.values))
    assert abs(m.sparsity - 0.9) < 0.05
    m2 = data.gen_synthetic(50, 40, sparsity=0.9, seed=11)
    np.testing.assert_array_equal(m.values, m2.values)
    np.testing.assert_array_equal(m.item_idx, m2.item_idx)


def test_subsample_users():
    m = data.gen_synthetic(40, 25, sparsity=0.8, seed=3)
    s = data.subsample_users(m, 10, seed=5)
    assert s.num_users == 10 and s.num_items == m.num_items
    # every kept entry exists in the source under the raw id mapping
    for u, i, v in zip(s.user_idx[:50], s.item_idx[:50], s.values[:50]):
        raw = s.user_raw_ids[u]
        src_u = int(np.flatnonzero(m.user_raw_ids == raw)[0])
        pos = np.flatnonzero(m.per_user_rated[src_u] == i)
        assert pos.size == 1
        assert m.per_user_values[src_u][pos[0]] == v


def test_write_movielens_round_trip(tmp_path):
    m = data.gen_synthetic(8, 6, sparsity=0.5, seed=13)
    path = tmp_path / "synth.dat"
    data.write_movielens(m, str(path))
    back = data.load_movielens(str(path))
    assert back.num_users == m.num_users
    assert back.num_items == m.num_items
    np.testing.assert_array_equal(back.values, m.values)
