"""Sparse rating data: loading, filtering, splitting, client partitioning.

All functions are pure and take explicit seeds; matrices are treated as
immutable once built.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import seeding

ML1M_RATING_SCALE = (1.0, 5.0)
ANIME_RATING_SCALE = (1.0, 10.0)


@dataclass
class RatingMatrix:
    """User-item ratings stored as aligned entry arrays plus per-user views.

    ``user_idx`` / ``item_idx`` / ``values`` hold one rating per position with
    contiguous 0-based indices, sorted by (user, item).  ``user_raw_ids`` and
    ``item_raw_ids`` map those indices back to the identifiers found in the
    source file.  Unrated pairs are absent from the arrays; in implicit mode a
    stored value of 0 is a rated negative, which is different from "never
    rated".
    """

    num_users: int
    num_items: int
    user_idx: np.ndarray
    item_idx: np.ndarray
    values: np.ndarray
    user_raw_ids: np.ndarray
    item_raw_ids: np.ndarray
    rating_scale: tuple[float, float] | None = ML1M_RATING_SCALE
    implicit: bool = False
    load_stats: dict | None = None
    per_user_rated: list[np.ndarray] = field(
        default_factory=list, repr=False, compare=False
    )
    per_user_values: list[np.ndarray] = field(
        default_factory=list, repr=False, compare=False
    )

    @classmethod
    def from_entries(
        cls,
        num_users: int,
        num_items: int,
        user_idx: np.ndarray,
        item_idx: np.ndarray,
        values: np.ndarray,
        user_raw_ids: np.ndarray | None = None,
        item_raw_ids: np.ndarray | None = None,
        rating_scale: tuple[float, float] | None = ML1M_RATING_SCALE,
        implicit: bool = False,
        load_stats: dict | None = None,
    ) -> "RatingMatrix":
        user_idx = np.asarray(user_idx, dtype=np.int64)
        item_idx = np.asarray(item_idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (user_idx.shape == item_idx.shape == values.shape):
            raise ValueError("entry arrays must have identical shapes")
        if user_idx.size:
            if user_idx.min() < 0 or user_idx.max() >= num_users:
                raise ValueError("user index out of range")
            if item_idx.min() < 0 or item_idx.max() >= num_items:
                raise ValueError("item index out of range")
        order = np.lexsort((item_idx, user_idx))
        user_idx, item_idx, values = user_idx[order], item_idx[order], values[order]
        if user_idx.size > 1:
            same = (np.diff(user_idx) == 0) & (np.diff(item_idx) == 0)
            if same.any():
                pos = int(np.flatnonzero(same)[0])
                raise ValueError(
                    f"duplicate rating for user {user_idx[pos]}, item {item_idx[pos]}"
                )
        if user_raw_ids is None:
            user_raw_ids = np.arange(num_users, dtype=np.int64)
        if item_raw_ids is None:
            item_raw_ids = np.arange(num_items, dtype=np.int64)
        matrix = cls(
            num_users=num_users,
            num_items=num_items,
            user_idx=user_idx,
            item_idx=item_idx,
            values=values,
            user_raw_ids=np.asarray(user_raw_ids, dtype=np.int64),
            item_raw_ids=np.asarray(item_raw_ids, dtype=np.int64),
            rating_scale=rating_scale,
            implicit=implicit,
            load_stats=load_stats,
        )
        matrix._build_user_views()
        return matrix

    def _build_user_views(self) -> None:
        bounds = np.searchsorted(self.user_idx, np.arange(self.num_users + 1))
        self.per_user_rated = [
            self.item_idx[bounds[u] : bounds[u + 1]] for u in range(self.num_users)
        ]
        self.per_user_values = [
            self.values[bounds[u] : bounds[u + 1]] for u in range(self.num_users)
        ]

    @property
    def num_entries(self) -> int:
        return int(self.user_idx.size)

    @property
    def sparsity(self) -> float:
        cells = self.num_users * self.num_items
        if cells == 0:
            return float("nan")
        return 1.0 - self.num_entries / cells

    def dense_rows(self, users: np.ndarray, dtype=np.float64) -> np.ndarray:
        """Dense rating rows for the given users; zeros at unrated positions."""
        users = np.asarray(users, dtype=np.int64)
        rows = np.zeros((users.size, self.num_items), dtype=dtype)
        for i, u in enumerate(users):
            rows[i, self.per_user_rated[u]] = self.per_user_values[u]
        return rows

    def subset_entries(self, keep: np.ndarray) -> "RatingMatrix":
        """New matrix restricted to the given entry positions (same k, n, ids)."""
        return RatingMatrix.from_entries(
            self.num_users,
            self.num_items,
            self.user_idx[keep],
            self.item_idx[keep],
            self.values[keep],
            user_raw_ids=self.user_raw_ids,
            item_raw_ids=self.item_raw_ids,
            rating_scale=self.rating_scale,
            implicit=self.implicit,
        )

    def rated_items(self) -> np.ndarray:
        """Sorted set of items rated by at least one user."""
        return np.unique(self.item_idx)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0


@dataclass
class ClientPartition:
    """Assignment of users to clients plus each client's rated-item set."""

    num_clients: int
    assignment: np.ndarray  # user index -> client index
    members: list[np.ndarray]  # per client, sorted user indices
    item_index_sets: list[np.ndarray]  # per client, sorted union of rated items

    @classmethod
    def from_assignment(
        cls, matrix: RatingMatrix, assignment: np.ndarray, num_clients: int
    ) -> "ClientPartition":
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (matrix.num_users,):
            raise ValueError("assignment must map every user to a client")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= num_clients):
            raise ValueError("client index out of range")
        members = [
            np.flatnonzero(assignment == m).astype(np.int64)
            for m in range(num_clients)
        ]
        if num_clients <= matrix.num_users and any(len(us) == 0 for us in members):
            raise ValueError("every client must own at least one user")
        item_sets = []
        for us in members:
            if len(us) == 0:
                item_sets.append(np.empty(0, dtype=np.int64))
                continue
            item_sets.append(
                np.unique(np.concatenate([matrix.per_user_rated[u] for u in us]))
            )
        return cls(
            num_clients=num_clients,
            assignment=assignment,
            members=members,
            item_index_sets=item_sets,
        )


def load_movielens(path: str) -> RatingMatrix:
    """Load a MovieLens ``ratings.dat`` file (``UserID::MovieID::Rating::Timestamp``).

    Raw IDs are remapped to contiguous 0-based indices in ascending raw-ID
    order; the mapping is retained on the returned matrix.  Ratings must be
    integers in 1..5.
    """
    raw_users: list[int] = []
    raw_items: list[int] = []
    vals: list[float] = []
    with open(path, "r", encoding="latin-1") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}: line {lineno}: expected UserID::MovieID::Rating::Timestamp"
                )
            try:
                user, item, rating = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: non-integer field") from exc
            if not 1 <= rating <= 5:
                raise ValueError(
                    f"{path}: line {lineno}: rating {rating} outside 1..5"
                )
            raw_users.append(user)
            raw_items.append(item)
            vals.append(float(rating))
    if not raw_users:
        return RatingMatrix.from_entries(
            0,
            0,
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0),
            user_raw_ids=np.empty(0, dtype=np.int64),
            item_raw_ids=np.empty(0, dtype=np.int64),
            rating_scale=ML1M_RATING_SCALE,
        )
    user_ids, user_codes = np.unique(np.asarray(raw_users, dtype=np.int64), return_inverse=True)
    item_ids, item_codes = np.unique(np.asarray(raw_items, dtype=np.int64), return_inverse=True)
    return RatingMatrix.from_entries(
        len(user_ids),
        len(item_ids),
        user_codes,
        item_codes,
        np.asarray(vals),
        user_raw_ids=user_ids,
        item_raw_ids=item_ids,
        rating_scale=ML1M_RATING_SCALE,
    )


def load_anime(path: str, min_ratings: int = 20, max_users: int = 6000) -> RatingMatrix:
    """Load an anime ``rating.csv`` file (header ``user_id,anime_id,rating``).

    Pipeline, in order: drop rows with the watched-but-unrated sentinel (-1);
    drop users and items with fewer than ``min_ratings`` remaining ratings in
    a single joint pass (no iterative re-filtering); keep the first
    ``max_users`` surviving users in ascending raw-ID order.  The item universe
    stays the full post-threshold item set, so columns do not depend on which
    users are kept.  Pre- and post-filter counts are exposed via
    ``load_stats``.
    """
    raw_users: list[int] = []
    raw_items: list[int] = []
    vals: list[float] = []
    dropped_unrated = 0
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise ValueError(f"{path}: empty file, expected a header row") from exc
        if [h.strip() for h in header[:3]] != ["user_id", "anime_id", "rating"]:
            raise ValueError(f"{path}: line 1: expected header user_id,anime_id,rating")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 fields")
            try:
                user, item, rating = int(row[0]), int(row[1]), int(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: non-integer field") from exc
            if rating == -1:
                dropped_unrated += 1
                continue
            if not 1 <= rating <= 10:
                raise ValueError(
                    f"{path}: line {lineno}: rating {rating} outside 1..10"
                )
            raw_users.append(user)
            raw_items.append(item)
            vals.append(float(rating))

    users_arr = np.asarray(raw_users, dtype=np.int64)
    items_arr = np.asarray(raw_items, dtype=np.int64)
    vals_arr = np.asarray(vals)
    stats: dict = {
        "raw_entries": int(users_arr.size + dropped_unrated),
        "unrated_dropped": int(dropped_unrated),
        "rated_entries": int(users_arr.size),
        "rated_users": int(np.unique(users_arr).size),
        "rated_items": int(np.unique(items_arr).size),
    }
    if users_arr.size == 0:
        return RatingMatrix.from_entries(
            0,
            0,
            users_arr,
            items_arr,
            vals_arr,
            user_raw_ids=np.empty(0, dtype=np.int64),
            item_raw_ids=np.empty(0, dtype=np.int64),
            rating_scale=ANIME_RATING_SCALE,
            load_stats=stats,
        )

    uniq_users, user_counts = np.unique(users_arr, return_counts=True)
    uniq_items, item_counts = np.unique(items_arr, return_counts=True)
    surviving_users = uniq_users[user_counts >= min_ratings]
    surviving_items = uniq_items[item_counts >= min_ratings]
    stats["users_after_threshold"] = int(surviving_users.size)
    stats["items_after_threshold"] = int(surviving_items.size)

    kept_users = surviving_users[:max_users]
    keep = np.isin(users_arr, kept_users) & np.isin(items_arr, surviving_items)
    users_arr, items_arr, vals_arr = users_arr[keep], items_arr[keep], vals_arr[keep]
    stats["users_kept"] = int(kept_users.size)
    stats["entries_kept"] = int(users_arr.size)

    user_codes = np.searchsorted(kept_users, users_arr)
    item_codes = np.searchsorted(surviving_items, items_arr)
    return RatingMatrix.from_entries(
        len(kept_users),
        len(surviving_items),
        user_codes,
        item_codes,
        vals_arr,
        user_raw_ids=kept_users,
        item_raw_ids=surviving_items,
        rating_scale=ANIME_RATING_SCALE,
        load_stats=stats,
    )


def binarize(matrix: RatingMatrix, threshold: float) -> RatingMatrix:
    """Map ratings to 1 if strictly above threshold else 0.

    Rated-index sets are unchanged: a 0 is a rated negative, not "unrated".
    """
    if matrix.implicit:
        raise ValueError("matrix is already implicit")
    return RatingMatrix.from_entries(
        matrix.num_users,
        matrix.num_items,
        matrix.user_idx,
        matrix.item_idx,
        (matrix.values > threshold).astype(np.float64),
        user_raw_ids=matrix.user_raw_ids,
        item_raw_ids=matrix.item_raw_ids,
        rating_scale=None,
        implicit=True,
        load_stats=matrix.load_stats,
    )


def split(matrix: RatingMatrix, spec: SplitSpec) -> tuple[RatingMatrix, RatingMatrix]:
    """Shuffle entries with a seeded generator and split by ``train_fraction``.

    Both halves share user/item counts, raw-ID mappings and mode flags.
    """
    if not 0.0 < spec.train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {spec.train_fraction}")
    if matrix.num_entries < 1:
        raise ValueError("cannot split an empty matrix")
    rng = seeding.derive_rng(spec.seed, seeding.SPLIT)
    perm = rng.permutation(matrix.num_entries)
    n_train = int(spec.train_fraction * matrix.num_entries)
    return matrix.subset_entries(perm[:n_train]), matrix.subset_entries(perm[n_train:])


def partition(matrix: RatingMatrix, num_clients: int, seed: int) -> ClientPartition:
    """Shuffle users with a seeded generator and deal them round-robin.

    Each client's item index set is the union of its members' rated sets in
    the given matrix (pass the train split for training-time index sets).
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_clients > matrix.num_users:
        raise ValueError(
            f"cannot spread {matrix.num_users} users over {num_clients} clients"
        )
    rng = seeding.derive_rng(seed, seeding.PARTITION)
    perm = rng.permutation(matrix.num_users)
    assignment = np.empty(matrix.num_users, dtype=np.int64)
    assignment[perm] = np.arange(matrix.num_users) % num_clients
    return ClientPartition.from_assignment(matrix, assignment, num_clients)


def export_partition_manifest(
    part: ClientPartition, matrix: RatingMatrix, path: str
) -> None:
    """Write an audit manifest, one ``client_id<TAB>user_raw_id`` line per user."""
    with open(path, "w", encoding="utf-8") as handle:
        for client_id, users in enumerate(part.members):
            for u in users:
                handle.write(f"{client_id}\t{matrix.user_raw_ids[u]}\n")


def write_movielens(matrix: RatingMatrix, path: str) -> None:
    """Write a matrix in ``UserID::MovieID::Rating::Timestamp`` format.

    Values are written as integers (the loader's rating contract); the
    timestamp column is zero.  Useful for persisting synthetic datasets in a
    form ``load_movielens`` accepts.
    """
    with open(path, "w", encoding="utf-8") as handle:
        for u, i, v in zip(matrix.user_idx, matrix.item_idx, matrix.values):
            handle.write(
                f"{matrix.user_raw_ids[u]}::{matrix.item_raw_ids[i]}::{int(v)}::0\n"
            )


def subsample_users(matrix: RatingMatrix, num_users: int, seed: int) -> RatingMatrix:
    """Keep a seeded random subset of users; items and their indices are kept."""
    if not 1 <= num_users <= matrix.num_users:
        raise ValueError("num_users out of range")
    rng = seeding.derive_rng(seed, seeding.PARTITION, 1)
    chosen = np.sort(rng.choice(matrix.num_users, size=num_users, replace=False))
    keep = np.isin(matrix.user_idx, chosen)
    new_codes = np.searchsorted(chosen, matrix.user_idx[keep])
    return RatingMatrix.from_entries(
        num_users,
        matrix.num_items,
        new_codes,
        matrix.item_idx[keep],
        matrix.values[keep],
        user_raw_ids=matrix.user_raw_ids[chosen],
        item_raw_ids=matrix.item_raw_ids,
        rating_scale=matrix.rating_scale,
        implicit=matrix.implicit,
    )


def gen_synthetic(
    num_users: int,
    num_items: int,
    sparsity: float = 0.95,
    rank: int = 8,
    noise: float = 0.3,
    seed: int = 0,
    rating_max: int = 5,
    popularity_skew: float = 0.8,
    min_ratings_per_user: int = 5,
    bias_scale: float = 0.5,
) -> RatingMatrix:
    """Generate a biased low-rank synthetic rating matrix with skewed popularity.

    Per-user rating counts follow a lognormal profile scaled to hit the target
    sparsity; rated items are drawn without replacement, weighted by a
    shuffled power-law popularity (exponent ``popularity_skew``).  Scores mix
    user and item biases (scaled by ``bias_scale``) with a rank-``rank``
    interaction term plus noise, then are rounded to integers and clipped to
    ``1..rating_max``.
    """
    if not 0.0 < sparsity < 1.0:
        raise ValueError("sparsity must be in (0, 1)")
    rng = seeding.derive_rng(seed, seeding.SYNTHETIC)
    target_total = max(num_users, int(round((1.0 - sparsity) * num_users * num_items)))

    weights = rng.lognormal(mean=0.0, sigma=0.5, size=num_users)
    counts = np.maximum(
        min_ratings_per_user,
        np.round(weights / weights.sum() * target_total).astype(np.int64),
    )
    counts = np.minimum(counts, num_items)

    popularity = (np.arange(num_items, dtype=np.float64) + 1.0) ** (-popularity_skew)
    rng.shuffle(popularity)
    log_pop = np.log(popularity)

    user_factors = rng.normal(size=(num_users, rank))
    item_factors = rng.normal(size=(num_items, rank))
    user_bias = bias_scale * rng.normal(size=num_users)
    item_bias = bias_scale * rng.normal(size=num_items)
    mid = (1.0 + rating_max) / 2.0
    spread = (rating_max - 1.0) / 4.0

    users_out: list[np.ndarray] = []
    items_out: list[np.ndarray] = []
    vals_out: list[np.ndarray] = []
    for u in range(num_users):
        c = int(counts[u])
        # Gumbel top-k gives an exact popularity-weighted sample w/o replacement.
        keys = log_pop + rng.gumbel(size=num_items)
        items = np.sort(np.argpartition(keys, -c)[-c:])
        scores = item_factors[items] @ user_factors[u] / np.sqrt(rank)
        scores = scores + user_bias[u] + item_bias[items] + noise * rng.normal(size=c)
        ratings = np.clip(np.round(mid + spread * scores), 1, rating_max)
        users_out.append(np.full(c, u, dtype=np.int64))
        items_out.append(items.astype(np.int64))
        vals_out.append(ratings.astype(np.float64))

    return RatingMatrix.from_entries(
        num_users,
        num_items,
        np.concatenate(users_out),
        np.concatenate(items_out),
        np.concatenate(vals_out),
        user_raw_ids=np.arange(1, num_users + 1, dtype=np.int64),
        item_raw_ids=np.arange(1, num_items + 1, dtype=np.int64),
        rating_scale=(1.0, float(rating_max)),
    )
