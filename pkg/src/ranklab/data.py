"""Dataset ingestion, binarization, per-user splits, and negative sampling.

Interactions arrive as delimited text (``user<TAB>item[<TAB>rating]``) and are
turned into dense-index structures: an interaction set (per-user relevant and
explicitly-irrelevant items) and split assignments (train/test positives plus
sampled negatives for one negative-sampling ratio).

All operations are pure and deterministic given their seed arguments.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError
from .util import subseed, write_csv

SPLIT_ROLES = ("train_pos", "test_pos", "train_neg", "test_neg")


@dataclass
class RawRatings:
    """Parsed interaction records, prior to binarization."""

    records: list  # (user_key, item_key, rating) tuples
    unary: bool = False


@dataclass
class InteractionSet:
    """Binarized interactions over dense user/item index spaces.

    ``positives[u]`` and ``explicit_negatives[u]`` are sorted, disjoint item
    index arrays. Items observed only with negative ratings stay in the index
    space: they remain part of every user's ranking pool.
    """

    n_users: int
    n_items: int
    positives: list
    explicit_negatives: list
    user_labels: list | None = None
    item_labels: list | None = None

    def m(self, user: int) -> int:
        return int(self.positives[user].size)

    def n_interactions(self) -> int:
        return sum(p.size + n.size for p, n in zip(self.positives, self.explicit_negatives))

    def user_key(self, user: int) -> str:
        return self.user_labels[user] if self.user_labels else str(user)

    def item_key(self, item: int) -> str:
        return self.item_labels[item] if self.item_labels else str(item)


@dataclass
class SplitAssignment:
    """Per-user train/test positives and sampled negatives for one split.

    Produced in two stages: ``split_train_test`` fills the positive lists and
    leaves the negative ones as None; ``sample_negatives`` completes them.
    ``capped_users`` records users whose negative pool was smaller than the
    requested sample count.
    """

    split_id: int
    train_pos: list
    test_pos: list
    nsr: float | None = None
    train_neg: list | None = None
    test_neg: list | None = None
    capped_users: list = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.train_pos)

    def train_candidates(self, user: int):
        """Training item list and labels: positives first, then negatives."""
        if self.train_neg is None:
            raise DataError("split has no sampled train negatives")
        pos, neg = self.train_pos[user], self.train_neg[user]
        items = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(pos.size, np.int8), np.zeros(neg.size, np.int8)])
        return items, labels


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def load_interactions(path, format: str = "graded") -> RawRatings:
    """Parse a delimited interactions file.

    Graded rows are ``user<TAB>item<TAB>rating`` with rating in 1..5; unary
    rows are ``user<TAB>item`` and imply rating 1. Duplicate (user, item)
    pairs are rejected.
    """
    if format not in ("unary", "graded"):
        raise ValueError(f"format must be 'unary' or 'graded', got {format!r}")
    unary = format == "unary"
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if unary:
                if len(fields) == 2:
                    user, item, rating = fields[0], fields[1], 1
                elif len(fields) == 3 and fields[2] == "1":
                    user, item, rating = fields[0], fields[1], 1
                else:
                    raise ParseError("expected 'user<TAB>item' for unary data", line_no)
            else:
                if len(fields) != 3:
                    raise ParseError("expected 'user<TAB>item<TAB>rating'", line_no)
                user, item = fields[0], fields[1]
                try:
                    rating = int(fields[2])
                except ValueError:
                    raise ParseError(f"rating {fields[2]!r} is not an integer", line_no) from None
                if not 1 <= rating <= 5:
                    raise ParseError(f"rating {rating} outside 1..5", line_no)
            if (user, item) in seen:
                raise DataError(f"duplicate interaction ({user}, {item})")
            seen.add((user, item))
            records.append((user, item, rating))
    return RawRatings(records=records, unary=unary)


def binarize_and_filter(
    raw: RawRatings,
    positive_threshold: int = 4,
    min_positives: int = 25,
    item_universe=None,
) -> InteractionSet:
    """Binarize ratings and drop users with too few relevant interactions.

    Ratings at or above the threshold become positives, the rest explicit
    negatives; unary data is all-positive. Surviving users are re-indexed
    densely, as are the items they touch (or, if given, a fixed
    ``item_universe`` of item keys).
    """
    if not raw.records:
        raise DataError("no interaction records to binarize")
    threshold = 1 if raw.unary else positive_threshold

    by_user: dict = {}
    for user, item, rating in raw.records:
        by_user.setdefault(user, ([], []))[0 if rating >= threshold else 1].append(item)

    kept_users = sorted(u for u, (pos, _neg) in by_user.items() if len(pos) >= min_positives)
    if not kept_users:
        raise DataError(f"no users with at least {min_positives} positives")

    if item_universe is None:
        touched = set()
        for u in kept_users:
            pos, neg = by_user[u]
            touched.update(pos)
            touched.update(neg)
        item_labels = sorted(touched)
    else:
        item_labels = sorted(item_universe)
    item_index = {k: i for i, k in enumerate(item_labels)}

    positives, negatives = [], []
    for u in kept_users:
        pos, neg = by_user[u]
        try:
            positives.append(np.array(sorted(item_index[k] for k in pos), dtype=np.int64))
            negatives.append(np.array(sorted(item_index[k] for k in neg), dtype=np.int64))
        except KeyError as exc:
            raise DataError(f"item {exc.args[0]!r} not in the provided item universe") from None

    return InteractionSet(
        n_users=len(kept_users),
        n_items=len(item_labels),
        positives=positives,
        explicit_negatives=negatives,
        user_labels=list(kept_users),
        item_labels=item_labels,
    )


def split_train_test(
    interactions: InteractionSet, split_id: int, seed: int, train_frac: float = 0.8
) -> SplitAssignment:
    """Partition each user's positives uniformly at random, without negatives.

    The train side takes round(train_frac * m) items (half rounds up), clamped
    so both sides stay non-empty. Distinct split ids give independent splits.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    rng = np.random.default_rng(subseed("split", seed, split_id))
    train_pos, test_pos = [], []
    for user in range(interactions.n_users):
        pos = interactions.positives[user]
        m = pos.size
        if m < 2:
            raise DataError(f"user {interactions.user_key(user)} has {m} positives; need at least 2 to split")
        n_train = min(max(_round_half_up(train_frac * m), 1), m - 1)
        perm = rng.permutation(m)
        train_pos.append(np.sort(pos[perm[:n_train]]))
        test_pos.append(np.sort(pos[perm[n_train:]]))
    return SplitAssignment(split_id=split_id, train_pos=train_pos, test_pos=test_pos)


def sample_negatives(
    split: SplitAssignment, interactions: InteractionSet, nsr: float, seed: int
) -> SplitAssignment:
    """Complete a split with uniformly sampled negatives at the given ratio.

    Each user's pool is everything that is not a positive for them (explicit
    negatives plus unobserved items). Train and test draws are disjoint; when
    a pool runs short the whole remainder is taken and the user is flagged.
    """
    if nsr <= 0:
        raise ValueError(f"nsr must be positive, got {nsr}")
    rng = np.random.default_rng(subseed("negatives", seed, split.split_id, f"{nsr:g}"))
    all_items = np.arange(interactions.n_items, dtype=np.int64)
    train_neg, test_neg, capped = [], [], []
    for user in range(split.n_users):
        pool = np.setdiff1d(all_items, interactions.positives[user], assume_unique=True)
        want_train = _round_half_up(nsr * split.train_pos[user].size)
        take_train = min(want_train, pool.size)
        tr = np.sort(rng.choice(pool, size=take_train, replace=False))
        rest = np.setdiff1d(pool, tr, assume_unique=True)
        want_test = _round_half_up(nsr * split.test_pos[user].size)
        take_test = min(want_test, rest.size)
        te = np.sort(rng.choice(rest, size=take_test, replace=False))
        train_neg.append(tr)
        test_neg.append(te)
        if take_train < want_train or take_test < want_test:
            capped.append(user)
    return SplitAssignment(
        split_id=split.split_id,
        train_pos=split.train_pos,
        test_pos=split.test_pos,
        nsr=float(nsr),
        train_neg=train_neg,
        test_neg=test_neg,
        capped_users=capped,
    )


def generate_synthetic(
    n_users: int, n_items: int, latent_dim: int, positives_per_user: int, seed: int
) -> InteractionSet:
    """Draw ground-truth factors and mark each user's top-scoring items relevant.

    Desk-scale stand-in for the real datasets; deterministic given the seed.
    """
    if n_users < 1 or n_items < 1:
        raise ValueError("n_users and n_items must be positive")
    if latent_dim < 1:
        raise ValueError(f"latent_dim must be at least 1, got {latent_dim}")
    if positives_per_user < 25:
        raise ValueError(f"positives_per_user must be at least 25, got {positives_per_user}")
    if n_items < positives_per_user:
        raise ValueError(f"n_items={n_items} is smaller than positives_per_user={positives_per_user}")
    rng = np.random.default_rng(subseed("synthetic", seed))
    user_factors = rng.normal(size=(n_users, latent_dim))
    item_factors = rng.normal(size=(n_items, latent_dim))
    scores = user_factors @ item_factors.T
    uw = len(str(n_users - 1))
    iw = len(str(n_items - 1))
    item_ids = np.arange(n_items)
    positives = []
    for user in range(n_users):
        order = np.lexsort((item_ids, -scores[user]))
        positives.append(np.sort(order[:positives_per_user]).astype(np.int64))
    return InteractionSet(
        n_users=n_users,
        n_items=n_items,
        positives=positives,
        explicit_negatives=[np.empty(0, dtype=np.int64) for _ in range(n_users)],
        user_labels=[f"u{u:0{uw}d}" for u in range(n_users)],
        item_labels=[f"i{i:0{iw}d}" for i in range(n_items)],
    )


def save_interactions(interactions: InteractionSet, path) -> None:
    """Write interactions back out as delimited text.

    Sets with explicit negatives are written graded (5 for positive, 1 for
    negative); purely positive sets are written unary.
    """
    graded = any(neg.size for neg in interactions.explicit_negatives)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for user in range(interactions.n_users):
            ukey = interactions.user_key(user)
            for item in interactions.positives[user]:
                ikey = interactions.item_key(int(item))
                fh.write(f"{ukey}\t{ikey}\t5\n" if graded else f"{ukey}\t{ikey}\n")
            for item in interactions.explicit_negatives[user]:
                fh.write(f"{ukey}\t{interactions.item_key(int(item))}\t1\n")


def save_split(split: SplitAssignment, interactions: InteractionSet, path) -> None:
    """Write one split as rows (split_id, user, item, role)."""
    rows = []
    role_lists = {
        "train_pos": split.train_pos,
        "test_pos": split.test_pos,
        "train_neg": split.train_neg or [],
        "test_neg": split.test_neg or [],
    }
    for role in SPLIT_ROLES:
        lists = role_lists[role]
        for user, items in enumerate(lists):
            ukey = interactions.user_key(user)
            for item in items:
                rows.append((split.split_id, ukey, interactions.item_key(int(item)), role))
    write_csv(path, ("split_id", "user", "item", "role"), rows)


def load_split(path, interactions: InteractionSet, nsr: float | None = None) -> SplitAssignment:
    """Read a split written by ``save_split`` back into index arrays."""
    import csv

    user_index = {interactions.user_key(u): u for u in range(interactions.n_users)}
    item_index = {interactions.item_key(i): i for i in range(interactions.n_items)}
    buckets = {role: [[] for _ in range(interactions.n_users)] for role in SPLIT_ROLES}
    split_id = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(("split_id", "user", "item", "role")):
            raise DataError(f"unexpected split file header: {header}")
        for row in reader:
            sid, user, item, role = row
            if role not in SPLIT_ROLES:
                raise DataError(f"unknown split role {role!r}")
            if split_id is None:
                split_id = int(sid)
            elif split_id != int(sid):
                raise DataError("split file mixes multiple split ids")
            buckets[role][user_index[user]].append(item_index[item])
    as_arrays = {
        role: [np.array(sorted(items), dtype=np.int64) for items in lists]
        for role, lists in buckets.items()
    }
    return SplitAssignment(
        split_id=0 if split_id is None else split_id,
        train_pos=as_arrays["train_pos"],
        test_pos=as_arrays["test_pos"],
        nsr=nsr,
        train_neg=as_arrays["train_neg"],
        test_neg=as_arrays["test_neg"],
    )
