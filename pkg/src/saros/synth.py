"""Synthetic datasets with planted low-rank preference structure.

Used by the convergence tests and the kernel benchmark: ground-truth
embeddings are drawn, each user is shown a random item sequence, and an
item is clicked when its true score is above the user's median.  Every
user therefore has both feedback classes and a rich block structure.
"""

from __future__ import annotations

import numpy as np

from .core import IdMap
from .ingest import TRAIN, Dataset


# (negative run, positive run) sizes whose shuffled concatenation gives every
# user 3 train blocks over 12 negatives and 12 positives; blocks this size
# cover enough of each user's pair grid that the block-wise objective and
# the full pair average share their minimizer closely
_UNIFORM_RUNS = ((4, 4), (3, 5), (5, 3))


def _uniform_sign_pattern(rng) -> np.ndarray:
    """30-long feedback pattern: 24 train items in 3 blocks, 3-/3+ tail."""
    parts = []
    for n_neg, n_pos in rng.permutation(_UNIFORM_RUNS):
        parts.append(-np.ones(n_neg, dtype=np.int8))
        parts.append(np.ones(n_pos, dtype=np.int8))
    parts.append(np.array([-1, -1, -1, 1, 1, 1], dtype=np.int8))
    return np.concatenate(parts)


def planted_dataset(n_users: int = 200, n_items: int = 200, k: int = 8,
                    per_user: int = 30, seed: int = 0, train_fraction: float = 0.8,
                    uniform_blocks: bool = False) -> Dataset:
    """Planted-preference dataset.

    With ``uniform_blocks`` every user gets the same 30-interaction layout
    (6 train blocks of varying sizes, 15 clicks overall), so all trainers
    weight users identically and share one minimizer; ``per_user`` is
    ignored in that mode.  Otherwise the item order is uniformly random.
    """
    rng = np.random.default_rng(seed)
    true_user = rng.normal(0.0, 1.0, size=(n_users, k))
    true_item = rng.normal(0.0, 1.0, size=(n_items, k))
    if uniform_blocks:
        per_user = 30
    user_ptr = np.arange(n_users + 1, dtype=np.int64) * per_user
    items = np.empty(n_users * per_user, dtype=np.int64)
    feedback = np.empty(n_users * per_user, dtype=np.int8)
    timestamps = np.tile(np.arange(per_user, dtype=np.int64), n_users)
    split = np.empty(n_users * per_user, dtype=np.uint8)
    n_train = int(np.ceil(train_fraction * per_user))
    for u in range(n_users):
        shown = rng.choice(n_items, size=per_user, replace=False)
        scores = true_item[shown] @ true_user[u]
        sl = slice(u * per_user, (u + 1) * per_user)
        if uniform_blocks:
            pattern = _uniform_sign_pattern(rng)
            n_pos = int((pattern > 0).sum())
            by_score = shown[np.argsort(scores)]
            clicked_items = rng.permutation(by_score[-n_pos:])
            unclicked_items = rng.permutation(by_score[:-n_pos])
            seq = np.empty(per_user, dtype=np.int64)
            seq[pattern > 0] = clicked_items
            seq[pattern < 0] = unclicked_items
            items[sl] = seq
            feedback[sl] = pattern
        else:
            items[sl] = shown
            feedback[sl] = np.where(scores > np.median(scores), 1, -1)
        split[sl] = np.where(np.arange(per_user) < n_train, TRAIN, 1)
    return Dataset(
        user_map=IdMap(str(u) for u in range(n_users)),
        item_map=IdMap(str(i) for i in range(n_items)),
        user_ptr=user_ptr,
        items=items,
        feedback=feedback,
        timestamps=timestamps,
        split=split,
    )


def write_raw_log(dataset: Dataset, path, sep: str = "\t") -> None:
    """Dump a Dataset back to a parseable binary-schema click log."""
    lines = []
    for u in range(dataset.n_users):
        items, fb, ts = dataset.user_arrays(u)
        for i, f, t in zip(items, fb, ts):
            click = 1 if f > 0 else 0
            lines.append(sep.join([dataset.user_map.to_raw(u), dataset.item_map.to_raw(int(i)), str(click), str(int(t))]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
