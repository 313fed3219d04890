"""Interaction-log parsing, feedback binarization and the temporal split.

The input is a UTF-8 text log, one record per line, tab- or comma-separated
with columns ``user,item,value,timestamp`` (header optional).  ``value`` is
either an explicit rating (binarized against a threshold) or a binary click
flag, depending on the declared schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import DataError, IdMap

TRAIN, TEST = 0, 1


class ParseError(DataError):
    """A line of the input log does not match the declared schema."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class Schema:
    """Declared layout of the ``value`` column.

    ``explicit`` mode carries a numeric rating, made positive when
    ``rating >= threshold``; ``binary`` mode carries a click flag that is
    passed through.  ``sep``/``has_header`` left as None are auto-detected.
    """

    mode: str = "explicit"
    threshold: float = 4.0
    sep: str | None = None
    has_header: bool | None = None

    def __post_init__(self):
        if self.mode not in ("explicit", "binary"):
            raise DataError(f"schema mode must be 'explicit' or 'binary', got {self.mode!r}")


class RawRecord(NamedTuple):
    user: str
    item: str
    value: float
    timestamp: int


class LabeledRecord(NamedTuple):
    """A raw interaction after binarization, before id densification."""

    user: str
    item: str
    feedback: int  # +1 / -1
    timestamp: int


@dataclass
class Dataset:
    """Time-ordered per-user interactions with a train/test tag each.

    Interactions are stored user-major: user ``u`` owns the flat-array range
    ``user_ptr[u]:user_ptr[u+1]``, sorted ascending by timestamp within the
    user (ties kept in input order).  ``split`` holds TRAIN (0) or TEST (1).
    """

    user_map: IdMap
    item_map: IdMap
    user_ptr: np.ndarray  # int64, len n_users + 1
    items: np.ndarray  # int64 dense item ids
    feedback: np.ndarray  # int8, +1 / -1
    timestamps: np.ndarray  # int64
    split: np.ndarray  # uint8, TRAIN / TEST

    @property
    def n_users(self) -> int:
        return len(self.user_map)

    @property
    def n_items(self) -> int:
        return len(self.item_map)

    @property
    def n_interactions(self) -> int:
        return len(self.items)

    def user_slice(self, u: int) -> slice:
        return slice(int(self.user_ptr[u]), int(self.user_ptr[u + 1]))

    def user_arrays(self, u: int, split: int | None = None):
        """(items, feedback, timestamps) of one user, optionally one split."""
        sl = self.user_slice(u)
        items, fb, ts = self.items[sl], self.feedback[sl], self.timestamps[sl]
        if split is None:
            return items, fb, ts
        mask = self.split[sl] == split
        return items[mask], fb[mask], ts[mask]

    def check_invariants(self):
        for u in range(self.n_users):
            sl = self.user_slice(u)
            ts = self.timestamps[sl]
            if np.any(np.diff(ts) < 0):
                raise DataError(f"user {u}: timestamps not non-decreasing")
            sp = self.split[sl]
            if not np.any(sp == TRAIN):
                raise DataError(f"user {u}: no train interactions")
            if np.any(np.diff(sp.astype(np.int8)) < 0):
                raise DataError(f"user {u}: a test interaction precedes a train one")

    def save(self, out_dir) -> None:
        """Write the canonical on-disk form: .npy arrays plus a JSON header."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "user_ptr.npy", self.user_ptr)
        np.save(out / "items.npy", self.items)
        np.save(out / "feedback.npy", self.feedback)
        np.save(out / "timestamps.npy", self.timestamps)
        np.save(out / "split.npy", self.split)
        meta = {
            "format": "saros-dataset",
            "version": 1,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "user_ids": self.user_map.raw_ids,
            "item_ids": self.item_map.raw_ids,
        }
        (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, in_dir) -> "Dataset":
        src = Path(in_dir)
        meta_path = src / "dataset.json"
        if not meta_path.exists():
            raise DataError(f"{src}: not a prepared dataset directory (dataset.json missing)")
        meta = json.loads(meta_path.read_text())
        if meta.get("format") != "saros-dataset":
            raise DataError(f"{meta_path}: unrecognized dataset format")
        ds = cls(
            user_map=IdMap(meta["user_ids"]),
            item_map=IdMap(meta["item_ids"]),
            user_ptr=np.load(src / "user_ptr.npy"),
            items=np.load(src / "items.npy"),
            feedback=np.load(src / "feedback.npy"),
            timestamps=np.load(src / "timestamps.npy"),
            split=np.load(src / "split.npy"),
        )
        return ds


@dataclass
class DiscardReport:
    """Users dropped during the split, with the reason and event count each."""

    entries: list  # (user_raw, reason, n_interactions)

    @property
    def n_users(self) -> int:
        return len(self.entries)

    @property
    def n_interactions(self) -> int:
        return sum(n for _, _, n in self.entries)

    def write(self, path) -> None:
        lines = [f"{user}\t{reason}\t{n}" for user, reason, n in self.entries]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _detect_sep(line: str) -> str:
    return "\t" if "\t" in line else ","


def _looks_like_header(fields) -> bool:
    # A header row has a non-numeric timestamp column.
    try:
        int(fields[3])
        return False
    except ValueError:
        return True


def parse_log(path, schema: Schema) -> list[RawRecord]:
    """Read one RawRecord per well-formed line, in file order."""
    path = Path(path)
    records = []
    sep = schema.sep
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if sep is None:
                sep = _detect_sep(line)
            fields = line.split(sep)
            if line_no == 1 and (schema.has_header or (schema.has_header is None and len(fields) == 4 and _looks_like_header(fields))):
                continue
            if len(fields) != 4:
                raise ParseError(path, line_no, f"expected 4 columns, got {len(fields)}")
            user, item, value_s, ts_s = (f.strip() for f in fields)
            try:
                ts = int(ts_s)
            except ValueError:
                raise ParseError(path, line_no, f"timestamp not an integer: {ts_s!r}") from None
            if schema.mode == "explicit":
                try:
                    value = float(value_s)
                except ValueError:
                    raise ParseError(path, line_no, f"rating not numeric: {value_s!r}") from None
            else:
                if value_s in ("1", "+1"):
                    value = 1.0
                elif value_s in ("0", "-1"):
                    value = -1.0
                else:
                    raise ParseError(path, line_no, f"click flag must be 0/1/+1/-1, got {value_s!r}")
            records.append(RawRecord(user, item, value, ts))
    return records


def binarize(records, schema: Schema) -> list[LabeledRecord]:
    """Map raw values to +1/-1 feedback.

    Explicit mode: +1 iff rating >= threshold, else -1.  Binary mode: the
    click flag is passed through.
    """
    out = []
    if schema.mode == "explicit":
        thr = schema.threshold
        for r in records:
            out.append(LabeledRecord(r.user, r.item, 1 if r.value >= thr else -1, r.timestamp))
    else:
        for r in records:
            out.append(LabeledRecord(r.user, r.item, 1 if r.value > 0 else -1, r.timestamp))
    return out


def split_dataset(interactions, train_fraction: float = 0.8):
    """Build the temporal train/test split over surviving users.

    Per user, the first ceil(train_fraction * n_u) time-ordered interactions
    are tagged train and the rest test.  Users with no positive feedback at
    all (no click ever) or no negative feedback at all (nothing shown but
    unclicked, so no blocks can form) are dropped before splitting and
    reported.  Dense user/item ids are assigned by first appearance in the
    time-sorted stream of surviving records.

    Returns (Dataset, DiscardReport).
    """
    if not interactions:
        raise DataError("no interactions to split")
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0,1), got {train_fraction}")

    # Stable sort by timestamp; ties keep input order.
    ordered = sorted(interactions, key=lambda r: r.timestamp)

    per_user: dict[str, list[LabeledRecord]] = {}
    for rec in ordered:
        per_user.setdefault(rec.user, []).append(rec)

    discards = []
    survivors = {}
    for user_raw, recs in per_user.items():
        n_pos = sum(1 for r in recs if r.feedback > 0)
        if n_pos == 0:
            discards.append((user_raw, "no_positive_feedback", len(recs)))
        elif n_pos == len(recs):
            discards.append((user_raw, "no_negative_feedback", len(recs)))
        else:
            survivors[user_raw] = recs
    if not survivors:
        raise DataError("every user was discarded; nothing to split")

    user_map = IdMap()
    item_map = IdMap()
    for rec in ordered:
        if rec.user in survivors:
            user_map.add(rec.user)
            item_map.add(rec.item)

    n_users = len(user_map)
    counts = np.zeros(n_users, dtype=np.int64)
    for u in range(n_users):
        counts[u] = len(survivors[user_map.to_raw(u)])
    user_ptr = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(counts, out=user_ptr[1:])

    total = int(user_ptr[-1])
    items = np.empty(total, dtype=np.int64)
    feedback = np.empty(total, dtype=np.int8)
    timestamps = np.empty(total, dtype=np.int64)
    split = np.empty(total, dtype=np.uint8)

    for u in range(n_users):
        recs = survivors[user_map.to_raw(u)]
        n_train = math.ceil(train_fraction * len(recs))
        base = int(user_ptr[u])
        for j, rec in enumerate(recs):
            items[base + j] = item_map.to_dense(rec.item)
            feedback[base + j] = rec.feedback
            timestamps[base + j] = rec.timestamp
            split[base + j] = TRAIN if j < n_train else TEST

    return (
        Dataset(user_map, item_map, user_ptr, items, feedback, timestamps, split),
        DiscardReport(discards),
    )


def dataset_stats(dataset: Dataset) -> dict:
    """Corpus summary: sizes, sparsity, per-user feedback averages, split mix."""
    n = dataset.n_interactions
    pos = dataset.feedback > 0
    train = dataset.split == TRAIN
    n_train = int(train.sum())
    n_test = n - n_train
    stats = {
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_interactions": n,
        "sparsity": 1.0 - n / (dataset.n_users * dataset.n_items),
        "avg_pos_per_user": float(pos.sum()) / dataset.n_users,
        "avg_neg_per_user": float((~pos).sum()) / dataset.n_users,
        "n_train": n_train,
        "n_test": n_test,
        "pos_train_pct": 100.0 * float(pos[train].sum()) / n_train if n_train else 0.0,
        "pos_test_pct": 100.0 * float(pos[~train].sum()) / n_test if n_test else 0.0,
    }
    return stats


def prepare(log_path, schema: Schema, train_fraction: float = 0.8):
    """parse -> binarize -> split, as one call. Returns (Dataset, DiscardReport)."""
    records = parse_log(log_path, schema)
    if not records:
        raise DataError(f"{log_path}: empty input log")
    return split_dataset(binarize(records, schema), train_fraction)
