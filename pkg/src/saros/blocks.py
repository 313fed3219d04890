"""Segmentation of per-user feedback sequences into update blocks.

A block is one maximal run of consecutive negative items followed by the
maximal run of consecutive positive items right after it.  Positives seen
before any negative, and a trailing all-negative run, belong to no block
and are only counted.  Blocks are the unit of one sequential update.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import DataError
from .ingest import TRAIN, Dataset


@dataclass
class Block:
    negatives: np.ndarray  # int64 item ids, interaction order, >= 1
    positives: np.ndarray  # int64 item ids, interaction order, >= 1

    def __len__(self):
        return len(self.negatives) + len(self.positives)


@dataclass
class BlockSequence:
    user: int
    blocks: list = field(default_factory=list)
    leading_positives: int = 0
    trailing_negatives: int = 0

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def reconstruct_feedback(self) -> np.ndarray:
        """Feedback sequence implied by blocks plus recorded discards."""
        parts = [np.ones(self.leading_positives, dtype=np.int8)]
        for blk in self.blocks:
            parts.append(np.full(len(blk.negatives), -1, dtype=np.int8))
            parts.append(np.ones(len(blk.positives), dtype=np.int8))
        parts.append(np.full(self.trailing_negatives, -1, dtype=np.int8))
        return np.concatenate(parts)


def segment_user(user: int, items, feedback) -> BlockSequence:
    """Split one user's time-ordered train sequence into blocks.

    Item-by-item trace of the sequential pass: accumulate consecutive
    negatives, then consecutive positives (positives only count once some
    negative was seen); a block closes when both sides are non-empty and
    the run of positives ends.
    """
    items = np.asarray(items, dtype=np.int64)
    feedback = np.asarray(feedback)
    seq = BlockSequence(user=user)
    n = len(items)
    j = 0
    neg: list[int] = []
    pos: list[int] = []
    while j < n:
        while j < n and feedback[j] == -1:
            neg.append(j)
            j += 1
        while j < n and feedback[j] == 1:
            if neg:
                pos.append(j)
            else:
                seq.leading_positives += 1
            j += 1
        if neg and pos:
            seq.blocks.append(Block(items[neg], items[pos]))
            neg, pos = [], []
    seq.trailing_negatives = len(neg)
    return seq


def segment_dataset(dataset: Dataset, split: int = TRAIN) -> list[BlockSequence]:
    """Segment every user's sequence of the given split, in dense-id order."""
    seqs = []
    for u in range(dataset.n_users):
        items, fb, _ = dataset.user_arrays(u, split)
        seqs.append(segment_user(u, items, fb))
    return seqs


def estimate_thresholds(sequences) -> tuple[int, int]:
    """(b, B) = (min, rounded mean) of per-user block counts.

    Users with zero blocks are excluded.  The mean is rounded to the
    nearest integer, halves up.
    """
    counts = [s.n_blocks for s in sequences if s.n_blocks > 0]
    if not counts:
        raise DataError("no user has any block; cannot estimate thresholds")
    b = min(counts)
    B = int(np.floor(sum(counts) / len(counts) + 0.5))
    return b, B


def block_count_histogram(sequences):
    """Exact counts of block sizes and of per-user block counts.

    Block size is the total number of items in the block (negatives plus
    positives).  Returns (size_hist, per_user_hist) as Counters.
    """
    size_hist = Counter()
    per_user = Counter()
    for s in sequences:
        per_user[s.n_blocks] += 1
        for blk in s.blocks:
            size_hist[len(blk)] += 1
    return size_hist, per_user


def write_histogram_csv(sequences, size_path, per_user_path) -> None:
    size_hist, per_user = block_count_histogram(sequences)
    with open(size_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block_size", "count"])
        for size in sorted(size_hist):
            w.writerow([size, size_hist[size]])
    with open(per_user_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["blocks_per_user", "count"])
        for n in sorted(per_user):
            w.writerow([n, per_user[n]])


@dataclass
class PackedBlocks:
    """Flat-array form of all users' block sequences, for the update kernels.

    Users appear in ascending dense id (the fixed visit order); users with
    zero blocks are omitted.  User ``i`` of ``users`` owns blocks
    ``user_block_ptr[i]:user_block_ptr[i+1]``; block ``t`` owns
    ``neg_items[block_neg_ptr[t]:block_neg_ptr[t+1]]`` and the matching
    ``pos_items`` range.
    """

    users: np.ndarray
    user_block_ptr: np.ndarray
    block_neg_ptr: np.ndarray
    block_pos_ptr: np.ndarray
    neg_items: np.ndarray
    pos_items: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.block_neg_ptr) - 1

    def user_blocks(self, i: int) -> range:
        return range(int(self.user_block_ptr[i]), int(self.user_block_ptr[i + 1]))

    def block_items(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        neg = self.neg_items[self.block_neg_ptr[t] : self.block_neg_ptr[t + 1]]
        pos = self.pos_items[self.block_pos_ptr[t] : self.block_pos_ptr[t + 1]]
        return neg, pos


def pack_sequences(sequences) -> PackedBlocks:
    users = []
    ub_ptr = [0]
    neg_ptr = [0]
    pos_ptr = [0]
    neg_flat = []
    pos_flat = []
    for s in sequences:
        if s.n_blocks == 0:
            continue
        users.append(s.user)
        for blk in s.blocks:
            neg_flat.append(blk.negatives)
            pos_flat.append(blk.positives)
            neg_ptr.append(neg_ptr[-1] + len(blk.negatives))
            pos_ptr.append(pos_ptr[-1] + len(blk.positives))
        ub_ptr.append(ub_ptr[-1] + s.n_blocks)
    return PackedBlocks(
        users=np.asarray(users, dtype=np.int64),
        user_block_ptr=np.asarray(ub_ptr, dtype=np.int64),
        block_neg_ptr=np.asarray(neg_ptr, dtype=np.int64),
        block_pos_ptr=np.asarray(pos_ptr, dtype=np.int64),
        neg_items=np.concatenate(neg_flat) if neg_flat else np.empty(0, dtype=np.int64),
        pos_items=np.concatenate(pos_flat) if pos_flat else np.empty(0, dtype=np.int64),
    )
