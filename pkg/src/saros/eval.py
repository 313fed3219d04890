"""Ranking-quality metrics (MAP@K, NDCG@K) and test-loss reporting.

Items are ranked per user by the dot product of the learned embeddings,
ties broken by ascending item id so repeated evaluation is bitwise-stable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DataError, ModelParams
from .ingest import TEST, TRAIN, Dataset
from .loss import dataset_loss

CANDIDATE_MODES = ("test", "all")


def average_precision_at_k(relevance, k: int) -> float:
    """AP@K of a ranked binary relevance list.

    Sum of precision@j over the relevant positions j <= k, divided by
    min(k, number of relevant items anywhere in the list).  Returns 0.0
    when the list has no relevant item (such users are excluded from the
    MAP mean by the caller).
    """
    if k < 1:
        raise DataError(f"K must be >= 1, got {k}")
    rel = np.asarray(relevance, dtype=np.float64)
    n_relevant = int(rel.sum())
    if n_relevant == 0:
        return 0.0
    top = rel[:k]
    hits = np.cumsum(top)
    precision_at = hits / np.arange(1, len(top) + 1)
    return float(precision_at[top > 0].sum() / min(k, n_relevant))


def ndcg_at_k(relevance, k: int) -> float:
    """NDCG@K with binary gains: DCG@K / IDCG@K.

    DCG@K = sum_{i<=k} (2^rel_i - 1) / log2(1 + i); the ideal DCG places
    one relevant item per position over min(k, #relevant) positions.
    Returns 0.0 when the list has no relevant item.
    """
    if k < 1:
        raise DataError(f"K must be >= 1, got {k}")
    rel = np.asarray(relevance, dtype=np.float64)
    n_relevant = int(rel.sum())
    if n_relevant == 0:
        return 0.0
    top = rel[:k]
    discounts = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float(((np.exp2(top) - 1.0) * discounts).sum())
    ideal = 1.0 / np.log2(np.arange(2, min(k, n_relevant) + 2))
    return dcg / float(ideal.sum())


@dataclass
class RankedList:
    """One user's evaluation candidates, sorted by descending score."""

    user: int
    items: np.ndarray
    scores: np.ndarray
    relevance: np.ndarray  # 0/1


def rank_candidates(params: ModelParams, user: int, candidates, relevant_set) -> RankedList:
    cand = np.asarray(candidates, dtype=np.int64)
    scores = params.score(user, cand)
    order = np.lexsort((cand, -scores))
    cand = cand[order]
    rel = np.isin(cand, relevant_set).astype(np.int8) if len(relevant_set) else np.zeros(len(cand), dtype=np.int8)
    return RankedList(user=user, items=cand, scores=scores[order], relevance=rel)


def _user_candidates(dataset: Dataset, u: int, mode: str):
    """(candidates, relevant test items) for one user under a candidate mode.

    ``test``: the distinct items of the user's own test interactions.
    ``all``: every item except the user's train positives.
    Repeated test events on one item collapse to a single candidate,
    relevant if any of its test events was positive.
    """
    t_items, t_fb, _ = dataset.user_arrays(u, TEST)
    relevant = np.unique(t_items[t_fb > 0])
    if mode == "test":
        candidates = np.unique(t_items)
    elif mode == "all":
        tr_items, tr_fb, _ = dataset.user_arrays(u, TRAIN)
        train_pos = np.unique(tr_items[tr_fb > 0])
        candidates = np.setdiff1d(np.arange(dataset.n_items, dtype=np.int64), train_pos)
        relevant = np.setdiff1d(relevant, train_pos)
    else:
        raise DataError(f"candidate_mode must be one of {CANDIDATE_MODES}, got {mode!r}")
    return candidates, relevant


@dataclass
class MetricsReport:
    dataset: str
    trainer: str
    metrics: dict  # {K: {"map": float, "ndcg": float}}
    test_loss: float | None
    n_eval_users: int
    config_hash: str
    seed: int
    candidate_mode: str = "test"
    extra: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        payload = {
            "dataset": self.dataset,
            "trainer": self.trainer,
            "K": {str(k): v for k, v in sorted(self.metrics.items())},
            "test_loss": self.test_loss,
            "n_eval_users": self.n_eval_users,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "candidate_mode": self.candidate_mode,
            **self.extra,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")

    def to_csv(self, path) -> None:
        """One wide row: map@K/ndcg@K columns for each K, plus provenance."""
        ks = sorted(self.metrics)
        header = ["dataset", "trainer", "test_loss", "n_eval_users"]
        row = [self.dataset, self.trainer, repr(self.test_loss) if self.test_loss is not None else "", self.n_eval_users]
        for k in ks:
            header += [f"map@{k}", f"ndcg@{k}"]
            row += [repr(self.metrics[k]["map"]), repr(self.metrics[k]["ndcg"])]
        header += ["candidate_mode", "config_hash", "seed"]
        row += [self.candidate_mode, self.config_hash, self.seed]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerow(row)


def evaluate(params: ModelParams, dataset: Dataset, ks=(5, 10), candidate_mode: str = "test",
             lam: float = 0.0, include_reg: bool = True, dataset_name: str = "",
             trainer: str = "", config_hash: str = "", seed: int = 0) -> MetricsReport:
    """MAP@K / NDCG@K over the test split plus the test loss.

    Users without any relevant (positive) test item are excluded from the
    metric means.  The test loss is the user-averaged pairwise loss over
    each user's test items, computed with the training lambda unless
    ``include_reg=False``.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise DataError(f"K values must be positive integers, got {ks}")
    ap_sums = {k: 0.0 for k in ks}
    ndcg_sums = {k: 0.0 for k in ks}
    n_eval = 0
    for u in range(dataset.n_users):
        candidates, relevant = _user_candidates(dataset, u, candidate_mode)
        if len(relevant) == 0 or len(candidates) == 0:
            continue
        ranked = rank_candidates(params, u, candidates, relevant)
        n_eval += 1
        for k in ks:
            ap_sums[k] += average_precision_at_k(ranked.relevance, k)
            ndcg_sums[k] += ndcg_at_k(ranked.relevance, k)
    if n_eval == 0:
        raise DataError("no evaluable user: nobody has a positive test item")
    try:
        test_loss = dataset_loss(params, dataset, TEST, lam, include_reg)
    except DataError:
        test_loss = None
    metrics = {k: {"map": ap_sums[k] / n_eval, "ndcg": ndcg_sums[k] / n_eval} for k in ks}
    return MetricsReport(
        dataset=dataset_name,
        trainer=trainer,
        metrics=metrics,
        test_loss=test_loss,
        n_eval_users=n_eval,
        config_hash=config_hash,
        seed=seed,
        candidate_mode=candidate_mode,
    )
