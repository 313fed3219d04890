"""Regularized logistic pairwise loss, analytic gradients and aggregates.

For a user u preferring item i over item i', with score
s = U_u . (I_i - I_i'):

    loss(u, i, i') = log(1 + exp(-s)) + lam * (|U_u|^2 + |I_i|^2 + |I_i'|^2)

Block- and dataset-level losses are plain averages of this triplet loss
over the positive x negative item pairs involved.  All formulas use the
overflow-safe softplus/logistic forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, ModelParams
from .ingest import Dataset


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """log(1 + exp(x)) without overflow for large |x|."""
    return np.logaddexp(0.0, x)


@dataclass
class TripletGrad:
    grad_user: np.ndarray
    grad_item_pos: np.ndarray
    grad_item_neg: np.ndarray


def triplet_loss(params: ModelParams, u: int, i_pos: int, i_neg: int, lam: float = 0.0) -> float:
    uvec = params.user_embeddings[u]
    ip = params.item_embeddings[i_pos]
    ineg = params.item_embeddings[i_neg]
    score = uvec @ (ip - ineg)
    reg = lam * (uvec @ uvec + ip @ ip + ineg @ ineg)
    return float(softplus(-score) + reg)


def triplet_grad(params: ModelParams, u: int, i_pos: int, i_neg: int, lam: float = 0.0) -> TripletGrad:
    """Analytic gradient of triplet_loss w.r.t. the three touched rows.

    With s = sigmoid(-U_u . (I_i - I_i')):
        d/dU_u   = -s (I_i - I_i') + 2 lam U_u
        d/dI_i   = -s U_u          + 2 lam I_i
        d/dI_i'  = +s U_u          + 2 lam I_i'
    """
    uvec = params.user_embeddings[u]
    ip = params.item_embeddings[i_pos]
    ineg = params.item_embeddings[i_neg]
    diff = ip - ineg
    s = sigmoid(-(uvec @ diff))
    return TripletGrad(
        grad_user=-s * diff + 2.0 * lam * uvec,
        grad_item_pos=-s * uvec + 2.0 * lam * ip,
        grad_item_neg=s * uvec + 2.0 * lam * ineg,
    )


@dataclass
class BlockGrad:
    """Pair-averaged block gradient, accumulated per distinct embedding row."""

    user: int
    grad_user: np.ndarray  # (k,)
    item_ids: np.ndarray  # distinct touched item rows, ascending
    grad_items: np.ndarray  # (len(item_ids), k)


def block_loss_and_grad(params: ModelParams, user: int, negatives, positives, lam: float = 0.0):
    """Loss and gradient of one block: the mean over positives x negatives.

    Vectorized closed form; duplicate item ids (an item repeated in the
    block) have their contributions summed into one gradient row.
    Returns (loss, BlockGrad).
    """
    neg = np.asarray(negatives, dtype=np.int64)
    pos = np.asarray(positives, dtype=np.int64)
    p, q = len(pos), len(neg)
    if p == 0 or q == 0:
        raise DataError("a block needs at least one positive and one negative item")
    uvec = params.user_embeddings[user]
    ipos = params.item_embeddings[pos]
    ineg = params.item_embeddings[neg]

    a = ipos @ uvec  # (p,)
    bvals = ineg @ uvec  # (q,)
    margins = a[:, None] - bvals[None, :]  # (p, q)
    loss = float(np.mean(softplus(-margins)))
    if lam:
        loss += lam * (
            uvec @ uvec
            + float(np.mean(np.einsum("ij,ij->i", ipos, ipos)))
            + float(np.mean(np.einsum("ij,ij->i", ineg, ineg)))
        )

    s = sigmoid(-margins)  # (p, q)
    rs = s.sum(axis=1)  # per positive
    cs = s.sum(axis=0)  # per negative
    inv = 1.0 / (p * q)
    grad_user = -inv * (rs @ ipos - cs @ ineg) + 2.0 * lam * uvec
    grad_pos = -inv * rs[:, None] * uvec + (2.0 * lam / p) * ipos
    grad_neg = inv * cs[:, None] * uvec + (2.0 * lam / q) * ineg

    all_ids = np.concatenate([pos, neg])
    all_grads = np.concatenate([grad_pos, grad_neg], axis=0)
    uniq, inverse = np.unique(all_ids, return_inverse=True)
    acc = np.zeros((len(uniq), params.k))
    np.add.at(acc, inverse, all_grads)
    return loss, BlockGrad(user=user, grad_user=grad_user, item_ids=uniq, grad_items=acc)


def pos_neg_by_user(dataset: Dataset, split: int):
    """CSR-style per-user positive and negative item lists for one split.

    Returns (pos_ptr, pos_items, neg_ptr, neg_items); a user is eligible
    for pair-based losses when both of its ranges are non-empty.
    """
    n = dataset.n_users
    pos_ptr = np.zeros(n + 1, dtype=np.int64)
    neg_ptr = np.zeros(n + 1, dtype=np.int64)
    pos_parts, neg_parts = [], []
    for u in range(n):
        items, fb, _ = dataset.user_arrays(u, split)
        is_pos = fb > 0
        pos_parts.append(items[is_pos])
        neg_parts.append(items[~is_pos])
        pos_ptr[u + 1] = pos_ptr[u] + len(pos_parts[-1])
        neg_ptr[u + 1] = neg_ptr[u] + len(neg_parts[-1])
    pos_items = np.concatenate(pos_parts) if pos_parts else np.empty(0, dtype=np.int64)
    neg_items = np.concatenate(neg_parts) if neg_parts else np.empty(0, dtype=np.int64)
    return pos_ptr, pos_items, neg_ptr, neg_items


def _user_pair_loss(U, I, u, pos, neg, lam, include_reg):
    uvec = U[u]
    a = I[pos] @ uvec
    b = I[neg] @ uvec
    loss = float(np.mean(softplus(-(a[:, None] - b[None, :]))))
    if include_reg and lam:
        ipos, ineg = I[pos], I[neg]
        loss += lam * (
            uvec @ uvec
            + float(np.mean(np.einsum("ij,ij->i", ipos, ipos)))
            + float(np.mean(np.einsum("ij,ij->i", ineg, ineg)))
        )
    return loss


def dataset_loss(params: ModelParams, dataset: Dataset, split: int, lam: float = 0.0, include_reg: bool = True) -> float:
    """Empirical ranking loss: users averaged uniformly, pairs within a user.

    Users lacking positives or negatives in the split are skipped; with
    ``include_reg=False`` the regularization term is dropped from the
    report even when lam > 0.
    """
    pos_ptr, pos_items, neg_ptr, neg_items = pos_neg_by_user(dataset, split)
    U, I = params.user_embeddings, params.item_embeddings
    total = 0.0
    eligible = 0
    for u in range(dataset.n_users):
        pos = pos_items[pos_ptr[u] : pos_ptr[u + 1]]
        neg = neg_items[neg_ptr[u] : neg_ptr[u + 1]]
        if len(pos) == 0 or len(neg) == 0:
            continue
        total += _user_pair_loss(U, I, u, pos, neg, lam, include_reg)
        eligible += 1
    if eligible == 0:
        raise DataError("no user has both positive and negative items in this split")
    return total / eligible


def dataset_loss_and_grad(params: ModelParams, dataset: Dataset, split: int, lam: float = 0.0):
    """Loss and full dense gradient of the user-averaged ranking loss."""
    pos_ptr, pos_items, neg_ptr, neg_items = pos_neg_by_user(dataset, split)
    U, I = params.user_embeddings, params.item_embeddings
    grad_U = np.zeros_like(U)
    grad_I = np.zeros_like(I)
    losses = []
    users = []
    for u in range(dataset.n_users):
        pos = pos_items[pos_ptr[u] : pos_ptr[u + 1]]
        neg = neg_items[neg_ptr[u] : neg_ptr[u + 1]]
        if len(pos) == 0 or len(neg) == 0:
            continue
        users.append(u)
        p, q = len(pos), len(neg)
        uvec = U[u]
        ipos, ineg = I[pos], I[neg]
        a = ipos @ uvec
        b = ineg @ uvec
        margins = a[:, None] - b[None, :]
        loss = float(np.mean(softplus(-margins)))
        if lam:
            loss += lam * (
                uvec @ uvec
                + float(np.mean(np.einsum("ij,ij->i", ipos, ipos)))
                + float(np.mean(np.einsum("ij,ij->i", ineg, ineg)))
            )
        losses.append(loss)
        s = sigmoid(-margins)
        rs = s.sum(axis=1)
        cs = s.sum(axis=0)
        inv = 1.0 / (p * q)
        grad_U[u] = -inv * (rs @ ipos - cs @ ineg) + 2.0 * lam * uvec
        np.add.at(grad_I, pos, -inv * rs[:, None] * uvec + (2.0 * lam / p) * ipos)
        np.add.at(grad_I, neg, inv * cs[:, None] * uvec + (2.0 * lam / q) * ineg)
    if not users:
        raise DataError("no user has both positive and negative items in this split")
    scale = 1.0 / len(users)
    grad_U *= scale
    grad_I *= scale
    return float(np.mean(losses)), grad_U, grad_I


def subsample_pair_loss(params: ModelParams, csr, lam: float, max_pairs: int, rng_seed: int, include_reg: bool = True) -> float:
    """Estimate the user-averaged pair loss on a fixed seeded pair subsample.

    ``csr`` is the (pos_ptr, pos_items, neg_ptr, neg_items) tuple of the
    split being traced.  Each eligible user contributes a per-user mean
    over a quota of its pairs, proportional to its pair count; when the
    total pair count is at most ``max_pairs`` every pair is used and the
    result equals dataset_loss exactly.
    """
    pos_ptr, pos_items, neg_ptr, neg_items = csr
    U, I = params.user_embeddings, params.item_embeddings
    n_users = len(pos_ptr) - 1
    pos_counts = np.diff(pos_ptr)
    neg_counts = np.diff(neg_ptr)
    eligible = np.nonzero((pos_counts > 0) & (neg_counts > 0))[0]
    if len(eligible) == 0:
        raise DataError("no eligible user to sample pairs from")
    pair_counts = pos_counts[eligible] * neg_counts[eligible]
    total_pairs = int(pair_counts.sum())
    rng = np.random.default_rng(rng_seed)
    total = 0.0
    for u, n_pairs in zip(eligible, pair_counts):
        pos = pos_items[pos_ptr[u] : pos_ptr[u + 1]]
        neg = neg_items[neg_ptr[u] : neg_ptr[u + 1]]
        if total_pairs <= max_pairs:
            total += _user_pair_loss(U, I, int(u), pos, neg, lam, include_reg)
            continue
        quota = max(1, int(max_pairs * n_pairs / total_pairs))
        quota = min(quota, int(n_pairs))
        flat = rng.choice(int(n_pairs), size=quota, replace=False)
        pi = pos[flat // len(neg)]
        ni = neg[flat % len(neg)]
        uvec = U[int(u)]
        margins = (I[pi] - I[ni]) @ uvec
        loss = float(np.mean(softplus(-margins)))
        if include_reg and lam:
            loss += lam * (
                uvec @ uvec
                + float(np.mean(np.einsum("ij,ij->i", I[pi], I[pi])))
                + float(np.mean(np.einsum("ij,ij->i", I[ni], I[ni])))
            )
        total += loss
    return total / len(eligible)
