"""Pure-numpy fallback for the sequential update kernels.

Same call signatures and update semantics as the compiled extension in
``_ckernels.pyx``; used when the extension is unavailable or when the
``SAROS_BACKEND=python`` environment variable forces it.  Per-row results
agree with the compiled kernels to floating-point rounding (the compiled
loops and BLAS reductions may round differently in the last ulp).
"""

from __future__ import annotations

import numpy as np

from .loss import sigmoid

BACKEND_NAME = "python"


def _block_coefficients(U, I, u, neg, pos, lam):
    """Pair-averaged gradient of one block, as row coefficients.

    The gradient of every touched item row x has the form
    cu_x * U_u + cw_x * I_x; returns (grad_user, uniq_ids, cu, cw),
    with duplicate ids summed into one coefficient pair.
    """
    p, q = len(pos), len(neg)
    uvec = U[u]
    ipos = I[pos]
    ineg = I[neg]
    a = ipos @ uvec
    b = ineg @ uvec
    s = sigmoid(b[None, :] - a[:, None])  # sigma(-(a_i - b_j)), (p, q)
    rs = s.sum(axis=1)
    cs = s.sum(axis=0)
    inv = 1.0 / (p * q)
    grad_user = -inv * (rs @ ipos - cs @ ineg) + 2.0 * lam * uvec
    ids = np.concatenate([pos, neg])
    c_user = np.concatenate([-inv * rs, inv * cs])
    c_self = np.concatenate([np.full(p, 2.0 * lam / p), np.full(q, 2.0 * lam / q)])
    uniq, inverse = np.unique(ids, return_inverse=True)
    cu = np.zeros(len(uniq))
    cw = np.zeros(len(uniq))
    np.add.at(cu, inverse, c_user)
    np.add.at(cw, inverse, c_self)
    return grad_user, uniq, cu, cw


def user_block_pass_sgd(U, I, u, neg_items, pos_items, neg_ptr, pos_ptr, lo, hi, eta, lam):
    """Apply one plain-SGD step per block t in [lo, hi) for user u.

    Returns -1, or the global index of the first block whose update wrote
    a non-finite value.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(lo, hi):
            neg = neg_items[neg_ptr[t] : neg_ptr[t + 1]]
            pos = pos_items[pos_ptr[t] : pos_ptr[t + 1]]
            grad_user, uniq, cu, cw = _block_coefficients(U, I, u, neg, pos, lam)
            # Item rows first: their gradient uses the pre-update user row.
            I[uniq] -= eta * (cu[:, None] * U[u] + cw[:, None] * I[uniq])
            U[u] -= eta * grad_user
            if not (np.isfinite(I[uniq]).all() and np.isfinite(U[u]).all()):
                return t
    return -1


def user_block_pass_momentum(U, I, VU, VI, u, neg_items, pos_items, neg_ptr, pos_ptr, lo, hi, alpha, mu, lam):
    """Heavy-ball variant: velocity rows updated sparsely, then applied."""
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(lo, hi):
            neg = neg_items[neg_ptr[t] : neg_ptr[t + 1]]
            pos = pos_items[pos_ptr[t] : pos_ptr[t + 1]]
            grad_user, uniq, cu, cw = _block_coefficients(U, I, u, neg, pos, lam)
            grad_items = cu[:, None] * U[u] + cw[:, None] * I[uniq]
            VI[uniq] = mu * VI[uniq] + (1.0 - mu) * grad_items
            I[uniq] -= alpha * VI[uniq]
            VU[u] = mu * VU[u] + (1.0 - mu) * grad_user
            U[u] -= alpha * VU[u]
            if not (np.isfinite(I[uniq]).all() and np.isfinite(U[u]).all()):
                return t
    return -1


def bpr_sgd_steps(U, I, users, pos, neg, eta, lam):
    """Sequential single-triplet SGD steps over pre-sampled triplets.

    Returns -1, or the index of the first step that wrote a non-finite
    value.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(len(users)):
            u = users[step]
            i = pos[step]
            j = neg[step]
            uvec = U[u]
            diff = I[i] - I[j]
            s = sigmoid(-(uvec @ diff))
            grad_user = -s * diff + 2.0 * lam * uvec
            grad_pos = -s * uvec + 2.0 * lam * I[i]
            grad_neg = s * uvec + 2.0 * lam * I[j]
            I[i] -= eta * grad_pos
            I[j] -= eta * grad_neg
            U[u] -= eta * grad_user
            if not (np.isfinite(U[u]).all() and np.isfinite(I[i]).all() and np.isfinite(I[j]).all()):
                return step
    return -1
