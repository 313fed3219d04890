# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sequential update kernels.

Hot inner loops of the trainers: per-block pair-averaged SGD / momentum
updates and single-triplet SGD steps.  Mirrors ``_kernels_py`` exactly in
update semantics and write order; see that module for the reference
formulation.
"""

from libc.math cimport exp, isfinite
from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "c"

ctypedef cnp.int64_t i64


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline void _acc_row(i64* uids, double* cu, double* cw, Py_ssize_t* n_uniq,
                          i64 item, double c_user, double c_self) noexcept nogil:
    # Sum coefficients of duplicate item ids into one row entry.
    cdef Py_ssize_t r
    for r in range(n_uniq[0]):
        if uids[r] == item:
            cu[r] += c_user
            cw[r] += c_self
            return
    uids[n_uniq[0]] = item
    cu[n_uniq[0]] = c_user
    cw[n_uniq[0]] = c_self
    n_uniq[0] += 1


cdef Py_ssize_t _block_grad(double[:, ::1] U, double[:, ::1] I, Py_ssize_t u,
                            i64[::1] neg_items, i64[::1] pos_items,
                            Py_ssize_t n0, Py_ssize_t n1, Py_ssize_t p0, Py_ssize_t p1,
                            double lam,
                            double* a, double* b, double* rs, double* cs,
                            double* gu, i64* uids, double* cu, double* cw) noexcept nogil:
    """Fill gu (user gradient) and the per-distinct-row coefficients.

    Every touched item row x has gradient cu_x * U[u] + cw_x * I[x]; the
    number of distinct rows is returned.
    """
    cdef Py_ssize_t k = U.shape[1]
    cdef Py_ssize_t p = p1 - p0
    cdef Py_ssize_t q = n1 - n0
    cdef double inv = 1.0 / (p * q)
    cdef Py_ssize_t i, j, d
    cdef i64 item
    cdef double acc, s
    cdef Py_ssize_t n_uniq = 0

    for i in range(p):
        item = pos_items[p0 + i]
        acc = 0.0
        for d in range(k):
            acc += I[item, d] * U[u, d]
        a[i] = acc
        rs[i] = 0.0
    for j in range(q):
        item = neg_items[n0 + j]
        acc = 0.0
        for d in range(k):
            acc += I[item, d] * U[u, d]
        b[j] = acc
        cs[j] = 0.0
    for i in range(p):
        for j in range(q):
            s = _sigmoid(b[j] - a[i])
            rs[i] += s
            cs[j] += s
    for d in range(k):
        gu[d] = 0.0
    for i in range(p):
        item = pos_items[p0 + i]
        for d in range(k):
            gu[d] += rs[i] * I[item, d]
    for j in range(q):
        item = neg_items[n0 + j]
        for d in range(k):
            gu[d] -= cs[j] * I[item, d]
    for d in range(k):
        gu[d] = -inv * gu[d] + 2.0 * lam * U[u, d]
    for i in range(p):
        _acc_row(uids, cu, cw, &n_uniq, pos_items[p0 + i], -inv * rs[i], 2.0 * lam / p)
    for j in range(q):
        _acc_row(uids, cu, cw, &n_uniq, neg_items[n0 + j], inv * cs[j], 2.0 * lam / q)
    return n_uniq


cdef struct _Scratch:
    double* a
    double* b
    double* rs
    double* cs
    double* gu
    i64* uids
    double* cu
    double* cw


cdef int _scratch_alloc(_Scratch* s, i64[::1] neg_ptr, i64[::1] pos_ptr,
                        Py_ssize_t lo, Py_ssize_t hi, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t t, max_p = 1, max_q = 1
    for t in range(lo, hi):
        if pos_ptr[t + 1] - pos_ptr[t] > max_p:
            max_p = pos_ptr[t + 1] - pos_ptr[t]
        if neg_ptr[t + 1] - neg_ptr[t] > max_q:
            max_q = neg_ptr[t + 1] - neg_ptr[t]
    s.a = <double*> malloc(max_p * sizeof(double))
    s.b = <double*> malloc(max_q * sizeof(double))
    s.rs = <double*> malloc(max_p * sizeof(double))
    s.cs = <double*> malloc(max_q * sizeof(double))
    s.gu = <double*> malloc(k * sizeof(double))
    s.uids = <i64*> malloc((max_p + max_q) * sizeof(i64))
    s.cu = <double*> malloc((max_p + max_q) * sizeof(double))
    s.cw = <double*> malloc((max_p + max_q) * sizeof(double))
    if (s.a == NULL or s.b == NULL or s.rs == NULL or s.cs == NULL
            or s.gu == NULL or s.uids == NULL or s.cu == NULL or s.cw == NULL):
        return 1
    return 0


cdef void _scratch_free(_Scratch* s) noexcept nogil:
    free(s.a)
    free(s.b)
    free(s.rs)
    free(s.cs)
    free(s.gu)
    free(s.uids)
    free(s.cu)
    free(s.cw)


def user_block_pass_sgd(double[:, ::1] U, double[:, ::1] I, Py_ssize_t u,
                        i64[::1] neg_items, i64[::1] pos_items,
                        i64[::1] neg_ptr, i64[::1] pos_ptr,
                        Py_ssize_t lo, Py_ssize_t hi, double eta, double lam):
    """Apply one plain-SGD step per block t in [lo, hi) for user u.

    Returns -1, or the global index of the first block whose update wrote
    a non-finite value.
    """
    cdef Py_ssize_t k = U.shape[1]
    cdef _Scratch s
    cdef Py_ssize_t t, r, d, n_uniq
    cdef i64 item
    cdef int bad
    cdef Py_ssize_t bad_at = -1
    if hi <= lo:
        return -1
    if _scratch_alloc(&s, neg_ptr, pos_ptr, lo, hi, k):
        raise MemoryError("block scratch allocation failed")
    with nogil:
        for t in range(lo, hi):
            n_uniq = _block_grad(U, I, u, neg_items, pos_items,
                                 neg_ptr[t], neg_ptr[t + 1], pos_ptr[t], pos_ptr[t + 1],
                                 lam, s.a, s.b, s.rs, s.cs, s.gu, s.uids, s.cu, s.cw)
            bad = 0
            # Item rows first: their gradient uses the pre-update user row.
            for r in range(n_uniq):
                item = s.uids[r]
                for d in range(k):
                    I[item, d] -= eta * (s.cu[r] * U[u, d] + s.cw[r] * I[item, d])
                    if not isfinite(I[item, d]):
                        bad = 1
            for d in range(k):
                U[u, d] -= eta * s.gu[d]
                if not isfinite(U[u, d]):
                    bad = 1
            if bad:
                bad_at = t
                break
    _scratch_free(&s)
    return bad_at


def user_block_pass_momentum(double[:, ::1] U, double[:, ::1] I,
                             double[:, ::1] VU, double[:, ::1] VI, Py_ssize_t u,
                             i64[::1] neg_items, i64[::1] pos_items,
                             i64[::1] neg_ptr, i64[::1] pos_ptr,
                             Py_ssize_t lo, Py_ssize_t hi,
                             double alpha, double mu, double lam):
    """Heavy-ball variant: velocity rows updated sparsely, then applied."""
    cdef Py_ssize_t k = U.shape[1]
    cdef _Scratch s
    cdef Py_ssize_t t, r, d, n_uniq
    cdef i64 item
    cdef double g, v
    cdef int bad
    cdef Py_ssize_t bad_at = -1
    if hi <= lo:
        return -1
    if _scratch_alloc(&s, neg_ptr, pos_ptr, lo, hi, k):
        raise MemoryError("block scratch allocation failed")
    with nogil:
        for t in range(lo, hi):
            n_uniq = _block_grad(U, I, u, neg_items, pos_items,
                                 neg_ptr[t], neg_ptr[t + 1], pos_ptr[t], pos_ptr[t + 1],
                                 lam, s.a, s.b, s.rs, s.cs, s.gu, s.uids, s.cu, s.cw)
            bad = 0
            for r in range(n_uniq):
                item = s.uids[r]
                for d in range(k):
                    g = s.cu[r] * U[u, d] + s.cw[r] * I[item, d]
                    v = mu * VI[item, d] + (1.0 - mu) * g
                    VI[item, d] = v
                    I[item, d] -= alpha * v
                    if not isfinite(I[item, d]):
                        bad = 1
            for d in range(k):
                v = mu * VU[u, d] + (1.0 - mu) * s.gu[d]
                VU[u, d] = v
                U[u, d] -= alpha * v
                if not isfinite(U[u, d]):
                    bad = 1
            if bad:
                bad_at = t
                break
    _scratch_free(&s)
    return bad_at


def bpr_sgd_steps(double[:, ::1] U, double[:, ::1] I,
                  i64[::1] users, i64[::1] pos, i64[::1] neg,
                  double eta, double lam):
    """Sequential single-triplet SGD steps over pre-sampled triplets.

    Returns -1, or the index of the first step that wrote a non-finite
    value.
    """
    cdef Py_ssize_t k = U.shape[1]
    cdef Py_ssize_t n = users.shape[0]
    cdef Py_ssize_t step, d
    cdef i64 u, i, j
    cdef double score, sgm, ud, ip, ineg
    cdef double* gu = <double*> malloc(3 * k * sizeof(double))
    cdef double* gp
    cdef double* gn
    cdef int bad
    cdef Py_ssize_t bad_at = -1
    if gu == NULL:
        raise MemoryError("triplet scratch allocation failed")
    gp = gu + k
    gn = gu + 2 * k
    with nogil:
        for step in range(n):
            u = users[step]
            i = pos[step]
            j = neg[step]
            score = 0.0
            for d in range(k):
                score += U[u, d] * (I[i, d] - I[j, d])
            sgm = _sigmoid(-score)
            for d in range(k):
                ud = U[u, d]
                ip = I[i, d]
                ineg = I[j, d]
                gu[d] = -sgm * (ip - ineg) + 2.0 * lam * ud
                gp[d] = -sgm * ud + 2.0 * lam * ip
                gn[d] = sgm * ud + 2.0 * lam * ineg
            for d in range(k):
                I[i, d] -= eta * gp[d]
            for d in range(k):
                I[j, d] -= eta * gn[d]
            for d in range(k):
                U[u, d] -= eta * gu[d]
            bad = 0
            for d in range(k):
                if not (isfinite(U[u, d]) and isfinite(I[i, d]) and isfinite(I[j, d])):
                    bad = 1
            if bad:
                bad_at = step
                break
    free(gu)
    return bad_at
