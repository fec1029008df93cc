# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_kernels_py``.

Each node's outgoing messages depend only on the previous iteration's
arrays and are written to disjoint edge rows, so the per-node loops run
under ``prange`` with results independent of the thread count.
"""

import numpy as np

from cython.parallel cimport parallel, prange
from libc.math cimport INFINITY, exp, fabs, log
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc

BACKEND = "cython"


cdef double _node_update(
    const int64_t[::1] eidx, Py_ssize_t lo, Py_ssize_t hi, Py_ssize_t node,
    const int64_t[::1] r0, const double[:, :, ::1] W,
    const double[:, ::1] msg_in, const double[:, ::1] msg_old,
    double[:, ::1] msg_out, const double[:, ::1] prior, double damping,
    double[:, ::1] logf, double* S, int* Z, double* buf,
) noexcept nogil:
    # logf[e, a] caches log sum_b W[r_e, a, b] msg_in[e, b] (-inf for a zero factor)
    cdef Py_ssize_t ga = W.shape[1]
    cdef Py_ssize_t gb = W.shape[2]
    cdef Py_ssize_t k, e, a, b
    cdef int r, zc
    cdef double acc, mx, tot, v, d, lf, dmax = 0.0

    for a in range(ga):
        Z[a] = 0
        if prior[node, a] > 0.0:
            S[a] = log(prior[node, a])
        else:
            S[a] = 0.0
            Z[a] = hi - lo + 1  # never cancelled by the leave-one-out step
    for k in range(lo, hi):
        e = eidx[k]
        r = <int>r0[e]
        for a in range(ga):
            acc = 0.0
            for b in range(gb):
                acc = acc + W[r, a, b] * msg_in[e, b]
            if acc > 0.0:
                lf = log(acc)
                S[a] = S[a] + lf
            else:
                lf = -INFINITY
                Z[a] = Z[a] + 1
            logf[e, a] = lf

    for k in range(lo, hi):
        e = eidx[k]
        mx = -INFINITY
        for a in range(ga):
            lf = logf[e, a]
            if lf == -INFINITY:
                zc = Z[a] - 1
                v = S[a]
            else:
                zc = Z[a]
                v = S[a] - lf
            if zc > 0:
                v = -INFINITY
            buf[a] = v
            if v > mx:
                mx = v
        if mx == -INFINITY:
            return -1.0
        tot = 0.0
        for a in range(ga):
            buf[a] = exp(buf[a] - mx)
            tot = tot + buf[a]
        for a in range(ga):
            buf[a] = buf[a] / tot
        if damping > 0.0:
            tot = 0.0
            for a in range(ga):
                buf[a] = (1.0 - damping) * buf[a] + damping * msg_old[e, a]
                tot = tot + buf[a]
            for a in range(ga):
                buf[a] = buf[a] / tot
        for a in range(ga):
            d = fabs(buf[a] - msg_old[e, a])
            if d > dmax:
                dmax = d
            msg_out[e, a] = buf[a]
    return dmax


def update_messages(users, movies, r0, user_ptr, movie_ptr, movie_order,
                    W_user, W_movie, x, y, y0, x0, double damping, int num_threads=1):
    """One synchronous flooding step; returns (x_new, y_new, delta)."""
    cdef const int64_t[::1] up = np.ascontiguousarray(user_ptr, dtype=np.int64)
    cdef const int64_t[::1] mp = np.ascontiguousarray(movie_ptr, dtype=np.int64)
    cdef const int64_t[::1] mo = np.ascontiguousarray(movie_order, dtype=np.int64)
    cdef const int64_t[::1] rr = np.ascontiguousarray(r0, dtype=np.int64)
    cdef Py_ssize_t E = rr.shape[0]
    cdef const int64_t[::1] ident = np.arange(E, dtype=np.int64)
    cdef const double[:, :, ::1] Wu = np.ascontiguousarray(W_user, dtype=np.float64)
    cdef const double[:, :, ::1] Wm = np.ascontiguousarray(W_movie, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] y0v = np.ascontiguousarray(y0, dtype=np.float64)
    cdef const double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    x_new = np.empty((E, xv.shape[1]), dtype=np.float64)
    y_new = np.empty((E, yv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] xn = x_new
    cdef double[:, ::1] yn = y_new
    cdef double[:, ::1] lfu = np.empty((E, yv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] lfm = np.empty((E, xv.shape[1]), dtype=np.float64)
    cdef Py_ssize_t N = up.shape[0] - 1
    cdef Py_ssize_t M = mp.shape[0] - 1
    ud_arr = np.zeros(N, dtype=np.float64)
    md_arr = np.zeros(M, dtype=np.float64)
    cdef double[::1] ud = ud_arr
    cdef double[::1] md = md_arr
    cdef Py_ssize_t gmax = max(Wu.shape[1], Wm.shape[1])
    cdef Py_ssize_t n, m
    cdef double* S
    cdef int* Z
    cdef double* buf
    if num_threads < 1:
        num_threads = 1

    with nogil, parallel(num_threads=num_threads):
        S = <double*>malloc(gmax * sizeof(double))
        Z = <int*>malloc(gmax * sizeof(int))
        buf = <double*>malloc(gmax * sizeof(double))
        for n in prange(N, schedule="static"):
            ud[n] = _node_update(ident, up[n], up[n + 1], n, rr, Wu, xv, yv, yn, y0v,
                                 damping, lfu, S, Z, buf)
        for m in prange(M, schedule="static"):
            md[m] = _node_update(mo, mp[m], mp[m + 1], m, rr, Wm, yv, xv, xn, x0v,
                                 damping, lfm, S, Z, buf)
        free(S)
        free(Z)
        free(buf)

    if (N and ud_arr.min() < 0.0) or (M and md_arr.min() < 0.0):
        raise FloatingPointError("a message underflowed to all zeros")
    delta = 0.0
    if E:
        delta = max(float(ud_arr.max()) if N else 0.0, float(md_arr.max()) if M else 0.0)
    return x_new, y_new, delta


def masked_sq_dist(ent_ptr, eidx, coords, ratings, critics):
    """Sum over each entity's observed coordinates of (critic - rating)^2."""
    cdef const int64_t[::1] ptr = np.ascontiguousarray(ent_ptr, dtype=np.int64)
    cdef const int64_t[::1] ei = np.ascontiguousarray(eidx, dtype=np.int64)
    cdef const int64_t[::1] co = np.ascontiguousarray(coords, dtype=np.int64)
    cdef const double[::1] rt = np.ascontiguousarray(ratings, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(critics, dtype=np.float64)
    cdef Py_ssize_t n_ent = ptr.shape[0] - 1
    cdef Py_ssize_t K = c.shape[0]
    out_arr = np.zeros((n_ent, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, k, j, e
    cdef double acc, d
    with nogil:
        for n in range(n_ent):
            for k in range(K):
                acc = 0.0
                for j in range(ptr[n], ptr[n + 1]):
                    e = ei[j]
                    d = c[k, co[e]] - rt[e]
                    acc = acc + d * d
                out[n, k] = acc
    return out_arr


def centroid_sums(coord_ptr, cidx, ents, ratings, memberships, Py_ssize_t n_coords):
    """Membership-weighted rating sums and weights per (critic, coordinate)."""
    cdef const int64_t[::1] ptr = np.ascontiguousarray(coord_ptr, dtype=np.int64)
    cdef const int64_t[::1] ci = np.ascontiguousarray(cidx, dtype=np.int64)
    cdef const int64_t[::1] en = np.ascontiguousarray(ents, dtype=np.int64)
    cdef const double[::1] rt = np.ascontiguousarray(ratings, dtype=np.float64)
    cdef const double[:, ::1] pi = np.ascontiguousarray(memberships, dtype=np.float64)
    cdef Py_ssize_t K = pi.shape[1]
    num_arr = np.zeros((K, n_coords), dtype=np.float64)
    den_arr = np.zeros((K, n_coords), dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef double[:, ::1] den = den_arr
    cdef Py_ssize_t c, k, j, e
    cdef double p
    with nogil:
        for c in range(n_coords):
            for j in range(ptr[c], ptr[c + 1]):
                e = ci[j]
                for k in range(K):
                    p = pi[en[e], k]
                    num[k, c] = num[k, c] + p * rt[e]
                    den[k, c] = den[k, c] + p
    return num_arr, den_arr
