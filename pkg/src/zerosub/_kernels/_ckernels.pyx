# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pure``; same signatures and semantics."""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, M_PI, exp, lgamma, log, log1p

cnp.import_array()


cdef void _slot_stats(long long nk, const double[:] s1, const double[:] s2,
                      const double[:] m0, double kappa0, double a0,
                      const double[:] b0, double[:] loc, double[:] inv,
                      double* log_const, double* coef) noexcept nogil:
    cdef Py_ssize_t d, D = m0.shape[0]
    cdef double kn = kappa0 + nk
    cdef double an = a0 + 0.5 * nk
    cdef double nu = 2.0 * an
    cdef double mean, scatter, bn, sc2, acc = 0.0
    for d in range(D):
        loc[d] = (kappa0 * m0[d] + s1[d]) / kn
        if nk > 0:
            mean = s1[d] / nk
            scatter = s2[d] - s1[d] * mean
            if scatter < 0.0:
                scatter = 0.0
            bn = b0[d] + 0.5 * scatter + kappa0 * nk * (mean - m0[d]) * (mean - m0[d]) / (2.0 * kn)
        else:
            bn = b0[d]
        sc2 = bn * (kn + 1.0) / (an * kn)
        inv[d] = 1.0 / (nu * sc2)
        acc += log(nu * M_PI * sc2)
    log_const[0] = D * (lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu)) - 0.5 * acc
    coef[0] = 0.5 * (nu + 1.0)


def gibbs_sweep(const double[:, ::1] X, long long[::1] z, long long[::1] n,
                double[:, ::1] S1, double[:, ::1] S2, const long long[::1] order,
                const double[::1] u, const double[::1] m0, double kappa0, double a0,
                const double[::1] b0, double alpha, Py_ssize_t kmax):
    cdef Py_ssize_t cap = S1.shape[0], D = S1.shape[1], N = order.shape[0]
    cdef double[:, ::1] loc = np.zeros((cap, D))
    cdef double[:, ::1] inv = np.zeros((cap, D))
    cdef double[::1] lconst = np.zeros(cap)
    cdef double[::1] coef = np.zeros(cap)
    cdef double[::1] lp = np.zeros(cap + 1)
    cdef long long[::1] cand = np.zeros(cap + 1, dtype=np.int64)
    cdef double[::1] p_loc = np.zeros(D)
    cdef double[::1] p_inv = np.zeros(D)
    cdef double[::1] zeros = np.zeros(D)
    cdef double p_const, p_coef, log_alpha = log(alpha)
    cdef Py_ssize_t idx, i, k, j, d, na
    cdef double x, q, mx, total, target, acc

    with nogil:
        for k in range(kmax):
            if n[k] > 0:
                _slot_stats(n[k], S1[k], S2[k], m0, kappa0, a0, b0, loc[k], inv[k],
                            &lconst[k], &coef[k])
        _slot_stats(0, zeros, zeros, m0, kappa0, a0, b0, p_loc, p_inv, &p_const, &p_coef)

        for idx in range(N):
            i = order[idx]
            k = z[i]
            n[k] -= 1
            for d in range(D):
                x = X[i, d]
                S1[k, d] -= x
                S2[k, d] -= x * x
            if n[k] > 0:
                _slot_stats(n[k], S1[k], S2[k], m0, kappa0, a0, b0, loc[k], inv[k],
                            &lconst[k], &coef[k])

            na = 0
            mx = -INFINITY
            for k in range(kmax):
                if n[k] <= 0:
                    continue
                q = 0.0
                for d in range(D):
                    x = X[i, d] - loc[k, d]
                    q += log1p(x * x * inv[k, d])
                lp[na] = log(<double>n[k]) + lconst[k] - coef[k] * q
                cand[na] = k
                if lp[na] > mx:
                    mx = lp[na]
                na += 1
            q = 0.0
            for d in range(D):
                x = X[i, d] - p_loc[d]
                q += log1p(x * x * p_inv[d])
            lp[na] = log_alpha + p_const - p_coef * q
            if lp[na] > mx:
                mx = lp[na]

            total = 0.0
            for j in range(na + 1):
                total += exp(lp[j] - mx)
                lp[j] = total
            target = u[idx] * total
            j = 0
            while j < na and not (lp[j] > target):
                j += 1
            if j >= na:
                k = 0
                while k < kmax and n[k] > 0:
                    k += 1
                if k == kmax:
                    kmax += 1
            else:
                k = cand[j]
            z[i] = k
            n[k] += 1
            for d in range(D):
                x = X[i, d]
                S1[k, d] += x
                S2[k, d] += x * x
            _slot_stats(n[k], S1[k], S2[k], m0, kappa0, a0, b0, loc[k], inv[k],
                        &lconst[k], &coef[k])
    return kmax


def dtw_accumulate(const double[:, ::1] cost):
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1], i, j
    cdef double[:, ::1] acc = np.empty((n, m))
    cdef long long[:, ::1] ln = np.empty((n, m), dtype=np.int64)
    cdef double best_a, a
    cdef long long best_l, l
    with nogil:
        for i in range(n):
            for j in range(m):
                if i == 0 and j == 0:
                    acc[0, 0] = cost[0, 0]
                    ln[0, 0] = 1
                    continue
                best_a = INFINITY
                best_l = 0
                if i > 0 and j > 0:
                    best_a = acc[i - 1, j - 1]
                    best_l = ln[i - 1, j - 1]
                if i > 0:
                    a = acc[i - 1, j]
                    l = ln[i - 1, j]
                    if a < best_a or (a == best_a and l < best_l):
                        best_a = a
                        best_l = l
                if j > 0:
                    a = acc[i, j - 1]
                    l = ln[i, j - 1]
                    if a < best_a or (a == best_a and l < best_l):
                        best_a = a
                        best_l = l
                acc[i, j] = best_a + cost[i, j]
                ln[i, j] = best_l + 1
    return acc[n - 1, m - 1], ln[n - 1, m - 1]


def viterbi_chain(const double[:, ::1] emit, const double[::1] log_stay,
                  const double[::1] log_adv):
    cdef Py_ssize_t T = emit.shape[0], L = emit.shape[1], t, j
    cdef double[::1] prev = np.full(L, -INFINITY)
    cdef double[::1] cur = np.empty(L)
    cdef cnp.int8_t[:, ::1] back = np.zeros((T, L), dtype=np.int8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pos_arr = np.empty(T, dtype=np.int64)
    cdef long long[::1] pos = pos_arr
    cdef double stay, adv
    with nogil:
        prev[0] = emit[0, 0]
        for t in range(1, T):
            for j in range(L):
                stay = prev[j] + log_stay[j]
                if j > 0:
                    adv = prev[j - 1] + log_adv[j - 1]
                else:
                    adv = -INFINITY
                if adv >= stay:
                    back[t, j] = 1
                    cur[j] = adv + emit[t, j]
                else:
                    cur[j] = stay + emit[t, j]
            for j in range(L):
                prev[j] = cur[j]
        j = L - 1
        t = T - 1
        while t >= 0:
            pos[t] = j
            if t > 0 and back[t, j]:
                j -= 1
            t -= 1
    return float(prev[L - 1]), pos_arr
