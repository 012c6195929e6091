"""Pure-Python/numpy implementations of the hot loops.

These mirror ``_ckernels.pyx`` operation for operation so both backends
consume the same pre-drawn random numbers and make the same decisions up to
floating-point rounding in the transcendental functions.
"""
import math

import numpy as np
from scipy.special import gammaln


def _slot_stats(nk, s1, s2, m0, kappa0, a0, b0):
    """Student-t posterior predictive parameters of one cluster.

    Returns ``(loc, inv_scale, log_const, coef)`` such that the log predictive
    density of ``x`` is ``log_const - coef * sum(log1p((x - loc)**2 * inv_scale))``.
    """
    kn = kappa0 + nk
    an = a0 + 0.5 * nk
    nu = 2.0 * an
    loc = (kappa0 * m0 + s1) / kn
    if nk > 0:
        mean = s1 / nk
        scatter = np.maximum(s2 - s1 * mean, 0.0)
        bn = b0 + 0.5 * scatter + kappa0 * nk * (mean - m0) ** 2 / (2.0 * kn)
    else:
        bn = b0.copy()
    sc2 = bn * (kn + 1.0) / (an * kn)
    d = loc.shape[0]
    log_const = d * (gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu)) - 0.5 * np.sum(
        np.log(nu * math.pi * sc2)
    )
    return loc, 1.0 / (nu * sc2), log_const, 0.5 * (nu + 1.0)


def gibbs_sweep(X, z, n, S1, S2, order, u, m0, kappa0, a0, b0, alpha, kmax):
    """One collapsed Gibbs sweep over ``order``; mutates z, n, S1, S2 in place.

    Slots ``[0, kmax)`` may be occupied; a new cluster takes the lowest free
    slot. Returns the updated ``kmax``.
    """
    cap, D = S1.shape
    loc = np.zeros((cap, D))
    inv = np.zeros((cap, D))
    lconst = np.zeros(cap)
    coef = np.zeros(cap)

    def refresh(k):
        loc[k], inv[k], lconst[k], coef[k] = _slot_stats(
            n[k], S1[k], S2[k], m0, kappa0, a0, b0
        )

    for k in range(kmax):
        if n[k] > 0:
            refresh(k)
    p_loc, p_inv, p_const, p_coef = _slot_stats(0, 0.0, 0.0, m0, kappa0, a0, b0)
    log_alpha = math.log(alpha)

    for idx in range(order.shape[0]):
        i = order[idx]
        x = X[i]
        k = z[i]
        n[k] -= 1
        S1[k] -= x
        S2[k] -= x * x
        if n[k] > 0:
            refresh(k)

        active = np.flatnonzero(n[:kmax] > 0)
        lp = np.empty(active.shape[0] + 1)
        if active.shape[0]:
            q = np.log1p((x - loc[active]) ** 2 * inv[active]).sum(axis=1)
            lp[:-1] = np.log(n[active]) + lconst[active] - coef[active] * q
        lp[-1] = log_alpha + p_const - p_coef * np.log1p((x - p_loc) ** 2 * p_inv).sum()

        w = np.cumsum(np.exp(lp - lp.max()))
        j = int(np.searchsorted(w, u[idx] * w[-1], side="right"))
        if j >= active.shape[0]:
            free = np.flatnonzero(n[:kmax] == 0)
            if free.shape[0]:
                k = int(free[0])
            else:
                k = kmax
                kmax += 1
        else:
            k = int(active[j])
        z[i] = k
        n[k] += 1
        S1[k] += x
        S2[k] += x * x
        refresh(k)
    return kmax


def dtw_accumulate(cost):
    """Lexicographic (cost, length) minimum over monotone paths.

    Steps are (1,0), (0,1), (1,1); the path is anchored at both corners.
    Returns ``(total_cost, path_length)``.
    """
    n, m = cost.shape
    c = cost.tolist()
    acc = [[0.0] * m for _ in range(n)]
    ln = [[0] * m for _ in range(n)]
    for i in range(n):
        ci = c[i]
        ai = acc[i]
        li = ln[i]
        for j in range(m):
            if i == 0 and j == 0:
                ai[j] = ci[j]
                li[j] = 1
                continue
            best_a = math.inf
            best_l = 0
            if i > 0 and j > 0:
                best_a = acc[i - 1][j - 1]
                best_l = ln[i - 1][j - 1]
            if i > 0:
                a = acc[i - 1][j]
                l = ln[i - 1][j]
                if a < best_a or (a == best_a and l < best_l):
                    best_a, best_l = a, l
            if j > 0:
                a = ai[j - 1]
                l = li[j - 1]
                if a < best_a or (a == best_a and l < best_l):
                    best_a, best_l = a, l
            ai[j] = best_a + ci[j]
            li[j] = best_l + 1
    return acc[n - 1][m - 1], ln[n - 1][m - 1]


def viterbi_chain(emit, log_stay, log_adv):
    """Best monotone path through a left-to-right chain.

    ``emit[t, j]`` is the log-likelihood of frame t at chain position j.
    Ties prefer the advance at each step, which on backtrace places every
    advance as late as possible.
    Returns ``(score, positions)``.
    """
    T, L = emit.shape
    delta = np.full(L, -np.inf)
    delta[0] = emit[0, 0]
    back = np.zeros((T, L), dtype=np.int8)
    for t in range(1, T):
        stay = delta + log_stay
        adv = np.full(L, -np.inf)
        adv[1:] = delta[:-1] + log_adv[:-1]
        take = adv >= stay
        back[t] = take
        delta = np.where(take, adv, stay) + emit[t]
    pos = np.empty(T, dtype=np.int64)
    j = L - 1
    for t in range(T - 1, -1, -1):
        pos[t] = j
        if t > 0 and back[t, j]:
            j -= 1
    return float(delta[L - 1]), pos
