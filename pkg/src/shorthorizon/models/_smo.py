"""Compiled SMO solver for the epsilon-insensitive SVR dual.

The dual is written over 2n variables ``a = [alpha, alpha*]`` with signs
``s = [+1]*n + [-1]*n``, linear term ``p = [eps - y, eps + y]`` and
``Q_tu = s_t s_u K(t mod n, u mod n)`` subject to ``s'a = 0`` and
``0 <= a <= C``. Working pairs are chosen by maximal violation with
second-order gain.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TAU = 1e-12


@njit(cache=True)
def smo_svr(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    L = 2 * n
    a = np.zeros(L)
    s = np.ones(L)
    G = np.empty(L)
    for t in range(n):
        s[n + t] = -1.0
        G[t] = eps - y[t]
        G[n + t] = eps + y[t]

    it = 0
    converged = False
    while it < max_iter:
        # i: maximal -s*G over the "up" set
        gmax = -np.inf
        i = -1
        for t in range(L):
            if s[t] > 0:
                if a[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if a[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        gmax2 = -np.inf
        j = -1
        best = np.inf
        ki = i % n if i >= 0 else 0
        for t in range(L):
            kt = t % n
            if s[t] > 0:
                if a[t] > 0:
                    diff = gmax + G[t]
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    if diff > 0 and i >= 0:
                        quad = K[ki, ki] + K[kt, kt] - 2.0 * K[ki, kt]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= best:
                            best = obj
                            j = t
            else:
                if a[t] < C:
                    diff = gmax - G[t]
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    if diff > 0 and i >= 0:
                        quad = K[ki, ki] + K[kt, kt] - 2.0 * K[ki, kt]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= best:
                            best = obj
                            j = t
        if gmax + gmax2 < tol or j < 0:
            converged = True
            break
        it += 1

        kj = j % n
        Qii = K[ki, ki]
        Qjj = K[kj, kj]
        Qij = s[i] * s[j] * K[ki, kj]
        old_i = a[i]
        old_j = a[j]
        if s[i] != s[j]:
            quad = Qii + Qjj + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = Qii + Qjj - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total

        di = a[i] - old_i
        dj = a[j] - old_j
        for t in range(L):
            kt = t % n
            G[t] += s[t] * (s[i] * K[kt, ki] * di + s[j] * K[kt, kj] * dj)

    # offset: mean of s*G over free variables, else midpoint of the feasible range
    ub = np.inf
    lb = -np.inf
    n_free = 0
    total_free = 0.0
    for t in range(L):
        yg = s[t] * G[t]
        if a[t] >= C:
            if s[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0:
            if s[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            total_free += yg
    if n_free > 0:
        rho = total_free / n_free
    else:
        rho = 0.5 * (ub + lb)
    beta = a[:n] - a[n:]
    return beta, -rho, it, converged
