"""Numba-compiled implementations of the hot kernels.

Same contracts as :mod:`reachsyn.kernels.numpy_impl`; this is the default
path.  All parallel loops write to disjoint output slots and perform no
cross-thread reductions, so results are identical at any thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

BACKEND = "numba"

_BETA_EPS = 1e-12       # continued-fraction convergence threshold
_BETA_MAX_ITER = 200
_TINY = 1e-300


@njit(cache=True)
def _betacf(a, b, x):
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            break
    return h


@njit(cache=True)
def _betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    bt = math.exp(lbeta + a * math.log(x) + b * math.log(1.0 - x))
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


@njit(cache=True)
def _bisect_betainc_scalar(a, b, target):
    lo = 0.0
    hi = 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _betainc(a, b, mid) > target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


@njit(cache=True, parallel=True)
def cp_lower_many(k, N, beta):
    out = np.zeros(k.shape[0], dtype=np.float64)
    for i in prange(k.shape[0]):
        ki = k[i]
        if ki > 0:
            out[i] = _bisect_betainc_scalar(float(ki), float(N - ki + 1), 0.5 * beta)
    return out


@njit(cache=True, parallel=True)
def cp_upper_many(k, N, beta):
    out = np.ones(k.shape[0], dtype=np.float64)
    for i in prange(k.shape[0]):
        ki = k[i]
        if ki < N:
            out[i] = _bisect_betainc_scalar(float(ki + 1), float(N - ki), 1.0 - 0.5 * beta)
    return out


@njit(cache=True, parallel=True)
def lambda_minmax(xs, r1, r2, jplus, vox_centers, vox_delta):
    m, n = xs.shape
    nvox = vox_centers.shape[0]
    vox_min = np.full(nvox, np.inf)
    vox_arg = np.full(nvox, -1, dtype=np.int64)
    for t in prange(nvox):
        best = np.inf
        best_idx = -1
        for s in range(m):
            tnorm = 0.0
            for p in range(n):
                acc = 0.0
                for q in range(n):
                    acc += jplus[p, q] * (abs(xs[s, q] - vox_centers[t, q]) + vox_delta[q])
                if acc > tnorm:
                    tnorm = acc
            lam = 1.0 + (tnorm - r1[s]) / (r2[s] - r1[s])
            if lam < best:
                best = lam
                best_idx = s
        vox_min[t] = best
        vox_arg[t] = best_idx
    return vox_min, vox_arg


@njit(cache=True, parallel=True)
def count_target_boxes(t_lo, t_hi, noise, dom_lo, dom_hi, cell_width, cells_per_dim, cap):
    P, n = t_lo.shape
    N = noise.shape[0]
    v = 1
    for q in range(n):
        v *= cells_per_dim[q]
    strides = np.ones(n, dtype=np.int64)
    for q in range(n - 2, -1, -1):
        strides[q] = strides[q + 1] * cells_per_dim[q + 1]

    succ = np.full((P, cap), -1, dtype=np.int64)
    ncheck = np.zeros((P, cap), dtype=np.int64)
    nhat = np.zeros((P, cap), dtype=np.int64)
    nnz = np.zeros(P, dtype=np.int64)

    for p in prange(P):
        hat_d = np.zeros(v, dtype=np.int64)
        chk_d = np.zeros(v, dtype=np.int64)
        hat_star = 0
        chk_star = 0
        cmin = np.empty(n, dtype=np.int64)
        cmax = np.empty(n, dtype=np.int64)
        pos = np.empty(n, dtype=np.int64)

        for s in range(N):
            not_inside = False
            fully_out = False
            contained = True
            overlap = True
            cont_id = 0
            for q in range(n):
                a = t_lo[p, q] + noise[s, q]
                b = t_hi[p, q] + noise[s, q]
                if a < dom_lo[q] or b > dom_hi[q]:
                    not_inside = True
                    contained = False
                if b <= dom_lo[q] or a >= dom_hi[q]:
                    fully_out = True
                # smallest cell index with interior overlap
                klo = int(math.floor((a - dom_lo[q]) / cell_width[q]))
                if a >= dom_lo[q] + (klo + 1) * cell_width[q]:
                    klo += 1
                elif a < dom_lo[q] + klo * cell_width[q]:
                    klo -= 1
                # largest cell index with interior overlap
                khi = int(math.ceil((b - dom_lo[q]) / cell_width[q])) - 1
                if dom_lo[q] + khi * cell_width[q] >= b:
                    khi -= 1
                elif dom_lo[q] + (khi + 1) * cell_width[q] < b:
                    khi += 1
                if contained:
                    kc = min(max(klo, 0), cells_per_dim[q] - 1)
                    if kc == cells_per_dim[q] - 1:
                        cell_hi = dom_hi[q]
                    else:
                        cell_hi = dom_lo[q] + (kc + 1) * cell_width[q]
                    if b > cell_hi:
                        contained = False
                    cont_id += kc * strides[q]
                cmin[q] = max(klo, 0)
                cmax[q] = min(khi, cells_per_dim[q] - 1)
                if khi < 0 or klo > cells_per_dim[q] - 1 or cmax[q] < cmin[q]:
                    overlap = False
            if not_inside:
                hat_star += 1
            if fully_out:
                chk_star += 1
            if contained:
                chk_d[cont_id] += 1
            if overlap:
                for q in range(n):
                    pos[q] = cmin[q]
                while True:
                    cid = 0
                    for q in range(n):
                        cid += pos[q] * strides[q]
                    hat_d[cid] += 1
                    q = n - 1
                    while q >= 0:
                        pos[q] += 1
                        if pos[q] <= cmax[q]:
                            break
                        pos[q] = cmin[q]
                        q -= 1
                    if q < 0:
                        break

        k = 0
        for cid in range(v):
            if hat_d[cid] > 0:
                if k < cap:
                    succ[p, k] = cid
                    nhat[p, k] = hat_d[cid]
                    ncheck[p, k] = chk_d[cid]
                k += 1
        if hat_star > 0 or chk_star > 0:
            if k < cap:
                succ[p, k] = v
                nhat[p, k] = hat_star
                ncheck[p, k] = chk_star
            k += 1
        nnz[p] = k if k <= cap else -k  # negative signals cap overflow
    return succ, ncheck, nhat, nnz


@njit(cache=True)
def _inner_min_row(values, succ, plo, phi, start, end):
    m = end - start
    vals = np.empty(m, dtype=np.float64)
    order = np.empty(m, dtype=np.int64)
    for t in range(m):
        vals[t] = values[succ[start + t]]
        order[t] = t
    # insertion sort by successor value (rows are short)
    for t in range(1, m):
        key = order[t]
        kv = vals[key]
        u = t - 1
        while u >= 0 and vals[order[u]] > kv:
            order[u + 1] = order[u]
            u -= 1
        order[u + 1] = key
    total_lo = 0.0
    for t in range(m):
        total_lo += plo[start + t]
    budget = 1.0 - total_lo
    if budget < 0.0:
        budget = 0.0
    exp_val = 0.0
    for t in range(m):
        idx = start + order[t]
        give = phi[idx] - plo[idx]
        if give > budget:
            give = budget
        budget -= give
        exp_val += (plo[idx] + give) * vals[order[t]]
    return exp_val


@njit(cache=True, parallel=True)
def _vi_sweep(values, terminal_mask, terminal_values, state_row_start,
              row_ptr, succ, plo, phi, new_values, choice):
    S = values.shape[0]
    for s in prange(S):
        if terminal_mask[s]:
            new_values[s] = terminal_values[s]
            choice[s] = -1
            continue
        r0 = state_row_start[s]
        r1 = state_row_start[s + 1]
        if r0 == r1:
            new_values[s] = 0.0
            choice[s] = -1
            continue
        best = -1.0
        best_row = -1
        for r in range(r0, r1):
            e = _inner_min_row(values, succ, plo, phi, row_ptr[r], row_ptr[r + 1])
            if e > best:
                best = e
                best_row = r
        new_values[s] = best
        choice[s] = best_row


@njit(cache=True)
def vi_solve_inf(terminal_mask, terminal_values, state_row_start, row_state,
                 row_ptr, succ, plo, phi, tol, max_iter):
    S = terminal_mask.shape[0]
    values = np.zeros(S, dtype=np.float64)
    for s in range(S):
        if terminal_mask[s]:
            values[s] = terminal_values[s]
    new_values = np.empty(S, dtype=np.float64)
    best_rows = np.full(S, -1, dtype=np.int64)
    choice = np.full(S, -1, dtype=np.int64)
    residual = 0.0
    iters = 0
    for it in range(1, max_iter + 1):
        iters = it
        _vi_sweep(values, terminal_mask, terminal_values, state_row_start,
                  row_ptr, succ, plo, phi, new_values, best_rows)
        residual = 0.0
        for s in range(S):
            d = abs(new_values[s] - values[s])
            if d > residual:
                residual = d
            # Keep the action that first certified the value: at a fixed
            # point, unproductive rows (e.g. value-1 self-loops) tie with
            # productive ones, so greedy re-extraction would be unsound.
            if best_rows[s] >= 0 and (it == 1 or new_values[s] > values[s]):
                choice[s] = best_rows[s]
            values[s] = new_values[s]
        if residual < tol:
            break
    return values, choice, residual, iters


@njit(cache=True)
def vi_solve_finite(terminal_mask, terminal_values, state_row_start, row_state,
                    row_ptr, succ, plo, phi, horizon):
    S = terminal_mask.shape[0]
    values = np.zeros(S, dtype=np.float64)
    for s in range(S):
        if terminal_mask[s]:
            values[s] = terminal_values[s]
    choices = np.full((horizon, S), -1, dtype=np.int64)
    new_values = np.empty(S, dtype=np.float64)
    choice = np.full(S, -1, dtype=np.int64)
    for t in range(horizon):
        _vi_sweep(values, terminal_mask, terminal_values, state_row_start,
                  row_ptr, succ, plo, phi, new_values, choice)
        for s in range(S):
            values[s] = new_values[s]
            choices[t, s] = choice[s]
    return values, choices
