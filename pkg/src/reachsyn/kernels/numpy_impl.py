"""Pure-numpy implementations of the hot kernels.

Mirrors :mod:`reachsyn.kernels.numba_impl` operation for operation; selected
via ``REACHSYN_KERNELS=numpy`` or used automatically when numba is not
importable.  Vectorized enough to stay usable on mid-size problems, but the
numba path is the one meant for full-scale runs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import betainc as _betainc

BACKEND = "numpy"

_CHUNK = 4096  # sample-axis chunk bound for the (samples x voxels) broadcast


def lambda_minmax(xs, r1, r2, jplus, vox_centers, vox_delta):
    """Per-voxel minimum of the chord-interpolated scaling factor over samples.

    Arguments are the source points ``xs (m, n)`` of one (source, target)
    sample bucket, the inscribed-ball radii ``r1 = r(x', 1)`` and
    ``r2 = r(x', 2)`` of their destinations, the entrywise Jacobian bound of
    the source region, and the voxel grid.  Returns ``(vox_min, vox_argmin)``
    where ``vox_argmin`` is the index into ``xs`` of the minimizing sample
    (earliest index on ties, so results are reproducible).
    """
    m = xs.shape[0]
    nvox = vox_centers.shape[0]
    vox_min = np.full(nvox, np.inf)
    vox_arg = np.full(nvox, -1, dtype=np.int64)
    denom = r2 - r1
    for start in range(0, m, _CHUNK):
        sl = slice(start, min(start + _CHUNK, m))
        dev = np.abs(xs[sl, None, :] - vox_centers[None, :, :]) + vox_delta
        tnorm = np.einsum("pq,svq->svp", jplus, dev).max(axis=-1)
        lam = 1.0 + (tnorm - r1[sl, None]) / denom[sl, None]
        k = np.argmin(lam, axis=0)  # first occurrence wins within the chunk
        best = lam[k, np.arange(nvox)]
        better = best < vox_min
        vox_min[better] = best[better]
        vox_arg[better] = k[better] + start
    return vox_min, vox_arg


def count_target_boxes(t_lo, t_hi, noise, dom_lo, dom_hi, cell_width, cells_per_dim, cap):
    """Classify each noise-shifted target box against every partition cell.

    For pair ``p`` and noise sample ``w`` the shifted box ``[t_lo+w, t_hi+w]``
    contributes one "hat" count to every cell whose interior it overlaps and
    one "check" count to the single cell that fully contains it (if any).
    The absorbing region (id ``v``) gets a hat count when the shifted box is
    not fully inside the domain and a check count when it is fully outside.

    Returns ``(succ, ncheck, nhat, nnz)`` with the first three shaped
    ``(P, cap)`` and ``nnz[p]`` giving the number of valid entries per pair.
    """
    P, n = t_lo.shape
    v = int(np.prod(cells_per_dim))
    succ = np.full((P, cap), -1, dtype=np.int64)
    ncheck = np.zeros((P, cap), dtype=np.int64)
    nhat = np.zeros((P, cap), dtype=np.int64)
    nnz = np.zeros(P, dtype=np.int64)
    strides = _row_major_strides(cells_per_dim)
    corners = _corner_signs(n)

    for p in range(P):
        lo = t_lo[p] + noise  # (N, n)
        hi = t_hi[p] + noise
        chk_d = np.zeros(v, dtype=np.int64)

        not_inside = np.any((lo < dom_lo) | (hi > dom_hi), axis=1)
        fully_out = np.any((hi <= dom_lo) | (lo >= dom_hi), axis=1)
        hat_star = int(np.count_nonzero(not_inside))
        chk_star = int(np.count_nonzero(fully_out))

        cmin = np.floor((lo - dom_lo) / cell_width).astype(np.int64)
        cmax = np.ceil((hi - dom_lo) / cell_width).astype(np.int64) - 1
        for q in range(n):
            cmin[:, q] += lo[:, q] >= dom_lo[q] + (cmin[:, q] + 1) * cell_width[q]
            cmin[:, q] -= lo[:, q] < dom_lo[q] + cmin[:, q] * cell_width[q]
            cmax[:, q] -= dom_lo[q] + cmax[:, q] * cell_width[q] >= hi[:, q]
            cmax[:, q] += dom_lo[q] + (cmax[:, q] + 1) * cell_width[q] < hi[:, q]
        # Containment candidate: the cell holding the lower corner (cells are
        # closed boxes for the containment convention).
        contained = ~not_inside
        kc = np.clip(cmin, 0, cells_per_dim - 1)
        for q in range(n):
            last = kc[:, q] == cells_per_dim[q] - 1
            cell_hi = np.where(last, dom_hi[q], dom_lo[q] + (kc[:, q] + 1) * cell_width[q])
            contained &= hi[:, q] <= cell_hi
        np.add.at(chk_d, (kc @ strides)[contained], 1)

        # Interior-overlap counts per cell via an n-D difference array:
        # +-1 at the 2^n corners of each index rectangle, then cumsum.
        lo_c = np.clip(cmin, 0, cells_per_dim - 1)
        hi_c = np.clip(cmax, 0, cells_per_dim - 1)
        valid = np.all((cmax >= 0) & (cmin <= cells_per_dim - 1), axis=1)
        valid &= np.all(hi_c >= lo_c, axis=1)
        diff = np.zeros(tuple(cells_per_dim + 1), dtype=np.int64)
        lo_v, hi_v = lo_c[valid], hi_c[valid]
        for bits, sign in corners:
            pos = np.where(bits, hi_v + 1, lo_v)
            np.add.at(diff, tuple(pos[:, q] for q in range(n)), sign)
        for q in range(n):
            np.cumsum(diff, axis=q, out=diff)
        hat_d = diff[tuple(slice(0, cells_per_dim[q]) for q in range(n))].ravel()

        ids = np.flatnonzero(hat_d)
        count = ids.shape[0] + (1 if (hat_star > 0 or chk_star > 0) else 0)
        if count > cap:
            raise RuntimeError(f"successor cap {cap} exceeded (pair {p}: {count})")
        succ[p, : ids.shape[0]] = ids
        nhat[p, : ids.shape[0]] = hat_d[ids]
        ncheck[p, : ids.shape[0]] = chk_d[ids]
        k = ids.shape[0]
        if hat_star > 0 or chk_star > 0:
            succ[p, k] = v
            nhat[p, k] = hat_star
            ncheck[p, k] = chk_star
            k += 1
        nnz[p] = k
    return succ, ncheck, nhat, nnz


def _row_major_strides(cells_per_dim):
    strides = np.ones(len(cells_per_dim), dtype=np.int64)
    for q in range(len(cells_per_dim) - 2, -1, -1):
        strides[q] = strides[q + 1] * cells_per_dim[q + 1]
    return strides


def _corner_signs(n):
    out = []
    for mask in range(1 << n):
        bits = np.array([(mask >> q) & 1 for q in range(n)], dtype=bool)
        out.append((bits, 1 if bits.sum() % 2 == 0 else -1))
    return out


def cp_lower_many(k, N, beta):
    """Exact one-sided binomial lower bounds at level ``beta/2``.

    Solves ``beta/2 = sum_{i=k}^{N} C(N,i) p^i (1-p)^(N-i)`` for each entry by
    bisection on the regularized incomplete beta representation
    ``I_p(k, N-k+1)`` of the tail; returns 0 where ``k == 0``.
    """
    k = np.asarray(k, dtype=np.int64)
    out = np.zeros(k.shape, dtype=np.float64)
    pos = k > 0
    if np.any(pos):
        kk = k[pos].astype(np.float64)
        a, b = kk, N - kk + 1.0
        out[pos] = _bisect_betainc(a, b, 0.5 * beta)
    return out


def cp_upper_many(k, N, beta):
    """Exact one-sided binomial upper bounds at level ``beta/2``.

    Solves ``beta/2 = sum_{i=0}^{k} C(N,i) p^i (1-p)^(N-i)``, i.e.
    ``I_p(k+1, N-k) = 1 - beta/2``; returns 1 where ``k == N``.
    """
    k = np.asarray(k, dtype=np.int64)
    out = np.ones(k.shape, dtype=np.float64)
    below = k < N
    if np.any(below):
        kk = k[below].astype(np.float64)
        a, b = kk + 1.0, N - kk
        out[below] = _bisect_betainc(a, b, 1.0 - 0.5 * beta)
    return out


def _bisect_betainc(a, b, target, iters=100, bracket_tol=1e-12):
    """Solve ``I_p(a, b) = target`` for p elementwise on [0, 1]."""
    lo = np.zeros_like(a)
    hi = np.ones_like(a)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        high = _betainc(a, b, mid) > target
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
        if np.max(hi - lo) < bracket_tol:
            break
    return 0.5 * (lo + hi)


def _pad_rows(row_ptr, succ, plo, phi):
    R = row_ptr.shape[0] - 1
    m = np.diff(row_ptr)
    width = int(m.max()) if R else 1
    succ_p = np.zeros((R, width), dtype=np.int64)
    lo_p = np.zeros((R, width), dtype=np.float64)
    hi_p = np.zeros((R, width), dtype=np.float64)
    mask = np.arange(width)[None, :] < m[:, None]
    succ_p[mask] = succ
    lo_p[mask] = plo
    hi_p[mask] = phi
    return succ_p, lo_p, hi_p, mask


def _sweep(values, succ_p, lo_p, hi_p, mask, row_state, state_row_start,
           terminal_mask, terminal_values, num_states):
    # terminal_mask arrives as uint8 from the shared kernel signature; it must
    # act as a boolean mask, never as fancy integer indices
    terminal_mask = terminal_mask.astype(bool)
    # Worst-case expectation per row: push mass onto low-value successors
    # first (padding entries carry zero capacity, so they are inert).
    vals = np.where(mask, values[succ_p], 0.0)
    order = np.argsort(vals, axis=1, kind="stable")
    vs = np.take_along_axis(vals, order, axis=1)
    los = np.take_along_axis(lo_p, order, axis=1)
    caps = np.take_along_axis(hi_p - lo_p, order, axis=1)
    budget = np.maximum(1.0 - los.sum(axis=1), 0.0)
    cum = np.cumsum(caps, axis=1) - caps
    give = np.clip(budget[:, None] - cum, 0.0, caps)
    row_val = np.sum((los + give) * vs, axis=1)

    new_values = np.where(terminal_mask, terminal_values, 0.0)
    choice = np.full(num_states, -1, dtype=np.int64)
    R = row_val.shape[0]
    if R:
        group_max = np.maximum.reduceat(
            np.concatenate([row_val, [0.0]]),
            np.minimum(state_row_start[:-1], R),
        )
        has_rows = np.diff(state_row_start) > 0
        smax = np.where(has_rows, group_max, 0.0)
        hit = row_val == smax[row_state]
        rid = np.where(hit, np.arange(R), R)
        first = np.minimum.reduceat(
            np.concatenate([rid, [R]]),
            np.minimum(state_row_start[:-1], R),
        )
        sel = has_rows & ~terminal_mask
        choice[sel] = first[sel]
        new_values[sel] = smax[sel]
    return new_values, choice


def vi_solve_inf(terminal_mask, terminal_values, state_row_start, row_state,
                 row_ptr, succ, plo, phi, tol, max_iter):
    """Infinite-horizon robust value iteration (max over actions, min over
    interval-consistent distributions); Jacobi sweeps from the terminal seed.

    Returns ``(values, choice_row, residual, iterations)`` where
    ``choice_row[s]`` is the greedy row index for state ``s`` (-1 if none).
    """
    num_states = terminal_mask.shape[0]
    succ_p, lo_p, hi_p, mask = _pad_rows(row_ptr, succ, plo, phi)
    values = np.where(terminal_mask, terminal_values, 0.0)
    residual = 0.0
    iters = 0
    choice = np.full(num_states, -1, dtype=np.int64)
    for iters in range(1, max_iter + 1):
        new_values, best_rows = _sweep(values, succ_p, lo_p, hi_p, mask, row_state,
                                       state_row_start, terminal_mask,
                                       terminal_values, num_states)
        # Keep the action that first certified the value: at a fixed point,
        # unproductive rows (e.g. value-1 self-loops) tie with productive
        # ones, so greedy re-extraction would be unsound.
        take = (best_rows >= 0) & ((new_values > values) | (iters == 1))
        choice = np.where(take, best_rows, choice)
        residual = float(np.max(np.abs(new_values - values))) if num_states else 0.0
        values = new_values
        if residual < tol:
            break
    return values, choice, residual, iters


def vi_solve_finite(terminal_mask, terminal_values, state_row_start, row_state,
                    row_ptr, succ, plo, phi, horizon):
    """Finite-horizon backward induction: exactly ``horizon`` sweeps.

    Returns ``(values, choices)`` with ``choices[t]`` the greedy row per state
    when ``t+1`` steps remain.
    """
    num_states = terminal_mask.shape[0]
    succ_p, lo_p, hi_p, mask = _pad_rows(row_ptr, succ, plo, phi)
    values = np.where(terminal_mask, terminal_values, 0.0)
    choices = np.full((horizon, num_states), -1, dtype=np.int64)
    for t in range(horizon):
        values, choices[t] = _sweep(values, succ_p, lo_p, hi_p, mask, row_state,
                                    state_row_start, terminal_mask,
                                    terminal_values, num_states)
    return values, choices
