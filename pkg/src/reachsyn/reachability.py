"""Data-driven underapproximation of backward reachable sets.

For a source cell ``R_i`` and target cell ``R_j``, every dataset triple
``(x, u, x')`` with ``x in R_i`` and ``x' in R_j`` certifies a neighbourhood
of ``x`` that one nominal step maps into the scaled target ``R_j(lam)``:
the set ``A_j(x) = {y in R_i : ||J+ |x - y|||_inf <= r_j(x', lam)}`` where
``r_j`` is the inscribed-ball radius at ``x'``.  Covering ``R_i`` by voxels
and requiring every voxel to fit inside some ``A_j(x)`` yields, per pair, the
scaling factor

    lam_{i->j} = max over voxels of the min over samples of lam+(voxel, sample),

where ``lam+`` inverts the chord of the concave map ``lam -> r_j(x', lam)``
through its values at ``lam = 1`` and ``lam = 2``:

    lam+ = 1 + (||J+ (|x - c| + delta)||_inf - r_j(x', 1)) / (r_j(x', 2) - r_j(x', 1)).

The action "steer into cell j" is enabled in cell i whenever
``lam_{i->j} <= Lambda``.  The per-voxel argmin sample doubles as the control
table for policy refinement: inside a voxel the refined policy plays the
input of the sample that attained the minimum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .geometry import (
    Box,
    Partition,
    Voxelization,
    inscribed_ball_radius_many,
    voxelize,
)
from .kernels import lambda_minmax
from .systems import Dataset, DynamicsModel


class DegenerateSampleError(ValueError):
    """Chord denominator ``r2 - r1`` is not positive (degenerate target box)."""


def lambda_plus(jplus, x, c_phi, delta_phi, r1: float, r2: float) -> float:
    """Chord-interpolated scaling factor for one (voxel, sample) pair.

    ``r1``/``r2`` are the inscribed-ball radii of the destination inside the
    target scaled by 1 and 2.  The result can drop below 1 (sample covers the
    voxel even in a shrunken target) or exceed 2 (extrapolation); it is exact
    for square targets and conservative wherever it lands in [1, 2].
    """
    if r2 <= r1:
        raise DegenerateSampleError(f"r2={r2} <= r1={r1}")
    jplus = np.asarray(jplus, dtype=np.float64)
    dev = np.abs(np.asarray(x, float) - np.asarray(c_phi, float)) + np.asarray(delta_phi, float)
    t = float(np.max(jplus @ dev))
    return 1.0 + (t - r1) / (r2 - r1)


def lambda_star_rect(jplus, x, c_phi, delta_phi, target: Box, x_prime) -> float:
    """Exact smallest scaling of a rectangular target covering the voxel.

    With ``t = ||J+ (|x - c| + delta)||_inf`` and ``g = |x' - d|`` this is the
    least ``lam`` for which the ball ``B_t(x')`` fits inside the scaled
    target, i.e. ``max_q (t + g_q) / h_q``.  Serves as the brute-force oracle
    for :func:`lambda_plus` on rectangles.
    """
    jplus = np.asarray(jplus, dtype=np.float64)
    dev = np.abs(np.asarray(x, float) - np.asarray(c_phi, float)) + np.asarray(delta_phi, float)
    t = float(np.max(jplus @ dev))
    g = np.abs(np.asarray(x_prime, float) - target.center)
    return float(np.max((t + g) / target.half_widths))


def membership_A(jplus, x, r: float, y, region: Optional[Box] = None) -> bool:
    """Membership in ``A_j(x)``: ``||J+ |x - y|||_inf <= r`` and ``y`` in the
    source region (skipped when ``region`` is not given)."""
    if r < 0:
        return False
    jplus = np.asarray(jplus, dtype=np.float64)
    dev = np.abs(np.asarray(x, float) - np.asarray(y, float))
    if float(np.max(jplus @ dev)) > r:
        return False
    return region.contains(y) if region is not None else True


@dataclass
class ActionTable:
    """Per state-action pair: scaling factor, enabled flag, refinement controls.

    ``lam`` holds every pair with at least one admissible sample (kept even
    when disabled, for diagnostics and Lambda sweeps); ``controls`` holds, for
    pairs with ``lam <= Lambda``, the per-voxel minimizing input and its
    global triple index.  Voxel/sample loops run in fixed deterministic order
    with ties broken by lowest triple index, so the table is reproducible.
    """

    Lambda: float
    voxels_per_dim: tuple
    num_cells: int
    lam: Dict[Tuple[int, int], float] = field(default_factory=dict)
    controls: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    degenerate_skipped: int = 0

    def is_enabled(self, i: int, j: int, Lambda: Optional[float] = None) -> bool:
        cap = self.Lambda if Lambda is None else Lambda
        lam = self.lam.get((i, j))
        return lam is not None and np.isfinite(lam) and lam <= cap

    def enabled_pairs(self, Lambda: Optional[float] = None) -> Iterator[Tuple[int, int]]:
        cap = self.Lambda if Lambda is None else Lambda
        for (i, j) in sorted(self.lam):
            lam = self.lam[(i, j)]
            if np.isfinite(lam) and lam <= cap:
                yield (i, j)

    def enabled_actions(self, i: int, Lambda: Optional[float] = None) -> list:
        cap = self.Lambda if Lambda is None else Lambda
        return [j for (ii, j), lam in sorted(self.lam.items())
                if ii == i and np.isfinite(lam) and lam <= cap]

    def num_enabled(self, Lambda: Optional[float] = None) -> int:
        cap = self.Lambda if Lambda is None else Lambda
        return sum(1 for lam in self.lam.values() if np.isfinite(lam) and lam <= cap)

    def control_for(self, i: int, j: int, voxel: int) -> Tuple[np.ndarray, int]:
        u, idx = self.controls[(i, j)]
        return u[voxel], int(idx[voxel])

    def dump_jsonl(self, path) -> None:
        """One diagnostics record per computed pair: lambda, enabled, voxel count."""
        nvox = int(np.prod(self.voxels_per_dim))
        with open(path, "w", encoding="utf-8") as fh:
            for (i, j) in sorted(self.lam):
                lam = self.lam[(i, j)]
                rec = {
                    "source": i,
                    "target": j,
                    "lambda": round(float(lam), 12) if np.isfinite(lam) else "inf",
                    "enabled": bool(np.isfinite(lam) and lam <= self.Lambda),
                    "voxels": nvox,
                }
                fh.write(json.dumps(rec) + "\n")


def _pair_lambda(xs, x_next, target: Box, jplus, vox: Voxelization):
    """Max-min scaling factor and per-voxel argmin for one sample bucket.

    ``xs``/``x_next`` are the bucket's sources and destinations in triple
    order.  Returns ``(lam, vox_arg, valid_idx, skipped)`` where ``vox_arg``
    indexes into ``valid_idx`` (positions of non-degenerate samples).
    """
    r1 = inscribed_ball_radius_many(target, 1.0, x_next)
    r2 = inscribed_ball_radius_many(target, 2.0, x_next)
    valid = r2 - r1 > 0.0
    skipped = int(np.count_nonzero(~valid))
    valid_idx = np.flatnonzero(valid)
    if valid_idx.size == 0:
        return np.inf, None, valid_idx, skipped
    vox_min, vox_arg = lambda_minmax(
        np.ascontiguousarray(xs[valid_idx]),
        np.ascontiguousarray(r1[valid_idx]),
        np.ascontiguousarray(r2[valid_idx]),
        jplus, vox.centers, vox.half_widths,
    )
    lam = float(np.max(vox_min))
    return lam, vox_arg, valid_idx, skipped


def compute_lambda_ij(dataset: Dataset, partition: Partition, vox: Voxelization,
                      i: int, j: int, jplus, Lambda: float):
    """Scaling factor and per-voxel controls for one ordered pair.

    Returns ``(lam, (u, triple_index))`` with per-voxel arrays; entries are
    ``nan``/-1 when a voxel has no admissible sample (then ``lam`` is inf and
    the action cannot be enabled).
    """
    jplus = np.asarray(jplus, dtype=np.float64)
    blk = dataset.block(i)
    sel = np.flatnonzero(blk.dest == j)
    nvox = vox.num_voxels
    u_out = np.full((nvox, dataset.model.input_dim), np.nan)
    idx_out = np.full(nvox, -1, dtype=np.int64)
    if sel.size == 0:
        return np.inf, (u_out, idx_out)
    lam, vox_arg, valid_idx, _ = _pair_lambda(blk.x[sel], blk.x_next[sel],
                                              partition.cell(j), jplus, vox)
    if vox_arg is not None:
        chosen = sel[valid_idx[vox_arg]]
        u_out[:] = blk.u[chosen]
        idx_out[:] = blk.base_index + chosen
    return lam, (u_out, idx_out)


def compute_enabled_actions(dataset: Dataset, partition: Partition,
                            model: DynamicsModel, voxels_per_dim, Lambda: float,
                            store_above: bool = False,
                            progress: Optional[callable] = None) -> ActionTable:
    """Run the full enabled-actions computation over all ordered cell pairs.

    Processes one source cell at a time: its sample block is grouped by
    destination cell (stable order, so argmin ties resolve to the lowest
    triple index) and each group feeds the max-min kernel.  Controls are
    stored for pairs with ``lam <= Lambda`` unless ``store_above`` is set.
    Complexity is ``sum_{i,j} m_i * |bucket(i, j)|`` rather than the naive
    ``v^2`` double loop, because each triple belongs to exactly one bucket.
    """
    if Lambda < 0:
        raise ValueError("Lambda must be >= 0")
    voxels_per_dim = tuple(int(c) for c in np.atleast_1d(voxels_per_dim))
    table = ActionTable(Lambda=float(Lambda), voxels_per_dim=voxels_per_dim,
                        num_cells=partition.num_cells)
    v = partition.num_cells
    for i in range(v):
        jplus = model.jacobian_bound(partition.cell(i))
        vox = voxelize(partition, i, voxels_per_dim)
        blk = dataset.block(i)
        order = np.argsort(blk.dest, kind="stable")
        dest_sorted = blk.dest[order]
        groups, starts = np.unique(dest_sorted, return_index=True)
        bounds = np.append(starts, dest_sorted.shape[0])
        for g, j in enumerate(groups):
            j = int(j)
            if j == partition.absorbing_id:
                continue
            sel = order[bounds[g]:bounds[g + 1]]
            sel.sort()  # triple order within the bucket
            lam, vox_arg, valid_idx, skipped = _pair_lambda(
                blk.x[sel], blk.x_next[sel], partition.cell(j), jplus, vox)
            table.degenerate_skipped += skipped
            if not np.isfinite(lam):
                continue
            table.lam[(i, j)] = lam
            if lam <= Lambda or store_above:
                chosen = sel[valid_idx[vox_arg]]
                table.controls[(i, j)] = (blk.u[chosen].copy(),
                                          blk.base_index + chosen)
        if progress is not None:
            progress(i + 1, v)
    return table
