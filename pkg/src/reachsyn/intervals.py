"""PAC transition-probability intervals from noise samples.

For a transition ``(s_i, a_j, s')`` the events "noise-shifted target box is
fully contained in the successor region" and "... intersects the successor
region" under- and over-approximate the true transition probability.  Their
counts over one shared set of ``N`` noise samples are binomial draws, and the
exact (Clopper-Pearson) binomial confidence bounds at level ``beta/2`` per
side give an interval that contains the true probability with probability at
least ``1 - beta``.  A union bound over all ``T`` transitions then yields an
overall confidence budget: ``beta = overall_risk / T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .geometry import Box, BoxRelation, Partition, box_relation
from .kernels import count_target_boxes, cp_lower_many, cp_upper_many


@dataclass(frozen=True)
class ProbabilityInterval:
    lower: float
    upper: float

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper <= 1.0):
            raise ValueError(f"invalid interval [{self.lower}, {self.upper}]")


@dataclass
class TransitionCounts:
    """Containment/intersection counts per successor for one target box.

    ``check[s']`` counts noise samples whose shifted box lies inside the
    (closed) successor region; ``hat[s']`` counts interior intersection.  The
    absorbing successor uses "not fully inside the domain" for hat and "fully
    outside the domain" for check.
    """

    N: int
    check: Dict[int, int]
    hat: Dict[int, int]

    def successors(self):
        return sorted(self.hat)


def count_outcomes(noise: np.ndarray, target: Box, partition: Partition) -> TransitionCounts:
    """Classify every noise-shifted copy of ``target`` against the partition.

    Reference implementation on top of the batch kernel; the pipeline calls
    the kernel directly for many targets at once.
    """
    succ, ncheck, nhat, nnz = count_many(
        target.lower[None, :], target.upper[None, :], noise, partition)
    k = int(nnz[0])
    hat = {int(succ[0, t]): int(nhat[0, t]) for t in range(k) if nhat[0, t] > 0}
    check = {int(succ[0, t]): int(ncheck[0, t]) for t in range(k) if ncheck[0, t] > 0}
    return TransitionCounts(N=noise.shape[0], check=check, hat=hat)


def count_many(t_lo: np.ndarray, t_hi: np.ndarray, noise: np.ndarray,
               partition: Partition):
    """Batch counting for ``P`` target boxes; see the kernel for output layout."""
    n = partition.dim
    span = noise.max(axis=0) - noise.min(axis=0) if noise.shape[0] else np.zeros(n)
    widths = (t_hi - t_lo).max(axis=0) if t_lo.shape[0] else np.zeros(n)
    per_dim = np.ceil((widths + span) / partition.cell_width).astype(np.int64) + 2
    per_dim = np.minimum(per_dim, partition.cells_per_dim)
    cap = int(np.prod(per_dim)) + 1  # +1 for the absorbing entry
    succ, ncheck, nhat, nnz = count_target_boxes(
        np.ascontiguousarray(t_lo, dtype=np.float64),
        np.ascontiguousarray(t_hi, dtype=np.float64),
        np.ascontiguousarray(noise, dtype=np.float64),
        partition.domain.lower, partition.domain.upper,
        partition.cell_width, np.asarray(partition.cells_per_dim, dtype=np.int64),
        cap,
    )
    if np.any(nnz < 0):
        raise RuntimeError("successor cap exceeded in counting kernel")
    return succ, ncheck, nhat, nnz


def count_outcomes_bruteforce(noise: np.ndarray, target: Box,
                              partition: Partition) -> TransitionCounts:
    """Direct per-cell :func:`box_relation` sweep; independent oracle for the
    index-arithmetic kernel (quadratic, test-size inputs only)."""
    hat: Dict[int, int] = {}
    check: Dict[int, int] = {}
    dom = partition.domain
    for w in noise:
        shifted = Box(target.lower + w, target.upper + w)
        for i in range(partition.num_cells):
            rel = box_relation(partition.cell(i), shifted)
            if rel is BoxRelation.CONTAINED:
                check[i] = check.get(i, 0) + 1
                hat[i] = hat.get(i, 0) + 1
            elif rel is BoxRelation.INTERSECTING:
                hat[i] = hat.get(i, 0) + 1
        a = partition.absorbing_id
        if np.any(shifted.lower < dom.lower) or np.any(shifted.upper > dom.upper):
            hat[a] = hat.get(a, 0) + 1
        if np.any(shifted.upper <= dom.lower) or np.any(shifted.lower >= dom.upper):
            check[a] = check.get(a, 0) + 1
    return TransitionCounts(N=noise.shape[0], check=check, hat=hat)


def clopper_pearson(k: int, N: int, beta: float):
    """Exact two-sided binomial confidence bounds at level ``beta``.

    The lower bound solves ``beta/2 = sum_{i=k}^N C(N,i) p^i (1-p)^(N-i)``
    (0 when ``k == 0``); the upper solves the mirrored head sum (1 when
    ``k == N``).  Bisection on the regularized incomplete beta form of the
    binomial tails, absolute tolerance below 1e-10.
    """
    if not 0 <= k <= N:
        raise ValueError(f"need 0 <= k <= N, got k={k}, N={N}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"need 0 < beta < 1, got {beta}")
    arr = np.array([k], dtype=np.int64)
    lo = float(cp_lower_many(arr, N, beta)[0])
    hi = float(cp_upper_many(arr, N, beta)[0])
    return lo, hi


def build_transition_intervals(counts: TransitionCounts,
                               beta: float) -> Dict[int, ProbabilityInterval]:
    """Per-successor probability intervals for one transition row.

    Successors never intersected (``hat == 0``) are structurally zero and
    omitted.  The resulting row always satisfies ``sum lower <= 1 <= sum
    upper`` when the absorbing successor is included; a violation indicates a
    counting bug and raises.
    """
    out: Dict[int, ProbabilityInterval] = {}
    for s in counts.successors():
        nhat = counts.hat.get(s, 0)
        if nhat == 0:
            continue
        ncheck = counts.check.get(s, 0)
        lo, _ = clopper_pearson(ncheck, counts.N, beta)
        _, hi = clopper_pearson(nhat, counts.N, beta)
        out[s] = ProbabilityInterval(lo, hi)
    lo_sum = sum(p.lower for p in out.values())
    hi_sum = sum(p.upper for p in out.values())
    if lo_sum > 1.0 + 1e-9 or hi_sum < 1.0 - 1e-9:
        raise RuntimeError(
            f"infeasible interval row: sum lower={lo_sum}, sum upper={hi_sum}")
    return out


def beta_per_transition(total_transitions: int, overall_risk: float) -> float:
    """Per-transition error budget from the union bound over ``T`` transitions."""
    if total_transitions < 1:
        raise ValueError("need at least one transition")
    if not 0.0 < overall_risk < 1.0:
        raise ValueError("overall risk must lie in (0, 1)")
    return overall_risk / total_transitions


def beta_worst_case(num_states: int, num_actions: int, overall_risk: float) -> float:
    """Conservative budget using the a-priori transition count ``|S|^2 |Act|``."""
    return beta_per_transition(num_states * num_states * num_actions, overall_risk)
