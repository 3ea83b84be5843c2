"""Policy refinement, closed-loop simulation and PAC-bound validation.

A scheduler on the abstraction refines to a continuous policy through the
control table: at state ``x`` in cell ``i`` with scheduled target ``j``, play
the stored input of the voxel containing ``x`` (the sample that attained the
minimal scaling factor for that voxel).  By construction the nominal
successor lands in the scaled target ``R_j(lam_{i->j})``, so the abstract
value is a lower bound on the continuous reach-avoid probability; Monte
Carlo simulation checks that the data do not refute this bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Box, Partition
from .imdp import Scheduler
from .reachability import ActionTable
from .systems import DynamicsModel


class PolicyUndefinedError(RuntimeError):
    """No enabled scheduled action at the current state."""


REACHED_GOAL = "reached_goal"
HIT_UNSAFE = "hit_unsafe"
EXHAUSTED_HORIZON = "exhausted_horizon"


@dataclass
class TrajectoryRecord:
    states: np.ndarray   # (steps+1, n)
    inputs: np.ndarray   # (steps, p)
    outcome: str
    steps: int


@dataclass
class RefinedPolicy:
    """Scheduler plus control table, flattened for fast batch lookups.

    ``ctrl[i]`` holds the per-voxel inputs for cell ``i``'s scheduled action;
    ``defined[i]`` marks cells where the scheduled action exists and carries
    controls.  Only stationary (infinite-horizon) schedulers are flattened;
    finite-horizon lookups go through :meth:`input_for` with a time index.
    """

    scheduler: Scheduler
    table: ActionTable
    partition: Partition
    input_dim: int

    def __post_init__(self):
        v = self.partition.num_cells
        nvox = int(np.prod(self.table.voxels_per_dim))
        self.ctrl = np.full((v, nvox, self.input_dim), np.nan)
        self.defined = np.zeros(v, dtype=bool)
        if not math.isinf(self.scheduler.horizon):
            return
        for i in range(v):
            j = int(self.scheduler.choice[i])
            if j >= 0 and (i, j) in self.table.controls:
                self.ctrl[i] = self.table.controls[(i, j)][0]
                self.defined[i] = True

    def _voxel_ids(self, pts: np.ndarray, cell_ids: np.ndarray) -> np.ndarray:
        """Row-major voxel index of each point within its own cell."""
        part = self.partition
        vpd = np.asarray(self.table.voxels_per_dim, dtype=np.int64)
        multi = np.stack(np.unravel_index(cell_ids, tuple(part.cells_per_dim)), axis=-1)
        cell_lo = part.domain.lower + multi * part.cell_width
        width = part.cell_width / vpd
        k = np.floor((pts - cell_lo) / width).astype(np.int64)
        k += pts >= cell_lo + (k + 1) * width
        k -= pts < cell_lo + k * width
        np.clip(k, 0, vpd - 1, out=k)
        return np.ravel_multi_index(tuple(k[:, q] for q in range(part.dim)),
                                    tuple(vpd)).astype(np.int64)

    def input_for(self, x, k: int = 0) -> np.ndarray:
        """Control input at state ``x`` and time index ``k``."""
        x = np.asarray(x, dtype=np.float64)
        i = self.partition.region_of(x)
        if i >= self.partition.num_cells:
            raise PolicyUndefinedError(f"state {x} is outside the domain")
        j = self.scheduler.action_at(i, k)
        if j < 0 or (i, j) not in self.table.controls:
            raise PolicyUndefinedError(f"no enabled action scheduled in cell {i}")
        vox = self._voxel_ids(x[None, :], np.array([i], dtype=np.int64))[0]
        return self.table.controls[(i, j)][0][vox]

    def inputs_batch(self, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized stationary lookup: ``(inputs, defined_mask)``.

        Points outside the domain or in cells without a scheduled control get
        ``defined_mask == False`` and NaN inputs.
        """
        ids = self.partition.region_of_batch(pts)
        ok = ids < self.partition.num_cells
        ok[ok] = self.defined[ids[ok]]
        out = np.full((pts.shape[0], self.input_dim), np.nan)
        if np.any(ok):
            vox = self._voxel_ids(pts[ok], ids[ok])
            out[ok] = self.ctrl[ids[ok], vox]
        return out, ok


def policy_input(policy: RefinedPolicy, x, k: int = 0) -> np.ndarray:
    """Refined-policy input at state ``x``; raises when undefined."""
    return policy.input_for(x, k)


def _in_any_box(x: np.ndarray, boxes: Sequence[Box]) -> bool:
    return any(b.contains(x) for b in boxes)


def _in_any_box_batch(pts: np.ndarray, boxes: Sequence[Box]) -> np.ndarray:
    hit = np.zeros(pts.shape[0], dtype=bool)
    for b in boxes:
        hit |= b.contains_points(pts)
    return hit


def simulate(model: DynamicsModel, policy: RefinedPolicy, goal: Sequence[Box],
             unsafe: Sequence[Box], x0, max_steps: int, rng: np.random.Generator,
             unsafe_outside_domain: bool = True) -> TrajectoryRecord:
    """One closed-loop rollout ``x <- f(x, pi(x)) + w``.

    Termination checks run against the continuous goal/unsafe sets each step
    (unsafe first, so a point in both counts as a violation).  A state where
    the policy is undefined counts as unsafe, mirroring the value-0
    convention for action-less abstract states.  Horizon exhaustion is
    recorded (and counted as failure by the validator, which is conservative
    for a lower-bound check).
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    x = np.asarray(x0, dtype=np.float64).copy()
    states = [x.copy()]
    inputs: List[np.ndarray] = []
    dom = policy.partition.domain
    outcome = EXHAUSTED_HORIZON
    for k in range(max_steps + 1):
        off_domain = unsafe_outside_domain and not dom.contains(x)
        if _in_any_box(x, unsafe) or off_domain:
            outcome = HIT_UNSAFE
            break
        if _in_any_box(x, goal):
            outcome = REACHED_GOAL
            break
        if k == max_steps:
            break
        try:
            u = policy.input_for(x, k)
        except PolicyUndefinedError:
            outcome = HIT_UNSAFE
            break
        w = model.noise_sampler(rng, 1)[0]
        x = model.nominal(x[None, :], u[None, :])[0] + w
        states.append(x.copy())
        inputs.append(np.atleast_1d(u).copy())
    p = inputs[0].shape[0] if inputs else model.input_dim
    return TrajectoryRecord(states=np.asarray(states),
                            inputs=np.asarray(inputs).reshape(len(inputs), p),
                            outcome=outcome, steps=len(inputs))


def simulate_batch(model: DynamicsModel, policy: RefinedPolicy, goal: Sequence[Box],
                   unsafe: Sequence[Box], x0, runs: int, max_steps: int,
                   rng: np.random.Generator,
                   unsafe_outside_domain: bool = True) -> np.ndarray:
    """Vectorized outcomes of ``runs`` independent rollouts from ``x0``.

    All runs step in lockstep; noise is drawn for every run at every step so
    the draw sequence (hence the result) is independent of termination order.
    Finite-horizon (time-varying) policies fall back to sequential rollouts.
    """
    if not math.isinf(policy.scheduler.horizon):
        return np.array([
            simulate(model, policy, goal, unsafe, x0, max_steps, rng,
                     unsafe_outside_domain).outcome
            for _ in range(runs)
        ], dtype=object)
    x = np.tile(np.asarray(x0, dtype=np.float64), (runs, 1))
    outcome = np.full(runs, EXHAUSTED_HORIZON, dtype=object)
    active = np.ones(runs, dtype=bool)
    dom = policy.partition.domain
    for k in range(max_steps + 1):
        if np.any(active):
            pts = x[active]
            bad = _in_any_box_batch(pts, unsafe)
            if unsafe_outside_domain:
                bad |= ~dom.contains_points(pts)
            good = _in_any_box_batch(pts, goal) & ~bad
            idx = np.flatnonzero(active)
            outcome[idx[bad]] = HIT_UNSAFE
            outcome[idx[good]] = REACHED_GOAL
            active[idx[bad | good]] = False
        if k == max_steps:
            break
        w = model.noise_sampler(rng, runs)
        if np.any(active):
            u, defined = policy.inputs_batch(x[active])
            idx = np.flatnonzero(active)
            outcome[idx[~defined]] = HIT_UNSAFE
            active[idx[~defined]] = False
            live = idx[defined]
            if live.size:
                x[live] = model.nominal(x[live], u[defined]) + w[live]
    return outcome


def wilson_interval(successes: int, runs: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion (95% by default)."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if successes == 0:
        lo = 0.0
    else:
        p = successes / runs
        denom = 1.0 + z * z / runs
        center = (p + z * z / (2 * runs)) / denom
        half = z * math.sqrt(p * (1.0 - p) / runs + z * z / (4 * runs * runs)) / denom
        lo = max(center - half, 0.0)
    if successes == runs:
        hi = 1.0
    else:
        p = successes / runs
        denom = 1.0 + z * z / runs
        center = (p + z * z / (2 * runs)) / denom
        half = z * math.sqrt(p * (1.0 - p) / runs + z * z / (4 * runs * runs)) / denom
        hi = min(center + half, 1.0)
    return lo, hi


@dataclass
class ValidationResult:
    runs: int
    successes: int
    empirical: float
    wilson_lower: float
    wilson_upper: float
    lower_bound: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "successes": self.successes,
            "empirical": self.empirical,
            "wilson_lower": self.wilson_lower,
            "wilson_upper": self.wilson_upper,
            "imdp_lower_bound": self.lower_bound,
            "passed": self.passed,
        }


def monte_carlo_validate(model: DynamicsModel, policy: RefinedPolicy,
                         goal: Sequence[Box], unsafe: Sequence[Box], x0,
                         runs: int, max_steps: int, rng: np.random.Generator,
                         lower_bound: float,
                         unsafe_outside_domain: bool = True) -> ValidationResult:
    """Check that simulation does not refute the certified lower bound.

    Passes when the 95% Wilson upper bound of the empirical success frequency
    is at least the abstract value at the initial state.  Horizon-truncated
    runs count as failures, which can only make the check harder.
    """
    if runs < 100:
        raise ValueError("need at least 100 runs for a meaningful check")
    outcomes = simulate_batch(model, policy, goal, unsafe, x0, runs, max_steps,
                              rng, unsafe_outside_domain)
    successes = int(np.count_nonzero(outcomes == REACHED_GOAL))
    lo, hi = wilson_interval(successes, runs)
    return ValidationResult(runs=runs, successes=successes,
                            empirical=successes / runs, wilson_lower=lo,
                            wilson_upper=hi, lower_bound=float(lower_bound),
                            passed=bool(hi >= lower_bound))


# ---------------------------------------------------------------------------
# CSV artifacts


def _fmt(v: float) -> str:
    return repr(float(v))


def values_csv(scheduler: Scheduler, partition: Partition, path) -> None:
    """Per-cell values and chosen actions: state id, multi-index, value, action."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state"] + [f"idx_{q}" for q in range(partition.dim)]
                        + ["value", "action"])
        for i in range(partition.num_cells):
            writer.writerow([i, *partition.multi_index(i),
                             _fmt(scheduler.values[i]), int(scheduler.choice[i])])


def value_heatmap(scheduler: Scheduler, partition: Partition, path) -> None:
    """Heatmap-ready CSV for 2-D partitions (row-major cell order); higher
    dimensions fall back to the flat values dump."""
    if partition.dim != 2:
        values_csv(scheduler, partition, path)
        return
    centers = partition.cell_centers()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_x", "cell_y", "center_x", "center_y", "value", "action"])
        for i in range(partition.num_cells):
            ix, iy = partition.multi_index(i)
            writer.writerow([ix, iy, _fmt(centers[i, 0]), _fmt(centers[i, 1]),
                             _fmt(scheduler.values[i]), int(scheduler.choice[i])])


def trajectory_csv(record: TrajectoryRecord, path) -> None:
    """Per-step dump: step index, state components, input components (inputs
    are one shorter than states; the final row leaves them empty)."""
    n = record.states.shape[1]
    p = record.inputs.shape[1] if record.inputs.size else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k"] + [f"x_{q}" for q in range(n)] + [f"u_{q}" for q in range(p)])
        for k, x in enumerate(record.states):
            u = [_fmt(val) for val in record.inputs[k]] if k < record.steps else [""] * p
            writer.writerow([k] + [_fmt(val) for val in x] + u)
