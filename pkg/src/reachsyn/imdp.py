"""Finite interval MDP: assembly, specification mapping, robust VI, export.

States are the ``v`` partition cells, one absorbing state (id ``v``) for
everything outside the domain and one terminal sink (id ``v + 1``), so an
abstraction over a ``40 x 40`` grid has 1602 states.  Actions are target
cells; action ``j`` is enabled in state ``i`` exactly when the action table
produced a scaling factor ``lam_{i->j} <= Lambda``.  Row intervals come from
Clopper-Pearson bounds on the noise-shift counts of the scaled target box.

The optimal robust scheduler maximizes, over actions, the worst-case
expectation over all distributions consistent with the row intervals; the
inner minimization is the classic sort-and-saturate assignment (raise the
lowest-value successors to their upper bounds until the mass budget is
spent).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Box, Partition, scale_region
from .intervals import ProbabilityInterval, beta_per_transition, beta_worst_case, count_many
from .kernels import cp_lower_many, cp_upper_many, vi_solve_finite, vi_solve_inf
from .reachability import ActionTable


@dataclass(frozen=True)
class ReachAvoidSpec:
    """Abstract reach-avoid task: goal ids, unsafe ids, horizon (int or inf)."""

    goal_ids: np.ndarray
    unsafe_ids: np.ndarray
    horizon: float  # math.inf or a positive integer

    def __post_init__(self):
        if np.intersect1d(self.goal_ids, self.unsafe_ids).size:
            raise ValueError("goal and unsafe state sets must be disjoint")


def map_spec(partition: Partition, goal: Sequence[Box], unsafe: Sequence[Box],
             unsafe_outside_domain: bool = True,
             horizon: float = math.inf) -> ReachAvoidSpec:
    """Map continuous goal/unsafe sets onto the partition.

    Goal cells underapproximate (cell fully inside some goal box); unsafe
    cells overapproximate (interior overlap with some unsafe box).  A cell
    qualifying as both is classified unsafe, which is the conservative
    resolution.  The absorbing state joins the unsafe set when leaving the
    domain is declared unsafe.

    Comparisons carry a relative tolerance of 1e-9 cell widths: cell bounds
    are derived from ``lower + k * width`` and accumulate rounding, so without
    the slack a goal box that exactly tiles (e.g. ``[-0.4, 0.4]`` over cells
    of width 0.4) loses half its cells to one-ulp overshoots.  Slivers below
    the tolerance carry probability on the order of the tolerance itself
    under an absolutely continuous noise distribution.
    """
    v = partition.num_cells
    idx = np.stack([np.asarray(partition.multi_index(i)) for i in range(v)]) if v else \
        np.empty((0, partition.dim), dtype=np.int64)
    cell_lo = partition.domain.lower + idx * partition.cell_width
    cell_hi = partition.domain.lower + (idx + 1) * partition.cell_width
    at_end = idx + 1 == partition.cells_per_dim
    cell_hi = np.where(at_end, partition.domain.upper, cell_hi)
    eps = 1e-9 * partition.cell_width

    goal_mask = np.zeros(v, dtype=bool)
    for g in goal:
        goal_mask |= (np.all(cell_lo >= g.lower - eps, axis=1)
                      & np.all(cell_hi <= g.upper + eps, axis=1))
    unsafe_mask = np.zeros(v, dtype=bool)
    for u in unsafe:
        unsafe_mask |= (np.all(cell_lo < u.upper - eps, axis=1)
                        & np.all(cell_hi > u.lower + eps, axis=1))
    goal_mask &= ~unsafe_mask

    unsafe_ids = np.flatnonzero(unsafe_mask).astype(np.int64)
    if unsafe_outside_domain:
        unsafe_ids = np.append(unsafe_ids, partition.absorbing_id)
    return ReachAvoidSpec(goal_ids=np.flatnonzero(goal_mask).astype(np.int64),
                          unsafe_ids=unsafe_ids, horizon=horizon)


@dataclass
class IntervalImdp:
    """CSR-style IMDP: rows sorted by (state, action), successors ascending."""

    num_cells: int
    initial: int
    row_state: np.ndarray    # (R,)
    row_action: np.ndarray   # (R,) target cell of each row
    row_ptr: np.ndarray      # (R+1,) into the successor arrays
    succ: np.ndarray         # (nnz,)
    p_lo: np.ndarray         # (nnz,)
    p_hi: np.ndarray         # (nnz,)
    beta: float
    noise_samples: int
    state_row_start: np.ndarray = field(default=None)  # (S+1,) derived

    def __post_init__(self):
        if self.state_row_start is None:
            self.state_row_start = np.searchsorted(
                self.row_state, np.arange(self.num_states + 1)).astype(np.int64)

    @property
    def absorbing_id(self) -> int:
        return self.num_cells

    @property
    def sink_id(self) -> int:
        return self.num_cells + 1

    @property
    def num_states(self) -> int:
        return self.num_cells + 2

    @property
    def num_actions(self) -> int:
        return int(self.row_state.shape[0])

    @property
    def num_transitions(self) -> int:
        return int(self.succ.shape[0])

    def actions_of(self, s: int) -> np.ndarray:
        a, b = self.state_row_start[s], self.state_row_start[s + 1]
        return self.row_action[a:b]

    def row(self, s: int, a: int) -> List[Tuple[int, ProbabilityInterval]]:
        lo_r, hi_r = self.state_row_start[s], self.state_row_start[s + 1]
        for r in range(lo_r, hi_r):
            if self.row_action[r] == a:
                sl = slice(self.row_ptr[r], self.row_ptr[r + 1])
                return [
                    (int(t), ProbabilityInterval(float(lo), float(hi)))
                    for t, lo, hi in zip(self.succ[sl], self.p_lo[sl], self.p_hi[sl])
                ]
        raise KeyError(f"action {a} not enabled in state {s}")

    def check_feasible(self, tol: float = 1e-9) -> None:
        """Every row must admit at least one distribution within its intervals."""
        for r in range(self.num_actions):
            sl = slice(self.row_ptr[r], self.row_ptr[r + 1])
            lo_sum = float(self.p_lo[sl].sum())
            hi_sum = float(self.p_hi[sl].sum())
            if lo_sum > 1.0 + tol or hi_sum < 1.0 - tol:
                raise RuntimeError(
                    f"infeasible row (state {self.row_state[r]}, action "
                    f"{self.row_action[r]}): sum lo={lo_sum}, sum hi={hi_sum}")

    def save(self, path, spec: Optional[ReachAvoidSpec] = None) -> None:
        extra = {}
        if spec is not None:
            extra = {
                "goal_ids": spec.goal_ids,
                "unsafe_ids": spec.unsafe_ids,
                "horizon": np.array(
                    [-1.0 if math.isinf(spec.horizon) else float(spec.horizon)]),
            }
        np.savez_compressed(
            path, num_cells=self.num_cells, initial=self.initial,
            row_state=self.row_state, row_action=self.row_action,
            row_ptr=self.row_ptr, succ=self.succ, p_lo=self.p_lo, p_hi=self.p_hi,
            beta=np.array([self.beta]), noise_samples=self.noise_samples, **extra)

    @classmethod
    def load(cls, path):
        z = np.load(path)
        imdp = cls(
            num_cells=int(z["num_cells"]), initial=int(z["initial"]),
            row_state=z["row_state"], row_action=z["row_action"],
            row_ptr=z["row_ptr"], succ=z["succ"], p_lo=z["p_lo"], p_hi=z["p_hi"],
            beta=float(z["beta"][0]), noise_samples=int(z["noise_samples"]))
        spec = None
        if "goal_ids" in z:
            h = float(z["horizon"][0])
            spec = ReachAvoidSpec(goal_ids=z["goal_ids"], unsafe_ids=z["unsafe_ids"],
                                  horizon=math.inf if h < 0 else h)
        return imdp, spec


def assemble_imdp(partition: Partition, table: ActionTable, noise: np.ndarray,
                  overall_risk: float, initial_state, beta_mode: str = "transitions",
                  Lambda: Optional[float] = None):
    """Count noise shifts for every enabled pair and bound the probabilities.

    Two passes: the counting pass determines the realized transition count
    ``T`` (successor entries with a nonzero intersection count), then the
    per-transition budget ``beta = overall_risk / T`` feeds the
    Clopper-Pearson bounds.  ``beta_mode="worst_case"`` uses the a-priori
    ``|S|^2 |Act|`` budget instead.  Returns ``(imdp, stats)``.
    """
    pairs = list(table.enabled_pairs(Lambda))
    if not pairs:
        raise RuntimeError("no enabled actions; increase Lambda or sample density")
    t_lo = np.empty((len(pairs), partition.dim))
    t_hi = np.empty_like(t_lo)
    for r, (i, j) in enumerate(pairs):
        target = scale_region(partition.cell(j), max(table.lam[(i, j)], 0.0))
        t_lo[r] = target.lower
        t_hi[r] = target.upper

    succ, ncheck, nhat, nnz = count_many(t_lo, t_hi, noise, partition)
    total = int(nnz.sum())
    if beta_mode == "transitions":
        beta = beta_per_transition(total, overall_risk)
    elif beta_mode == "worst_case":
        beta = beta_worst_case(partition.num_cells + 2, partition.num_cells, overall_risk)
    else:
        raise ValueError(f"unknown beta mode {beta_mode!r}")

    row_ptr = np.zeros(len(pairs) + 1, dtype=np.int64)
    np.cumsum(nnz, out=row_ptr[1:])
    flat_succ = np.empty(total, dtype=np.int64)
    flat_chk = np.empty(total, dtype=np.int64)
    flat_hat = np.empty(total, dtype=np.int64)
    for r in range(len(pairs)):
        k = int(nnz[r])
        sl = slice(row_ptr[r], row_ptr[r] + k)
        flat_succ[sl] = succ[r, :k]
        flat_chk[sl] = ncheck[r, :k]
        flat_hat[sl] = nhat[r, :k]

    N = noise.shape[0]
    p_lo = cp_lower_many(flat_chk, N, beta)
    p_hi = cp_upper_many(flat_hat, N, beta)

    imdp = IntervalImdp(
        num_cells=partition.num_cells,
        initial=partition.region_of(np.asarray(initial_state, dtype=np.float64)),
        row_state=np.array([i for i, _ in pairs], dtype=np.int64),
        row_action=np.array([j for _, j in pairs], dtype=np.int64),
        row_ptr=row_ptr, succ=flat_succ, p_lo=p_lo, p_hi=p_hi,
        beta=beta, noise_samples=N)
    imdp.check_feasible()
    stats = {
        "states": imdp.num_states,
        "actions": imdp.num_actions,
        "transitions": imdp.num_transitions,
        "beta": beta,
        "noise_samples": N,
    }
    return imdp, stats


def inner_min_expectation(row, values) -> float:
    """Worst-case expectation over all distributions inside the row intervals.

    ``row`` is a sequence of ``(successor, ProbabilityInterval)``.  Reference
    implementation of the sort-and-saturate assignment used by the VI
    kernels; kept independent for testing.
    """
    succ = np.array([s for s, _ in row], dtype=np.int64)
    lo = np.array([p.lower for _, p in row])
    hi = np.array([p.upper for _, p in row])
    if lo.sum() > 1.0 + 1e-9 or hi.sum() < 1.0 - 1e-9:
        raise RuntimeError("infeasible row")
    vals = np.asarray(values, dtype=np.float64)[succ]
    order = np.argsort(vals, kind="stable")
    budget = max(1.0 - lo.sum(), 0.0)
    mu = lo.copy()
    for t in order:
        give = min(hi[t] - lo[t], budget)
        mu[t] += give
        budget -= give
        if budget <= 0.0:
            break
    return float(mu @ vals)


@dataclass
class Scheduler:
    """Greedy robust scheduler plus the value vector it certifies.

    ``choice[s]`` is the chosen target cell (-1 where no action is enabled or
    the state is terminal).  For finite horizons ``per_step[t]`` holds the
    choice map with ``t + 1`` steps remaining.
    """

    values: np.ndarray
    choice: np.ndarray
    residual: float
    iterations: int
    converged: bool
    horizon: float
    per_step: Optional[np.ndarray] = None  # (h, S) choices by remaining steps

    def action_at(self, s: int, k: int = 0) -> int:
        """Scheduled target cell for state ``s`` at time index ``k``."""
        if math.isinf(self.horizon):
            return int(self.choice[s])
        remaining = int(self.horizon) - k
        if remaining <= 0:
            return -1
        return int(self.per_step[remaining - 1][s])

    def save(self, path) -> None:
        extra = {} if self.per_step is None else {"per_step": self.per_step}
        np.savez_compressed(
            path, values=self.values, choice=self.choice,
            residual=np.array([self.residual]), iterations=self.iterations,
            converged=int(self.converged),
            horizon=np.array([-1.0 if math.isinf(self.horizon) else self.horizon]),
            **extra)

    @classmethod
    def load(cls, path):
        z = np.load(path)
        h = float(z["horizon"][0])
        return cls(values=z["values"], choice=z["choice"],
                   residual=float(z["residual"][0]), iterations=int(z["iterations"]),
                   converged=bool(int(z["converged"])),
                   horizon=math.inf if h < 0 else h,
                   per_step=z["per_step"] if "per_step" in z else None)


def robust_value_iteration(imdp: IntervalImdp, spec: ReachAvoidSpec,
                           tol: float = 1e-6, max_iter: int = 10000) -> Scheduler:
    """Solve for the optimal robust scheduler.

    Goal states are pinned at value 1, unsafe states at 0; states without
    enabled actions (including absorbing and sink) get value 0.  Iterates are
    monotone nondecreasing from that seed, so even a truncated run yields
    sound lower bounds; non-convergence only triggers a warning.
    """
    S = imdp.num_states
    terminal_mask = np.zeros(S, dtype=np.uint8)
    terminal_values = np.zeros(S, dtype=np.float64)
    terminal_mask[spec.unsafe_ids] = 1
    terminal_mask[spec.goal_ids] = 1
    terminal_values[spec.goal_ids] = 1.0
    terminal_mask[[imdp.absorbing_id, imdp.sink_id]] = 1

    args = (terminal_mask, terminal_values, imdp.state_row_start, imdp.row_state,
            imdp.row_ptr, imdp.succ, imdp.p_lo, imdp.p_hi)
    if math.isinf(spec.horizon):
        values, choice_rows, residual, iters = vi_solve_inf(*args, tol, max_iter)
        converged = residual < tol
        if not converged:
            warnings.warn(
                f"value iteration stopped at {iters} sweeps with residual "
                f"{residual:.3e} (> tol {tol}); values remain sound lower bounds")
        choice = np.where(choice_rows >= 0, imdp.row_action[choice_rows], -1)
        return Scheduler(values=values, choice=choice.astype(np.int64),
                         residual=residual, iterations=iters, converged=converged,
                         horizon=math.inf)
    h = int(spec.horizon)
    values, choices_rows = vi_solve_finite(*args, h)
    per_step = np.where(choices_rows >= 0, imdp.row_action[choices_rows], -1)
    return Scheduler(values=values, choice=per_step[h - 1].astype(np.int64),
                     residual=0.0, iterations=h, converged=True, horizon=float(h),
                     per_step=per_step.astype(np.int64))


def export_prism(imdp: IntervalImdp, spec: ReachAvoidSpec, path_stem) -> Tuple[str, str]:
    """Write the explicit-transitions model next to a labels file.

    ``<stem>.tra``: header ``<states> <rows> <transition lines>``, then one
    line per transition ``s a s' lower upper`` (17 significant digits, space
    separated, rows sorted by state/action, successors ascending).  Absorbing
    and sink states carry probability-one self-loops so the exported model is
    deadlock free.  ``<stem>.lab`` marks init/goal/unsafe/absorbing/sink in
    PRISM label syntax.  Output is byte-deterministic for a fixed model.
    """
    tra_path = str(path_stem) + ".tra"
    lab_path = str(path_stem) + ".lab"
    self_loops = [imdp.absorbing_id, imdp.sink_id]
    lines = imdp.num_transitions + len(self_loops)
    rows = imdp.num_actions + len(self_loops)
    with open(tra_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{imdp.num_states} {rows} {lines}\n")
        for r in range(imdp.num_actions):
            s = imdp.row_state[r]
            a = imdp.row_action[r]
            for t in range(imdp.row_ptr[r], imdp.row_ptr[r + 1]):
                fh.write(f"{s} {a} {imdp.succ[t]} "
                         f"{imdp.p_lo[t]:.17g} {imdp.p_hi[t]:.17g}\n")
        for s in self_loops:
            fh.write(f"{s} {s} {s} 1 1\n")

    labels = {0: "init", 1: "goal", 2: "unsafe", 3: "absorbing", 4: "sink"}
    state_labels: Dict[int, list] = {}
    state_labels.setdefault(imdp.initial, []).append(0)
    for s in spec.goal_ids:
        state_labels.setdefault(int(s), []).append(1)
    for s in spec.unsafe_ids:
        state_labels.setdefault(int(s), []).append(2)
    state_labels.setdefault(imdp.absorbing_id, []).append(3)
    state_labels.setdefault(imdp.sink_id, []).append(4)
    with open(lab_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(" ".join(f'{k}="{v}"' for k, v in labels.items()) + "\n")
        for s in sorted(state_labels):
            fh.write(f"{s}: " + " ".join(str(k) for k in sorted(state_labels[s])) + "\n")
    return tra_path, lab_path
