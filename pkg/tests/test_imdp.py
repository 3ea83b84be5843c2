import itertools
import math

import numpy as np
import pytest

from reachsyn.geometry import Box, build_partition
from reachsyn.imdp import (
    IntervalImdp,
    ProbabilityInterval,
    ReachAvoidSpec,
    export_prism,
    inner_min_expectation,
    map_spec,
    robust_value_iteration,
)


# -- helpers ------------------------------------------------------------------

def build_imdp(num_cells, rows, initial=0, beta=0.01, noise_samples=100):
    """rows: list of (state, action, [(succ, lo, hi), ...]) sorted by (s, a)."""
    row_state = np.array([r[0] for r in rows], dtype=np.int64)
    row_action = np.array([r[1] for r in rows], dtype=np.int64)
    row_ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    succ, lo, hi = [], [], []
    for k, (_, _, entries) in enumerate(rows):
        row_ptr[k + 1] = row_ptr[k] + len(entries)
        for s, a, b in entries:
            succ.append(s)
            lo.append(a)
            hi.append(b)
    return IntervalImdp(
        num_cells=num_cells, initial=initial, row_state=row_state,
        row_action=row_action, row_ptr=row_ptr,
        succ=np.array(succ, dtype=np.int64), p_lo=np.array(lo), p_hi=np.array(hi),
        beta=beta, noise_samples=noise_samples)


def vertex_distributions(lo, hi, tol=1e-12):
    """All vertices of {mu : lo <= mu <= hi, sum(mu) = 1}."""
    m = len(lo)
    out = []
    for free in range(m):
        others = [t for t in range(m) if t != free]
        for bits in itertools.product((0, 1), repeat=m - 1):
            mu = np.empty(m)
            for t, b in zip(others, bits):
                mu[t] = hi[t] if b else lo[t]
            mu[free] = 1.0 - sum(mu[t] for t in others)
            if lo[free] - tol <= mu[free] <= hi[free] + tol:
                out.append(np.clip(mu, lo, hi))
    return out


def oracle_robust_vi(imdp, goal, unsafe, tol=1e-9, max_iter=5000, sweeps=None):
    """Independent VI with the inner minimum taken over explicitly enumerated
    vertex distributions (the polytope minimum is attained at a vertex).

    With ``sweeps`` set, runs exactly that many Jacobi sweeps; both solvers
    then follow the same value trajectory and any disagreement isolates the
    inner minimization (undiscounted models can converge arbitrarily slowly,
    so comparing at unequal sweep counts would measure truncation instead).
    """
    S = imdp.num_states
    V = np.zeros(S)
    V[list(goal)] = 1.0
    terminal = set(goal) | set(unsafe) | {imdp.absorbing_id, imdp.sink_id}
    row_verts = []
    for r in range(imdp.num_actions):
        sl = slice(imdp.row_ptr[r], imdp.row_ptr[r + 1])
        row_verts.append((imdp.succ[sl],
                          vertex_distributions(imdp.p_lo[sl], imdp.p_hi[sl])))
    for _ in range(max_iter if sweeps is None else sweeps):
        new = V.copy()
        for s in range(S):
            if s in terminal:
                continue
            best = 0.0
            for r in range(imdp.num_actions):
                if imdp.row_state[r] != s:
                    continue
                succ, verts = row_verts[r]
                worst = min(float(mu @ V[succ]) for mu in verts)
                best = max(best, worst)
            new[s] = best
        if sweeps is None and np.max(np.abs(new - V)) < tol:
            return new
        V = new
    return V


def random_feasible_row(rng, succ_pool, max_succ=4):
    m = rng.integers(2, max_succ + 1)
    succ = sorted(rng.choice(succ_pool, size=m, replace=False).tolist())
    mu = rng.dirichlet(np.ones(m))
    lo = mu * rng.uniform(0.0, 1.0, m)
    hi = np.minimum(mu + (1 - mu) * rng.uniform(0.0, 0.6, m), 1.0)
    return [(int(s), float(a), float(b)) for s, a, b in zip(succ, lo, hi)]


# -- map_spec -----------------------------------------------------------------

def test_map_spec_car_goal_block():
    part = build_partition(Box([-10, -10], [10, 10]), [40, 40])
    spec = map_spec(part, [Box([5, 5], [7, 7])], [], unsafe_outside_domain=True)
    assert spec.goal_ids.size == 16
    assert part.absorbing_id in spec.unsafe_ids


def test_map_spec_goal_inside_one_cell_is_empty():
    part = build_partition(Box([0, 0], [1, 1]), [2, 2])
    spec = map_spec(part, [Box([0.1, 0.1], [0.3, 0.3])], [])
    assert spec.goal_ids.size == 0


def test_map_spec_unsafe_overapproximates():
    part = build_partition(Box([0, 0], [1, 1]), [2, 2])
    spec = map_spec(part, [], [Box([0.4, 0.0], [0.6, 0.2])], unsafe_outside_domain=False)
    assert {part.multi_index(s) for s in spec.unsafe_ids} == {(0, 0), (1, 0)}


def test_map_spec_conflict_resolves_unsafe():
    part = build_partition(Box([0, 0], [1, 1]), [2, 2])
    spec = map_spec(part, [Box([0, 0], [1, 1])], [Box([0.4, 0.4], [0.6, 0.6])])
    assert set(spec.goal_ids) == set()  # every cell also touches the unsafe box


def test_map_spec_tolerates_grid_aligned_boxes():
    # goal box boundaries land exactly on accumulated cell boundaries; the
    # epsilon slack keeps all 2x2 center cells in the goal set
    part = build_partition(Box([-math.pi, -2], [math.pi, 2]), [32, 10])
    spec = map_spec(part, [Box([-0.2, -0.4], [0.2, 0.4])], [])
    assert spec.goal_ids.size == 4


# -- inner minimization -------------------------------------------------------

def test_inner_min_hand_example():
    row = [(0, ProbabilityInterval(0.2, 0.6)), (1, ProbabilityInterval(0.5, 0.9))]
    assert inner_min_expectation(row, np.array([0.0, 1.0])) == pytest.approx(0.5)


def test_inner_min_equal_values_sum_to_value():
    row = [(0, ProbabilityInterval(0.1, 0.8)), (1, ProbabilityInterval(0.1, 0.9))]
    assert inner_min_expectation(row, np.array([0.7, 0.7])) == pytest.approx(0.7)


def test_inner_min_point_intervals_exact():
    row = [(0, ProbabilityInterval(0.3, 0.3)), (1, ProbabilityInterval(0.7, 0.7))]
    assert inner_min_expectation(row, np.array([0.2, 0.9])) == pytest.approx(0.69)


def test_inner_min_dominates_random_feasible(rng):
    # the sort-and-saturate minimizer is below 10^4 random feasible
    # distributions on every tested row
    for _ in range(10):
        entries = random_feasible_row(rng, np.arange(6), max_succ=5)
        row = [(s, ProbabilityInterval(a, b)) for s, a, b in entries]
        values = rng.uniform(0, 1, 6)
        best = inner_min_expectation(row, values)
        lo = np.array([a for _, a, _ in entries])
        hi = np.array([b for _, _, b in entries])
        succ = np.array([s for s, _, _ in entries])
        mu = lo + rng.uniform(0, 1, (10_000, len(lo))) * (hi - lo)
        # iterative redistribution onto the simplex slice: move mass toward
        # the deficit direction proportionally to the available room
        for _ in range(30):
            deficit = 1.0 - mu.sum(axis=1)
            up = hi - mu
            down = mu - lo
            room = np.where(deficit[:, None] > 0, up, down)
            total = np.maximum(room.sum(axis=1), 1e-15)
            mu = np.clip(mu + room * (deficit / total)[:, None], lo, hi)
        ok = np.abs(mu.sum(axis=1) - 1.0) <= 1e-6
        assert ok.sum() > 5000
        exps = mu[ok] @ values[succ]
        assert np.all(best <= exps + 1e-9)


# -- robust value iteration ---------------------------------------------------

def test_vi_all_goal_states():
    imdp = build_imdp(2, [(0, 0, [(1, 1.0, 1.0)]), (1, 0, [(0, 1.0, 1.0)])])
    spec = ReachAvoidSpec(goal_ids=np.array([0, 1]), unsafe_ids=np.array([2]),
                          horizon=math.inf)
    sched = robust_value_iteration(imdp, spec)
    assert np.allclose(sched.values[[0, 1]], 1.0)


def test_vi_three_state_chain():
    # s0 -> s1 -> goal with probability-one point intervals
    imdp = build_imdp(2, [(0, 1, [(1, 1.0, 1.0)]), (1, 0, [(3, 1.0, 1.0)])])
    spec = ReachAvoidSpec(goal_ids=np.array([3]), unsafe_ids=np.array([2]),
                          horizon=math.inf)
    sched = robust_value_iteration(imdp, spec)
    assert sched.values[0] == pytest.approx(1.0)
    assert sched.values[1] == pytest.approx(1.0)
    assert sched.choice[0] == 1


def test_vi_matches_vertex_enumeration_oracle(rng):
    # absorbing (id 2) is unsafe, sink (id 3) is the goal
    for trial in range(20):
        rows = []
        for s in (0, 1):
            for a in (0, 1):
                rows.append((s, a, random_feasible_row(rng, np.arange(4))))
        imdp = build_imdp(2, rows)
        spec = ReachAvoidSpec(goal_ids=np.array([3]), unsafe_ids=np.array([2]),
                              horizon=math.inf)
        sched = robust_value_iteration(imdp, spec, tol=1e-10, max_iter=20_000)
        oracle = oracle_robust_vi(imdp, goal={3}, unsafe={2}, sweeps=sched.iterations)
        assert np.allclose(sched.values, oracle, atol=1e-6), f"trial {trial}"


def test_vi_point_intervals_match_plain_vi(rng):
    # degenerate intervals reduce robust VI to standard value iteration
    for _ in range(5):
        rows = []
        for s in range(8):
            for a in range(2):
                m = rng.integers(2, 5)
                succ = sorted(rng.choice(10, size=m, replace=False).tolist())
                mu = rng.dirichlet(np.ones(m))
                rows.append((s, a, [(int(t), float(p), float(p))
                                    for t, p in zip(succ, mu)]))
        imdp = build_imdp(8, rows)
        spec = ReachAvoidSpec(goal_ids=np.array([9]), unsafe_ids=np.array([8]),
                              horizon=math.inf)
        sched = robust_value_iteration(imdp, spec, tol=1e-12, max_iter=50_000)

        V = np.zeros(10)
        V[9] = 1.0
        for _ in range(50_000):
            new = V.copy()
            for s in range(8):
                best = 0.0
                for (ss, aa, entries) in rows:
                    if ss != s:
                        continue
                    best = max(best, sum(p * V[t] for t, p, _ in entries))
                new[s] = best
            if np.max(np.abs(new - V)) < 1e-13:
                break
            V = new
        assert np.allclose(sched.values, V, atol=1e-9)


def test_vi_values_bounded_and_monotone(rng):
    rows = []
    for s in (0, 1, 2):
        rows.append((s, 0, random_feasible_row(rng, np.arange(5))))
    imdp = build_imdp(3, rows)
    spec = ReachAvoidSpec(goal_ids=np.array([4]), unsafe_ids=np.array([3]),
                          horizon=math.inf)
    sched = robust_value_iteration(imdp, spec)
    assert np.all(sched.values >= 0) and np.all(sched.values <= 1)
    # one-sweep finite-horizon values never exceed the fixed point
    one = robust_value_iteration(imdp, ReachAvoidSpec(
        goal_ids=np.array([4]), unsafe_ids=np.array([3]), horizon=1))
    assert np.all(one.values <= sched.values + 1e-9)


def test_vi_greedy_choice_certifies_value(rng):
    rows = []
    for s in (0, 1):
        for a in (0, 1):
            rows.append((s, a, random_feasible_row(rng, np.arange(4))))
    imdp = build_imdp(2, rows)
    spec = ReachAvoidSpec(goal_ids=np.array([3]), unsafe_ids=np.array([2]),
                          horizon=math.inf)
    sched = robust_value_iteration(imdp, spec, tol=1e-9)
    for s in (0, 1):
        a = sched.choice[s]
        if a < 0:
            continue
        row = imdp.row(s, a)
        assert inner_min_expectation(row, sched.values) == pytest.approx(
            sched.values[s], abs=1e-6)


def test_vi_finite_horizon_policy_varies_with_time():
    # reaching the goal needs two steps; with one step remaining the value is 0
    imdp = build_imdp(2, [(0, 1, [(1, 1.0, 1.0)]), (1, 0, [(3, 1.0, 1.0)])])
    spec = ReachAvoidSpec(goal_ids=np.array([3]), unsafe_ids=np.array([2]), horizon=2)
    sched = robust_value_iteration(imdp, spec)
    assert sched.values[0] == pytest.approx(1.0)
    assert sched.per_step.shape == (2, 4)
    assert sched.action_at(0, k=0) == 1
    one_step = robust_value_iteration(imdp, ReachAvoidSpec(
        goal_ids=np.array([3]), unsafe_ids=np.array([2]), horizon=1))
    assert one_step.values[0] == pytest.approx(0.0)


def test_infeasible_row_rejected():
    imdp = build_imdp(1, [(0, 0, [(1, 0.8, 0.9), (2, 0.5, 0.9)])])
    with pytest.raises(RuntimeError):
        imdp.check_feasible()


def test_save_load_roundtrip(tmp_path, rng):
    rows = [(0, 0, random_feasible_row(rng, np.arange(4))),
            (1, 1, random_feasible_row(rng, np.arange(4)))]
    imdp = build_imdp(2, rows)
    spec = ReachAvoidSpec(goal_ids=np.array([3]), unsafe_ids=np.array([2]),
                          horizon=math.inf)
    imdp.save(tmp_path / "m.npz", spec)
    loaded, lspec = IntervalImdp.load(tmp_path / "m.npz")
    assert np.array_equal(loaded.succ, imdp.succ)
    assert np.array_equal(loaded.p_lo, imdp.p_lo)
    assert math.isinf(lspec.horizon)
    assert np.array_equal(lspec.goal_ids, spec.goal_ids)


# -- export -------------------------------------------------------------------

def test_export_prism_toy(tmp_path):
    imdp = build_imdp(2, [(0, 1, [(1, 0.25, 0.75), (3, 0.25, 0.75)]),
                          (1, 0, [(3, 1.0, 1.0)])])
    spec = ReachAvoidSpec(goal_ids=np.array([3]), unsafe_ids=np.array([2]),
                          horizon=math.inf)
    tra, lab = export_prism(imdp, spec, tmp_path / "toy")
    lines = (tmp_path / "toy.tra").read_text().splitlines()
    assert lines[0] == "4 4 5"  # 4 states, 2 rows + 2 self-loops, 3 + 2 lines
    assert lines[1].split() == ["0", "1", "1", "0.25", "0.75"]
    assert lines[-1] == "3 3 3 1 1"
    lab_text = (tmp_path / "toy.lab").read_text()
    assert '1="goal"' in lab_text and "3: 1 4" in lab_text

    # re-export is byte identical
    export_prism(imdp, spec, tmp_path / "again")
    assert (tmp_path / "again.tra").read_bytes() == (tmp_path / "toy.tra").read_bytes()
    assert (tmp_path / "again.lab").read_bytes() == (tmp_path / "toy.lab").read_bytes()
