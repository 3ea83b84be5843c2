import csv
import math

import numpy as np
import pytest

from reachsyn.geometry import Box, build_partition, scale_region
from reachsyn.imdp import assemble_imdp, map_spec, robust_value_iteration
from reachsyn.reachability import compute_enabled_actions
from reachsyn.synthesis import (
    HIT_UNSAFE,
    REACHED_GOAL,
    PolicyUndefinedError,
    RefinedPolicy,
    monte_carlo_validate,
    policy_input,
    simulate,
    simulate_batch,
    trajectory_csv,
    value_heatmap,
    values_csv,
    wilson_interval,
)
from reachsyn.systems import sample_noise, generate_dataset


@pytest.fixture(scope="module")
def steer_setup(steer_2d):
    """Small fully-controllable system with everything synthesized."""
    part = build_partition(Box([-1, -1], [1, 1]), [4, 4])
    ds = generate_dataset(steer_2d, part, [3, 3], [8, 8])
    table = compute_enabled_actions(ds, part, steer_2d, [3, 3], 1.5)
    noise = sample_noise(steer_2d, np.random.default_rng(0), 2000)
    goal = [Box([0.5, 0.5], [1.0, 1.0])]
    unsafe = [Box([-1.0, -1.0], [-0.5, -0.5])]
    imdp, _ = assemble_imdp(part, table, noise, 0.05, [-0.75, 0.75])
    spec = map_spec(part, goal, unsafe, True)
    sched = robust_value_iteration(imdp, spec)
    policy = RefinedPolicy(sched, table, part, steer_2d.input_dim)
    return steer_2d, part, table, imdp, spec, sched, policy, goal, unsafe


def test_values_nontrivial(steer_setup):
    _, part, _, imdp, _, sched, _, _, _ = steer_setup
    v = sched.values[imdp.initial]
    assert 0.2 < v < 1.0  # noise makes success probabilistic but likely


def test_policy_constant_within_voxel(steer_setup):
    model, part, table, _, _, sched, policy, _, _ = steer_setup
    # two states in the same voxel of the same cell get the same input
    cell_id = next(i for i in range(part.num_cells) if policy.defined[i])
    cell = part.cell(cell_id)
    base = cell.lower + 0.05 * (cell.upper - cell.lower)
    u1 = policy_input(policy, base)
    u2 = policy_input(policy, base + 1e-4)
    assert np.array_equal(u1, u2)


def test_policy_lookup_matches_stored_control(steer_setup):
    _, part, table, _, _, sched, policy, _, _ = steer_setup
    cell_id = next(i for i in range(part.num_cells) if policy.defined[i])
    j = int(sched.choice[cell_id])
    u_vox, idx = table.controls[(cell_id, j)]
    from reachsyn.geometry import voxelize
    vox = voxelize(part, cell_id, table.voxels_per_dim)
    for t in range(vox.num_voxels):
        u = policy_input(policy, vox.centers[t])
        assert np.array_equal(u, u_vox[t])


def test_refinement_soundness(steer_setup, rng):
    # nominal successor of the refined input lands in the scheduled action's
    # scaled target: exact check, zero tolerance
    model, part, table, _, _, sched, policy, _, _ = steer_setup
    checked = 0
    for _ in range(1000):
        x = part.domain.sample(rng, 1)[0]
        i = part.region_of(x)
        if i >= part.num_cells or not policy.defined[i]:
            continue
        j = int(sched.choice[i])
        u = policy_input(policy, x)
        x_next = model.nominal(x[None, :], u[None, :])[0]
        target = scale_region(part.cell(j), max(table.lam[(i, j)], 0.0))
        assert target.contains(x_next)
        checked += 1
    assert checked > 500


def test_policy_undefined_raises(steer_setup):
    _, part, _, _, _, _, policy, _, _ = steer_setup
    with pytest.raises(PolicyUndefinedError):
        policy_input(policy, np.array([5.0, 5.0]))  # outside the domain


def test_simulate_immediate_outcomes(steer_setup):
    model, part, _, _, _, _, policy, goal, unsafe = steer_setup
    rng = np.random.default_rng(1)
    rec = simulate(model, policy, goal, unsafe, [0.75, 0.75], 50, rng)
    assert rec.outcome == REACHED_GOAL and rec.steps == 0
    rec = simulate(model, policy, goal, unsafe, [-0.75, -0.75], 50, rng)
    assert rec.outcome == HIT_UNSAFE and rec.steps == 0
    # outside the domain counts as unsafe when the flag is set
    rec = simulate(model, policy, goal, unsafe, [2.0, 0.0], 50, rng)
    assert rec.outcome == HIT_UNSAFE


def test_simulate_record_shapes(steer_setup):
    model, part, _, _, _, _, policy, goal, unsafe = steer_setup
    rec = simulate(model, policy, goal, unsafe, [-0.75, 0.75], 100,
                   np.random.default_rng(3))
    assert rec.states.shape == (rec.steps + 1, 2)
    assert rec.inputs.shape == (rec.steps, 2)


def test_simulate_deterministic_per_seed(steer_setup):
    model, part, _, _, _, _, policy, goal, unsafe = steer_setup
    a = simulate(model, policy, goal, unsafe, [-0.75, 0.75], 100,
                 np.random.default_rng(42))
    b = simulate(model, policy, goal, unsafe, [-0.75, 0.75], 100,
                 np.random.default_rng(42))
    assert a.outcome == b.outcome and np.array_equal(a.states, b.states)


def test_batch_agrees_with_expected_rate(steer_setup):
    model, part, _, imdp, _, sched, policy, goal, unsafe = steer_setup
    outcomes = simulate_batch(model, policy, goal, unsafe, [-0.75, 0.75], 400,
                              200, np.random.default_rng(5))
    rate = np.mean(outcomes == REACHED_GOAL)
    assert rate >= sched.values[imdp.initial] - 0.1  # bound holds with slack


def test_monte_carlo_validation(steer_setup):
    model, part, _, imdp, _, sched, policy, goal, unsafe = steer_setup
    result = monte_carlo_validate(model, policy, goal, unsafe, [-0.75, 0.75],
                                  500, 200, np.random.default_rng(11),
                                  float(sched.values[imdp.initial]))
    assert result.passed
    assert result.wilson_lower <= result.empirical <= result.wilson_upper
    with pytest.raises(ValueError):
        monte_carlo_validate(model, policy, goal, unsafe, [0, 0], 50, 10,
                             np.random.default_rng(0), 0.0)


def test_wilson_interval_values():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi == pytest.approx(0.0370, abs=1e-3)
    lo, hi = wilson_interval(100, 100)
    assert hi == 1.0 and lo == pytest.approx(0.9630, abs=1e-3)
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi


def test_values_csv(tmp_path, steer_setup):
    _, part, _, _, _, sched, _, _, _ = steer_setup
    path = tmp_path / "values.csv"
    values_csv(sched, part, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["state", "idx_0", "idx_1", "value", "action"]
    assert len(rows) == part.num_cells + 1
    assert all(0.0 <= float(r[3]) <= 1.0 for r in rows[1:])


def test_heatmap_csv(tmp_path, steer_setup):
    _, part, _, _, _, sched, _, _, _ = steer_setup
    path = tmp_path / "heatmap.csv"
    value_heatmap(sched, part, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["cell_x", "cell_y", "center_x", "center_y", "value", "action"]
    assert len(rows) == part.num_cells + 1
    # row-major order over (cell_x, cell_y)
    assert [r[:2] for r in rows[1:5]] == [["0", "0"], ["0", "1"], ["0", "2"], ["0", "3"]]


def test_trajectory_csv(tmp_path, steer_setup):
    model, part, _, _, _, _, policy, goal, unsafe = steer_setup
    rec = simulate(model, policy, goal, unsafe, [-0.75, 0.75], 100,
                   np.random.default_rng(8))
    path = tmp_path / "traj.csv"
    trajectory_csv(rec, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "x_0", "x_1", "u_0", "u_1"]
    assert len(rows) == rec.steps + 2
    assert rows[-1][3] == "" and rows[-1][4] == ""  # final state has no input
