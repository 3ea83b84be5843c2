"""Sampled dynamics: benchmark systems, noise access, Jacobian bounds, datasets.

A :class:`DynamicsModel` bundles everything the abstraction needs from a
system ``x+ = f(x, u) + w``: the deterministic map ``f`` (vectorized over
batches of states/inputs), i.i.d. sampling access to the noise ``w``, and an
entrywise bound on the absolute state-Jacobian of ``f`` over a region, which
drives the deviation bound ``|f(x1,u) - f(x2,u)| <= J+ |x1 - x2|``.

Three benchmarks ship with the package (a planar car with nonlinear steering
control, an inverted pendulum, a harmonic oscillator with cubic damping),
plus a generic wrapper for user systems where only a Lipschitz matrix is
known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import Box, Partition


class InputDomainError(ValueError):
    """Raised when a control input lies outside the admissible set U."""


@dataclass(frozen=True)
class DynamicsModel:
    """Black-box view of a controlled stochastic system with additive noise.

    ``nominal`` must be deterministic and accept ``(m, n)`` states with
    ``(m, p)`` inputs, returning ``(m, n)`` successors.  ``noise_sampler``
    draws ``size`` i.i.d. noise vectors from a seeded generator.
    ``jacobian_bound`` returns an entrywise nonnegative matrix dominating
    ``|d f_p / d x_q|`` over the given region and all admissible inputs.
    """

    name: str
    state_dim: int
    input_dim: int
    input_box: Box
    nominal: Callable[[np.ndarray, np.ndarray], np.ndarray]
    noise_sampler: Callable[[np.random.Generator, int], np.ndarray]
    jacobian_bound_fn: Callable[[Box], np.ndarray]
    params: dict = field(default_factory=dict)

    def jacobian_bound(self, region: Box) -> np.ndarray:
        J = np.asarray(self.jacobian_bound_fn(region), dtype=np.float64)
        if J.shape != (self.state_dim, self.state_dim):
            raise ValueError(f"jacobian bound has shape {J.shape}, expected square")
        if np.any(J < 0):
            raise ValueError("jacobian bound must be entrywise nonnegative")
        return J


def step_nominal(model: DynamicsModel, x, u) -> np.ndarray:
    """One deterministic step ``f(x, u)`` for a single state/input pair."""
    x = np.asarray(x, dtype=np.float64)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if not model.input_box.contains(u):
        raise InputDomainError(f"input {u} outside admissible set {model.input_box}")
    return model.nominal(x[None, :], u[None, :])[0]


def sample_noise(model: DynamicsModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` i.i.d. noise vectors, shape ``(count, n)``; reproducible by seed."""
    if count < 1:
        raise ValueError("need at least one noise sample")
    w = np.asarray(model.noise_sampler(rng, count), dtype=np.float64)
    if w.shape != (count, model.state_dim):
        raise ValueError(f"noise sampler returned shape {w.shape}")
    return w


# ---------------------------------------------------------------------------
# Benchmarks


def make_car(delta: float = 1.0, noise_bound: float = 0.55) -> DynamicsModel:
    """Planar car: position states, speed/heading inputs.

    ``x+ = x + 10*delta*v*cos(theta)``, ``y+ = y + 10*delta*v*sin(theta)``
    with ``(v, theta) in [-0.1, 0.1] x [-pi, pi]`` and uniform noise on
    ``[-noise_bound, noise_bound]^2``.  Linear in the state, so the Jacobian
    bound is the identity everywhere.

    The default ``delta = 1.0`` makes the per-step position increment span
    ``[-1, 1]``, commensurate with half-unit cells and the 0.55 noise bound;
    smaller time steps shrink the increment below the cell size and leave
    only self-loop actions enabled.
    """
    gain = 10.0 * delta

    def nominal(x, u):
        out = np.empty_like(x)
        out[:, 0] = x[:, 0] + gain * u[:, 0] * np.cos(u[:, 1])
        out[:, 1] = x[:, 1] + gain * u[:, 0] * np.sin(u[:, 1])
        return out

    def noise(rng, size):
        return rng.uniform(-noise_bound, noise_bound, size=(size, 2))

    def jbound(region):
        return np.eye(2)

    return DynamicsModel(
        name="car",
        state_dim=2,
        input_dim=2,
        input_box=Box([-0.1, -math.pi], [0.1, math.pi]),
        nominal=nominal,
        noise_sampler=noise,
        jacobian_bound_fn=jbound,
        params={"delta": delta, "noise_bound": noise_bound},
    )


def make_pendulum(delta: float = 0.1, gravity: float = 9.81, length: float = 1.0,
                  mass: float = 1.0, torque_limit: float = 17.5) -> DynamicsModel:
    """Inverted pendulum with angle/angular-velocity state and torque input.

    ``theta+ = theta + delta*omega``;
    ``omega+ = omega + delta*(-g/l)*sin(-theta) + u/(m*l^2)``.
    Uniform noise on ``[-0.1, 0.1] x [-0.2, 0.2]``.
    """
    grav = delta * gravity / length
    torque_gain = 1.0 / (mass * length * length)

    def nominal(x, u):
        out = np.empty_like(x)
        out[:, 0] = x[:, 0] + delta * x[:, 1]
        out[:, 1] = x[:, 1] + grav * np.sin(x[:, 0]) + torque_gain * u[:, 0]
        return out

    def noise(rng, size):
        w = np.empty((size, 2))
        w[:, 0] = rng.uniform(-0.1, 0.1, size=size)
        w[:, 1] = rng.uniform(-0.2, 0.2, size=size)
        return w

    def jbound(region):
        # d(omega+)/d(theta) = grav * cos(theta); |cos| is maximized at the
        # interval endpoints or at a multiple of pi inside the interval.
        t0, t1 = float(region.lower[0]), float(region.upper[0])
        cos_max = max(abs(math.cos(t0)), abs(math.cos(t1)))
        k0 = math.ceil(t0 / math.pi)
        if k0 * math.pi <= t1:
            cos_max = 1.0
        return np.array([[1.0, delta], [grav * cos_max, 1.0]])

    return DynamicsModel(
        name="pendulum",
        state_dim=2,
        input_dim=1,
        input_box=Box([-torque_limit], [torque_limit]),
        nominal=nominal,
        noise_sampler=noise,
        jacobian_bound_fn=jbound,
        params={"delta": delta, "gravity": gravity, "length": length, "mass": mass,
                "torque_limit": torque_limit},
    )


def make_oscillator(delta: float = 1.0, damping: float = 0.0075,
                    noise_std: float = 0.5) -> DynamicsModel:
    """Harmonic oscillator with cubic velocity damping and force input.

    ``x+ = x + delta*v + delta^2*u/2``; ``v+ = v - K*delta*v^3 + delta*u``
    with ``u in [-1, 1]`` and Gaussian noise ``N(0, noise_std^2 I)``.
    """
    def nominal(x, u):
        out = np.empty_like(x)
        out[:, 0] = x[:, 0] + delta * x[:, 1] + 0.5 * delta * delta * u[:, 0]
        out[:, 1] = x[:, 1] - damping * delta * x[:, 1] ** 3 + delta * u[:, 0]
        return out

    def noise(rng, size):
        return rng.normal(0.0, noise_std, size=(size, 2))

    def jbound(region):
        # d(v+)/dv = 1 - 3*K*delta*v^2: |.| is maximized at an endpoint of
        # the v^2 range over the region.
        v0, v1 = float(region.lower[1]), float(region.upper[1])
        s_hi = max(v0 * v0, v1 * v1)
        s_lo = 0.0 if v0 <= 0.0 <= v1 else min(v0 * v0, v1 * v1)
        coef = 3.0 * damping * delta
        dv = max(abs(1.0 - coef * s_lo), abs(1.0 - coef * s_hi))
        return np.array([[1.0, delta], [0.0, dv]])

    return DynamicsModel(
        name="oscillator",
        state_dim=2,
        input_dim=1,
        input_box=Box([-1.0], [1.0]),
        nominal=nominal,
        noise_sampler=noise,
        jacobian_bound_fn=jbound,
        params={"delta": delta, "damping": damping, "noise_std": noise_std},
    )


def make_lipschitz_model(name, state_dim, input_dim, input_box, nominal,
                         noise_sampler, lipschitz_matrix, params=None) -> DynamicsModel:
    """Wrap a black-box system with a constant Lipschitz matrix.

    For systems without an analytic Jacobian, an entrywise upper bound on the
    absolute Jacobian (or a Lipschitz constant replicated across the matrix)
    is enough for every guarantee in the pipeline.
    """
    L = np.asarray(lipschitz_matrix, dtype=np.float64)

    return DynamicsModel(
        name=name,
        state_dim=state_dim,
        input_dim=input_dim,
        input_box=input_box,
        nominal=nominal,
        noise_sampler=noise_sampler,
        jacobian_bound_fn=lambda region: L,
        params=params or {},
    )


def make_steer(lower=(-1.0, -1.0), upper=(1.0, 1.0), noise_half=0.3) -> DynamicsModel:
    """Fully controllable toy: the input is the nominal successor.

    ``f(x, u) = u`` with ``U`` equal to the given box and uniform noise of
    half-width ``noise_half`` per dimension; the state Jacobian is zero.
    Useful for smoke tests and demos: reach-avoid values are then governed
    purely by the noise geometry.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    n = lower.shape[0]
    half = np.broadcast_to(np.asarray(noise_half, dtype=np.float64), (n,)).copy()

    def nominal(x, u):
        return u.copy()

    def noise(rng, size):
        return rng.uniform(-half, half, size=(size, n))

    return DynamicsModel(
        name="steer",
        state_dim=n,
        input_dim=n,
        input_box=Box(lower, upper),
        nominal=nominal,
        noise_sampler=noise,
        jacobian_bound_fn=lambda region: np.zeros((n, n)),
        params={"lower": lower.tolist(), "upper": upper.tolist(),
                "noise_half": half.tolist()},
    )


BENCHMARKS = {
    "car": make_car,
    "pendulum": make_pendulum,
    "oscillator": make_oscillator,
    "steer": make_steer,
}


def make_benchmark(name: str, **overrides) -> DynamicsModel:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choices: {sorted(BENCHMARKS)}")
    return BENCHMARKS[name](**overrides)


# ---------------------------------------------------------------------------
# Dataset of nominal forward simulations


@dataclass(frozen=True)
class SampleTriple:
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray


def input_grid(input_box: Box, inputs_per_dim) -> np.ndarray:
    """Uniform endpoint-inclusive grid over the input box, shape ``(P, p)``.

    For one-dimensional input sets a multi-entry count is flattened to its
    product, so grids specified as e.g. ``15 x 21`` for a scalar input mean
    315 evenly spaced values.
    """
    counts = list(int(c) for c in np.atleast_1d(inputs_per_dim))
    p = input_box.dim
    if len(counts) != p:
        if p == 1:
            counts = [int(np.prod(counts))]
        else:
            raise ValueError(f"inputs grid {counts} incompatible with input dim {p}")
    axes = []
    for q in range(p):
        if counts[q] == 1:
            axes.append(np.array([0.5 * (input_box.lower[q] + input_box.upper[q])]))
        else:
            axes.append(np.linspace(input_box.lower[q], input_box.upper[q], counts[q]))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def state_grid(cell: Box, states_per_dim) -> np.ndarray:
    """Cell-interior uniform grid: points sit half a grid step from the faces,
    so no sample ever lands on a cell boundary."""
    counts = np.atleast_1d(np.asarray(states_per_dim, dtype=np.int64))
    if counts.shape[0] != cell.dim:
        raise ValueError("states grid length must match state dimension")
    width = (cell.upper - cell.lower) / counts
    axes = [cell.lower[q] + (np.arange(counts[q]) + 0.5) * width[q] for q in range(cell.dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True)
class CellBlock:
    """All triples with source states in one partition cell, in triple order."""

    cell_id: int
    base_index: int
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    dest: np.ndarray


class Dataset:
    """Triples ``(x, u, f(x, u))`` from gridded forward simulations.

    Triples are generated per source cell: the cell-interior state grid
    crossed with the input grid, in row-major order, cells ascending.  The
    global triple index is therefore ``cell_id * block_size + local index``,
    which makes source buckets trivial; destination buckets are derived from
    ``region_of(x_next)``.

    With ``lazy=True`` blocks are recomputed on demand instead of stored,
    which keeps full-scale runs (tens of millions of triples) out of memory;
    generation is deterministic, so both modes yield identical data.
    """

    def __init__(self, model: DynamicsModel, partition: Partition, states_per_cell,
                 inputs_per_dim, lazy: bool = False):
        self.model = model
        self.partition = partition
        self.states_per_cell = tuple(int(c) for c in np.atleast_1d(states_per_cell))
        self.inputs_per_dim = tuple(int(c) for c in np.atleast_1d(inputs_per_dim))
        if any(c < 1 for c in self.states_per_cell) or any(c < 1 for c in self.inputs_per_dim):
            raise ValueError("sample grids must be >= 1 per dimension")
        self._inputs = input_grid(model.input_box, self.inputs_per_dim)
        self.states_per_block = int(np.prod(self.states_per_cell))
        self.block_size = self.states_per_block * self._inputs.shape[0]
        self.lazy = lazy
        self._blocks: Optional[list] = None if lazy else [
            self._make_block(i) for i in range(partition.num_cells)
        ]

    @property
    def num_triples(self) -> int:
        return self.block_size * self.partition.num_cells

    def __len__(self) -> int:
        return self.num_triples

    def _make_block(self, i: int) -> CellBlock:
        cell = self.partition.cell(i)
        xs = np.repeat(state_grid(cell, self.states_per_cell), self._inputs.shape[0], axis=0)
        us = np.tile(self._inputs, (self.states_per_block, 1))
        xn = self.model.nominal(xs, us)
        dest = self.partition.region_of_batch(xn)
        return CellBlock(i, i * self.block_size, xs, us, xn, dest)

    def block(self, i: int) -> CellBlock:
        if self._blocks is not None:
            return self._blocks[i]
        return self._make_block(i)

    def triple(self, idx: int) -> SampleTriple:
        i, local = divmod(int(idx), self.block_size)
        blk = self.block(i)
        return SampleTriple(blk.x[local], blk.u[local], blk.x_next[local])

    def by_source(self, i: int) -> np.ndarray:
        """Global triple indices with source state in cell ``i``."""
        return np.arange(i * self.block_size, (i + 1) * self.block_size, dtype=np.int64)

    def by_destination(self, j: int) -> np.ndarray:
        """Global triple indices whose successor lies in region ``j``
        (``absorbing_id`` collects everything leaving the domain)."""
        hits = []
        for i in range(self.partition.num_cells):
            blk = self.block(i)
            local = np.flatnonzero(blk.dest == j)
            if local.size:
                hits.append(local + blk.base_index)
        if not hits:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(hits)


def generate_dataset(model: DynamicsModel, partition: Partition, states_per_cell,
                     inputs_per_dim, rng=None, lazy: bool = False) -> Dataset:
    """Build the gridded dataset.  ``rng`` is accepted for interface
    symmetry with the noise stage but grid sampling is deterministic."""
    return Dataset(model, partition, states_per_cell, inputs_per_dim, lazy=lazy)
