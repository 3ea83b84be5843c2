"""Rectangular regions, uniform partitions, voxel tilings and related predicates.

Everything here is axis-aligned: a region is a box ``[lower, upper]``, a
partition is a uniform grid of such boxes over a bounded domain plus one
implicit absorbing region covering the rest of the state space, and a
voxelization is a uniform sub-tiling of a single cell.  All operations are
pure and all objects are immutable after construction, so they can be shared
freely between parallel workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class InvalidGeometryError(ValueError):
    """Raised for empty/inverted boxes or malformed grid parameters."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise InvalidGeometryError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``{x : lower <= x <= upper}``.

    A construction with ``lower[q] > upper[q]`` is rejected.  Zero-width
    dimensions are tolerated (they arise when a region is scaled by a factor
    of zero); partitions and voxelizations additionally require a nonempty
    interior.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lower = _as_vector(lower, "lower")
        upper = _as_vector(upper, "upper")
        if lower.shape != upper.shape:
            raise InvalidGeometryError("lower/upper dimension mismatch")
        if np.any(lower > upper):
            raise InvalidGeometryError(f"inverted box: lower={lower}, upper={upper}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, x) -> bool:
        """Closed-box membership test for a single point."""
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized closed-box membership for an ``(m, n)`` array of points."""
        pts = np.asarray(pts, dtype=np.float64)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform samples from the box, shape ``(size, dim)``."""
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def __repr__(self):  # compact, readable in test output
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


class BoxRelation(enum.Enum):
    DISJOINT = "disjoint"
    INTERSECTING = "intersecting"
    CONTAINED = "contained"


def box_relation(cell: Box, shifted: Box) -> BoxRelation:
    """Classify ``shifted`` against ``cell``.

    ``CONTAINED`` means ``shifted`` lies inside the closed cell;
    ``INTERSECTING`` means the interiors overlap.  Boxes that only touch on a
    face share a set of measure zero and count as ``DISJOINT`` (the noise
    distribution is absolutely continuous, so such events have probability
    zero and the cheaper open-overlap convention is sound).
    """
    if np.all(shifted.lower >= cell.lower) and np.all(shifted.upper <= cell.upper):
        return BoxRelation.CONTAINED
    if np.all(shifted.lower < cell.upper) and np.all(shifted.upper > cell.lower):
        return BoxRelation.INTERSECTING
    return BoxRelation.DISJOINT


def scale_region(region: Box, lam: float) -> Box:
    """Scale a box about its center by a factor ``lam >= 0``.

    With center ``d`` and half-widths ``h`` the result is
    ``[d - lam*h, d + lam*h]``: the axis-aligned instance of scaling a convex
    polytope ``Mx <= b`` to ``Mx <= lam*(b - M d) + M d``.
    """
    if lam < 0:
        raise InvalidGeometryError(f"scaling factor must be nonnegative, got {lam}")
    d = region.center
    h = region.half_widths
    return Box(d - lam * h, d + lam * h)


def inscribed_ball_radius(region: Box, lam: float, x_prime) -> float:
    """Radius of the largest L-inf ball centered at ``x_prime`` inside the scaled region.

    Returns ``min_q(lam * h_q - |x'_q - d_q|)``.  The value is negative when
    ``x_prime`` lies outside the scaled box; callers use the sign to
    distinguish "no coverage" from a zero-radius ball, so it is not clamped.
    """
    x_prime = np.asarray(x_prime, dtype=np.float64)
    return float(np.min(lam * region.half_widths - np.abs(x_prime - region.center)))


def inscribed_ball_radius_many(region: Box, lam: float, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`inscribed_ball_radius` over an ``(m, n)`` array."""
    return np.min(lam * region.half_widths - np.abs(pts - region.center), axis=-1)


@dataclass(frozen=True)
class Partition:
    """Uniform rectangular decomposition of a bounded domain.

    The ``v = prod(cells_per_dim)`` cells tile the domain exactly; cell ids
    are the row-major flattening of the per-dimension indices.  One extra id
    (``absorbing_id == v``) represents everything outside the domain.
    """

    domain: Box
    cells_per_dim: np.ndarray
    cell_width: np.ndarray = field(init=False)

    def __init__(self, domain: Box, cells_per_dim):
        cells = np.atleast_1d(np.asarray(cells_per_dim, dtype=np.int64))
        if cells.shape[0] != domain.dim:
            raise InvalidGeometryError("cells_per_dim length must match domain dimension")
        if np.any(cells < 1):
            raise InvalidGeometryError(f"cells_per_dim must be >= 1, got {cells}")
        if np.any(domain.lower >= domain.upper):
            raise InvalidGeometryError("partition domain must have nonempty interior")
        cells.setflags(write=False)
        width = (domain.upper - domain.lower) / cells
        width.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "cells_per_dim", cells)
        object.__setattr__(self, "cell_width", width)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    @property
    def absorbing_id(self) -> int:
        return self.num_cells

    def multi_index(self, i: int) -> tuple:
        """Row-major cell id -> per-dimension indices."""
        if not 0 <= i < self.num_cells:
            raise IndexError(f"cell id {i} out of range 0..{self.num_cells - 1}")
        return tuple(int(k) for k in np.unravel_index(i, tuple(self.cells_per_dim)))

    def flat_index(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(int(k) for k in idx), tuple(self.cells_per_dim)))

    def cell(self, i: int) -> Box:
        """Box of cell ``i``; bounds are computed as ``lower + k * width`` so
        they agree bit-for-bit with the index arithmetic in :meth:`region_of`."""
        idx = np.asarray(self.multi_index(i), dtype=np.float64)
        lo = self.domain.lower + idx * self.cell_width
        hi = self.domain.lower + (idx + 1.0) * self.cell_width
        # Last cell per dimension closes exactly onto the domain face.
        at_end = np.asarray(self.multi_index(i)) + 1 == self.cells_per_dim
        hi = np.where(at_end, self.domain.upper, hi)
        return Box(lo, hi)

    def cell_centers(self) -> np.ndarray:
        """Centers of all cells, shape ``(v, n)``, row-major cell order."""
        axes = [
            self.domain.lower[q] + (np.arange(self.cells_per_dim[q]) + 0.5) * self.cell_width[q]
            for q in range(self.dim)
        ]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def region_of(self, x) -> int:
        """Abstraction map: cell id of ``x``, or ``absorbing_id`` outside the domain.

        Cells are half-open ``[lower, upper)`` per dimension; the upper domain
        face is closed so the map is total on the domain.
        """
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < self.domain.lower) or np.any(x > self.domain.upper):
            return self.absorbing_id
        idx = np.empty(self.dim, dtype=np.int64)
        for q in range(self.dim):
            idx[q] = _grid_index(
                float(x[q]), float(self.domain.lower[q]), float(self.cell_width[q]),
                int(self.cells_per_dim[q]),
            )
        return self.flat_index(idx)

    def region_of_batch(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`region_of` for an ``(m, n)`` array of points."""
        pts = np.asarray(pts, dtype=np.float64)
        outside = np.any((pts < self.domain.lower) | (pts > self.domain.upper), axis=-1)
        rel = (pts - self.domain.lower) / self.cell_width
        idx = np.floor(rel).astype(np.int64)
        # Repair floating-point drift against the same boundary arithmetic
        # used by cell(): lower + k * width.
        for q in range(self.dim):
            k = idx[:, q]
            lo_q, w_q = self.domain.lower[q], self.cell_width[q]
            k += pts[:, q] >= lo_q + (k + 1) * w_q
            k -= pts[:, q] < lo_q + k * w_q
            np.clip(k, 0, self.cells_per_dim[q] - 1, out=k)
        flat = np.ravel_multi_index(
            tuple(idx[:, q] for q in range(self.dim)), tuple(self.cells_per_dim)
        )
        flat = np.where(outside, self.absorbing_id, flat)
        return flat.astype(np.int64)


def _grid_index(x: float, lo: float, width: float, count: int) -> int:
    """Index of ``x`` on a uniform grid, consistent with bounds ``lo + k*width``."""
    k = int(math.floor((x - lo) / width))
    if x >= lo + (k + 1) * width:
        k += 1
    elif x < lo + k * width:
        k -= 1
    return min(max(k, 0), count - 1)


def build_partition(domain: Box, cells_per_dim) -> Partition:
    """Uniform partition of ``domain`` into ``prod(cells_per_dim)`` cells."""
    return Partition(domain, cells_per_dim)


@dataclass(frozen=True)
class Voxelization:
    """Uniform hyperrectangular sub-tiling of one partition cell.

    ``centers`` holds the voxel centers in row-major voxel order and
    ``half_widths`` the (shared) per-dimension voxel half-widths.
    """

    region_index: int
    voxels_per_dim: np.ndarray
    centers: np.ndarray
    half_widths: np.ndarray

    @property
    def num_voxels(self) -> int:
        return self.centers.shape[0]

    def voxel_of(self, x, cell: Box) -> int:
        """Row-major voxel index of a point inside ``cell``."""
        x = np.asarray(x, dtype=np.float64)
        idx = [
            _grid_index(float(x[q]), float(cell.lower[q]),
                        float(2.0 * self.half_widths[q]), int(self.voxels_per_dim[q]))
            for q in range(x.shape[0])
        ]
        return int(np.ravel_multi_index(tuple(idx), tuple(self.voxels_per_dim)))

    def voxel_of_batch(self, pts: np.ndarray, cell: Box) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        width = 2.0 * self.half_widths
        idx = np.floor((pts - cell.lower) / width).astype(np.int64)
        for q in range(pts.shape[1]):
            k = idx[:, q]
            k += pts[:, q] >= cell.lower[q] + (k + 1) * width[q]
            k -= pts[:, q] < cell.lower[q] + k * width[q]
            np.clip(k, 0, self.voxels_per_dim[q] - 1, out=k)
        return np.ravel_multi_index(
            tuple(idx[:, q] for q in range(pts.shape[1])), tuple(self.voxels_per_dim)
        ).astype(np.int64)


def voxelize(partition: Partition, region_index: int, voxels_per_dim) -> Voxelization:
    """Tile cell ``region_index`` into a uniform grid of voxels."""
    if region_index == partition.absorbing_id:
        raise InvalidGeometryError("the absorbing region cannot be voxelized")
    counts = np.atleast_1d(np.asarray(voxels_per_dim, dtype=np.int64))
    if counts.shape[0] != partition.dim:
        raise InvalidGeometryError("voxels_per_dim length must match dimension")
    if np.any(counts < 1):
        raise InvalidGeometryError(f"voxels_per_dim must be >= 1, got {counts}")
    cell = partition.cell(region_index)
    width = (cell.upper - cell.lower) / counts
    axes = [cell.lower[q] + (np.arange(counts[q]) + 0.5) * width[q] for q in range(partition.dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=-1)
    centers.setflags(write=False)
    half = 0.5 * width
    half.setflags(write=False)
    counts.setflags(write=False)
    return Voxelization(region_index, counts, centers, half)
