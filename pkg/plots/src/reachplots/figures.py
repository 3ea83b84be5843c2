"""Figure rendering from the synthesis pipeline's CSV artifacts.

Two figure kinds, both for 2-D state spaces:

* value heatmaps over the partition grid, colored on a fixed [0, 1] scale so
  figures from different sample counts or scaling caps stay comparable;
* trajectory overlays with a start marker and outcome-coded line colors.

Spec boxes (goal in green, unsafe in red) are drawn as outlined rectangles on
top of either figure.  Inputs are never modified.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

DPI = 150  # fixed so CI artifacts have reproducible sizes
COLOR_SCALE = (0.0, 1.0)

GOAL_COLOR = "#2ca02c"
UNSAFE_COLOR = "#d62728"
OUTCOME_COLORS = {"goal": "#2ca02c", "unsafe": "#d62728", "other": "#7f7f7f"}


class CsvFormatError(ValueError):
    """Input CSV does not match the documented column layout."""


Boxes = Sequence[Tuple[Sequence[float], Sequence[float]]]


@dataclass
class FigureJob:
    """One figure: input CSVs, overlay boxes, output path."""

    inputs: List[Path]
    output: Path
    goal: Boxes = field(default_factory=list)
    unsafe: Boxes = field(default_factory=list)

    def validate(self) -> None:
        if not self.inputs:
            raise CsvFormatError("no input CSV files given")
        for path in self.inputs:
            if not Path(path).exists():
                raise FileNotFoundError(f"input CSV does not exist: {path}")


HEATMAP_HEADER = ["cell_x", "cell_y", "center_x", "center_y", "value", "action"]


def load_values_grid(path):
    """Parse a heatmap CSV into ``(grid, x_centers, y_centers)``.

    ``grid[ix, iy]`` is the value of cell ``(ix, iy)``; values must lie in
    [0, 1].  Malformed rows are reported with their line number.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEATMAP_HEADER:
            raise CsvFormatError(
                f"{path}: expected header {HEATMAP_HEADER}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ix, iy = int(row[0]), int(row[1])
                cx, cy, value = float(row[2]), float(row[3]), float(row[4])
            except (ValueError, IndexError) as exc:
                raise CsvFormatError(f"{path}: malformed row {lineno}: {row}") from exc
            if not 0.0 <= value <= 1.0:
                raise CsvFormatError(
                    f"{path}: row {lineno}: value {value} outside [0, 1]")
            rows.append((ix, iy, cx, cy, value))
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    nx = max(r[0] for r in rows) + 1
    ny = max(r[1] for r in rows) + 1
    grid = np.full((nx, ny), np.nan)
    xs = np.full(nx, np.nan)
    ys = np.full(ny, np.nan)
    for ix, iy, cx, cy, value in rows:
        grid[ix, iy] = value
        xs[ix] = cx
        ys[iy] = cy
    if np.isnan(grid).any():
        raise CsvFormatError(f"{path}: grid has holes ({nx} x {ny} expected)")
    return grid, xs, ys


def _edges(centers):
    if centers.size == 1:
        half = 0.5
    else:
        half = 0.5 * (centers[1] - centers[0])
    return centers[0] - half, centers[-1] + half


def _draw_boxes(ax, boxes, color):
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        ax.add_patch(Rectangle(lo, *(hi - lo), fill=False, edgecolor=color,
                               linewidth=1.8))


def plot_heatmap(job: FigureJob):
    """Render a value heatmap; returns the data grid actually drawn."""
    job.validate()
    if len(job.inputs) != 1:
        raise CsvFormatError("heatmap takes exactly one values CSV")
    grid, xs, ys = load_values_grid(job.inputs[0])
    fig, ax = plt.subplots(figsize=(6, 5))
    extent = (*_edges(xs), *_edges(ys))
    im = ax.imshow(grid.T, origin="lower", extent=extent, aspect="auto",
                   vmin=COLOR_SCALE[0], vmax=COLOR_SCALE[1], cmap="viridis")
    fig.colorbar(im, ax=ax, label="reach-avoid lower bound")
    _draw_boxes(ax, job.goal, GOAL_COLOR)
    _draw_boxes(ax, job.unsafe, UNSAFE_COLOR)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(job.output, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return grid


def load_trajectory(path):
    """Parse a trajectory CSV into an ``(steps + 1, n)`` state array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "k":
            raise CsvFormatError(f"{path}: expected trajectory header, got {header}")
        state_cols = [i for i, name in enumerate(header) if name.startswith("x_")]
        if not state_cols:
            raise CsvFormatError(f"{path}: no state columns in header {header}")
        states = []
        for lineno, row in enumerate(reader, start=2):
            try:
                states.append([float(row[i]) for i in state_cols])
            except (ValueError, IndexError) as exc:
                raise CsvFormatError(f"{path}: malformed row {lineno}: {row}") from exc
    if not states:
        raise CsvFormatError(f"{path}: no data rows")
    return np.asarray(states)


def _inside(x, boxes):
    return any(np.all(x >= np.asarray(lo, float)) and np.all(x <= np.asarray(hi, float))
               for lo, hi in boxes)


def plot_trajectories(job: FigureJob):
    """Render trajectory overlays; returns the per-file outcome labels.

    The final state decides the line color: green when it lies in a goal box,
    red in an unsafe box, gray otherwise (horizon exhausted or unknown).
    """
    job.validate()
    trajectories = [load_trajectory(p) for p in job.inputs]
    for path, traj in zip(job.inputs, trajectories):
        if traj.shape[1] != 2:
            raise CsvFormatError(
                f"{path}: trajectory overlays support 2-D states only, "
                f"got dimension {traj.shape[1]}")
    fig, ax = plt.subplots(figsize=(6, 5))
    outcomes = []
    for traj in trajectories:
        last = traj[-1]
        if _inside(last, job.goal):
            kind = "goal"
        elif _inside(last, job.unsafe):
            kind = "unsafe"
        else:
            kind = "other"
        outcomes.append(kind)
        ax.plot(traj[:, 0], traj[:, 1], color=OUTCOME_COLORS[kind],
                linewidth=1.0, alpha=0.8)
        ax.plot(traj[0, 0], traj[0, 1], marker="o", color="black", markersize=4)
    _draw_boxes(ax, job.goal, GOAL_COLOR)
    _draw_boxes(ax, job.unsafe, UNSAFE_COLOR)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(job.output, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return outcomes
