"""reachplots: figures from reachsyn CSV artifacts."""

__version__ = "0.1.0"

from .figures import (
    COLOR_SCALE,
    CsvFormatError,
    FigureJob,
    load_trajectory,
    load_values_grid,
    plot_heatmap,
    plot_trajectories,
)
