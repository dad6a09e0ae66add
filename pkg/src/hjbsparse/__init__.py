"""Semi-global optimal feedback control via causality-free sparse-grid characteristics."""

__version__ = "0.1.0"

from .grid import Box, NodeFamily, SparseGrid, build_grid, dense_size, grid_size

__all__ = [
    "Box",
    "NodeFamily",
    "SparseGrid",
    "build_grid",
    "dense_size",
    "grid_size",
    "ControlProblem",
    "FeedbackLaw",
    "GridSolution",
    "Interpolant",
    "MpcConfig",
    "fit_feedback",
    "fit_hierarchical",
    "load_jsonl",
    "make_problem",
    "mc_ebvp",
    "simulate",
    "solve_point",
    "sweep",
    "worst_case_coefficient",
    "validate",
    "__version__",
]

from .characteristics import (  # noqa: E402
    ControlProblem,
    FeedbackLaw,
    GridSolution,
    fit_feedback,
    load_jsonl,
    solve_point,
    sweep,
)
from .errors import mc_ebvp, worst_case_coefficient, validate  # noqa: E402
from .interp import Interpolant, fit_hierarchical  # noqa: E402
from .mpc import MpcConfig, simulate  # noqa: E402
from .problems import make_problem  # noqa: E402
