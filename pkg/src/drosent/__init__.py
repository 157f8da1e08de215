"""Distributionally robust training for binary text classification.

Convex projection kernels, a small numpy sequence classifier with exact
gradients, worst-case sample reweighting, and a radius-sweep harness.
"""

from drosent.errors import (
    DataFormatError,
    DroError,
    InvalidConfigError,
    InvalidInputError,
    InvalidLabelError,
    InvalidScoreError,
    InvalidSpecError,
    NumericalFailureError,
    ShapeError,
    UsageError,
)
from drosent.projections import (
    ProjectionSpec,
    brute_force_project,
    project,
    project_intersection,
    project_l1_ball,
    project_l2_ball,
    project_lp_ball,
    project_simplex,
)

__version__ = "0.1.0"

__all__ = [
    "DataFormatError",
    "DroError",
    "InvalidConfigError",
    "InvalidInputError",
    "InvalidLabelError",
    "InvalidScoreError",
    "InvalidSpecError",
    "NumericalFailureError",
    "ProjectionSpec",
    "ShapeError",
    "UsageError",
    "brute_force_project",
    "project",
    "project_intersection",
    "project_l1_ball",
    "project_l2_ball",
    "project_lp_ball",
    "project_simplex",
]
