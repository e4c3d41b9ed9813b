"""Tangential Wasserstein projections of a target measure onto control measures."""

from .measures import DiscreteMeasure, from_samples, from_weighted, load_csv, load_image, pool
from .ot import TransportPlan, solve_entropic, solve_exact, w2_distance, wasserstein2
from .projection import ProjectOptions, ProjectionResult, project, solve_simplex_qp
from .tangent import TangentField, barycentric_projection, exp_map, hull_point

__all__ = [
    "DiscreteMeasure",
    "ProjectOptions",
    "ProjectionResult",
    "TangentField",
    "TransportPlan",
    "barycentric_projection",
    "exp_map",
    "from_samples",
    "from_weighted",
    "hull_point",
    "load_csv",
    "load_image",
    "pool",
    "project",
    "solve_entropic",
    "solve_exact",
    "solve_simplex_qp",
    "w2_distance",
    "wasserstein2",
]
