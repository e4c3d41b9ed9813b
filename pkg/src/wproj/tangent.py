"""Tangent-space lift at a target measure P0.

A transport plan from P0 to a control P_j is collapsed to a map on the
atoms of P0 by taking conditional means (the barycentric projection).  The
map minus the identity is a vector field in L2(P0); pushing P0 along a
convex combination of such fields gives the points of the generalized
geodesic hull.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadWeightsError, BaseMismatchError, NonFiniteError, ZeroRowMassError
from .measures import DiscreteMeasure, check_simplex
from .ot import TransportPlan


@dataclass(frozen=True, eq=False)
class TangentField:
    """Values of a map b on the atoms of ``base`` and its displacement b - id."""

    base: DiscreteMeasure
    map_values: np.ndarray
    displacement: np.ndarray
    source_plan_method: str = "exact"

    def __post_init__(self):
        b = np.array(self.map_values, dtype=float)
        v = np.array(self.displacement, dtype=float)
        x = self.base.support
        if b.shape != x.shape or v.shape != x.shape:
            raise BaseMismatchError(
                f"field of shape {b.shape} does not live on a base of shape {x.shape}"
            )
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise NonFiniteError("tangent field has non-finite values")
        # b - (b - x) == x up to rounding of the subtraction
        slack = 4 * np.finfo(float).eps * np.maximum(np.abs(b), np.abs(x))
        if np.any(np.abs((b - v) - x) > slack):
            raise ValueError("map_values - displacement must reproduce the base support")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "map_values", b)
        object.__setattr__(self, "displacement", v)

    @classmethod
    def from_map(cls, base: DiscreteMeasure, map_values, method: str = "exact") -> "TangentField":
        b = np.asarray(map_values, dtype=float)
        if b.shape != base.support.shape:
            raise BaseMismatchError(
                f"map of shape {b.shape} does not live on a base of shape {base.support.shape}"
            )
        return cls(base, b, b - base.support, method)

    def sq_norm(self) -> float:
        """||b - id||^2 in L2(base)."""
        return l2_sq_norm(self.displacement, self.base.weights)


def l2_sq_norm(displacement: np.ndarray, weights: np.ndarray) -> float:
    return float(weights @ np.einsum("ij,ij->i", displacement, displacement))


def barycentric_projection(
    plan: TransportPlan, p0: DiscreteMeasure, pj: DiscreteMeasure
) -> TangentField:
    """Conditional mean of the plan given the source atom.

    ``b(x_i) = sum_k plan[i, k] y_k / sum_k plan[i, k]``.  When the plan is
    induced by a map (one target atom per row) this returns that map.
    """
    P = plan.coupling
    if P.shape != (p0.n, pj.n):
        raise BaseMismatchError(
            f"plan of shape {P.shape} does not couple {p0.n} x {pj.n} atoms"
        )
    if p0.dim != pj.dim:
        raise BaseMismatchError("measures live in different dimensions")
    mass = P.sum(axis=1)
    if np.any(mass <= 0):
        bad = np.flatnonzero(mass <= 0)
        raise ZeroRowMassError(f"plan has no mass on source atom(s) {bad[:10].tolist()}")
    b = (P @ pj.support) / mass[:, None]
    return TangentField.from_map(p0, b, plan.method)


def _check_base(p0: DiscreteMeasure, field: TangentField) -> None:
    if field.base is not p0 and not field.base.same_as(p0):
        raise BaseMismatchError("tangent field is based at a different measure")


def exp_map(p0: DiscreteMeasure, field: TangentField, t: float = 1.0) -> DiscreteMeasure:
    """Push ``p0`` along ``t`` times the field: atoms x_i -> x_i + t v_i.

    Only interpolation is supported, ``0 <= t <= 1``.  Weights are carried
    over unchanged; ``t = 0`` returns ``p0`` itself.
    """
    _check_base(p0, field)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0:
        return p0
    return DiscreteMeasure(p0.support + t * field.displacement, p0.weights)


def combine(fields: Sequence[TangentField], lam) -> np.ndarray:
    """sum_j lam_j v_j as an n0 x d array, summed in list order."""
    if not fields:
        raise ValueError("no tangent fields")
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(fields),):
        raise BadWeightsError(f"{lam.size} weights for {len(fields)} fields")
    out = np.zeros_like(fields[0].displacement)
    for w, f in zip(lam, fields):
        if w != 0:
            out += w * f.displacement
    return out


def hull_point(p0: DiscreteMeasure, fields: Sequence[TangentField], lam) -> DiscreteMeasure:
    """Push ``p0`` through x -> sum_j lam_j b_j(x) for simplex weights ``lam``.

    Computed as ``x + sum_j lam_j (b_j(x) - x)``, i.e. the exponential map of
    the combined displacement.
    """
    for f in fields:
        _check_base(p0, f)
    lam = check_simplex(lam, what="hull weights")
    return DiscreteMeasure(p0.support + combine(fields, lam), p0.weights)
