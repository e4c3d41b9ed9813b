"""Tangential projection of a target measure onto control measures.

The estimator solves

    min_{lam in simplex} || sum_j lam_j (b_j - id) ||^2_{L2(P0)}

where b_j is the barycentric projection of an optimal plan from P0 to the
j-th control.  Expanding the square turns this into ``lam' G lam`` with G the
Gram matrix of the displacement fields, a J x J quadratic program over the
simplex.  The projected measure is P0 pushed through ``sum_j lam_j b_j``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from . import ot as _ot
from .errors import BaseMismatchError, DimensionMismatchError, EmptyInputError, PartialFailureError
from .measures import DiscreteMeasure, check_simplex
from .tangent import TangentField, barycentric_projection, combine, hull_point, l2_sq_norm

logger = logging.getLogger(__name__)

QP_REL_TOL = 1e-9
UNIQUE_REL_TOL = 1e-10
DISPLAY_ZERO = 1e-6


@dataclass(frozen=True, eq=False)
class GramSystem:
    """``G[j, k] = sum_i w_i <s v_j(x_i), s v_k(x_i)>`` for displacements v_j.

    ``scale`` is the factor s applied to the displacements before assembly;
    the Gram matrix in original units is ``G / scale**2``.
    """

    G: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] < 1:
            raise ValueError(f"Gram matrix must be square and nonempty, got {G.shape}")
        if not np.all(np.isfinite(G)):
            raise ValueError("Gram matrix has non-finite entries")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @property
    def J(self) -> int:
        return self.G.shape[0]

    def unscaled(self) -> np.ndarray:
        return self.G / self.scale**2


def stabilizing_scale(fields: Sequence[TangentField]) -> float:
    """1 / max(1, max_j ||v_j||): keeps the largest displacement norm at most one."""
    top = max(math.sqrt(f.sq_norm()) for f in fields)
    return 1.0 / max(1.0, top)


def assemble_gram(fields: Sequence[TangentField], p0_weights=None, *, scale: float | None = None) -> GramSystem:
    """Gram matrix of the fields' displacements in L2(P0).

    ``scale=None`` applies :func:`stabilizing_scale`; pass ``scale=1.0`` for
    the raw matrix.  Entries are summed in a fixed order (numpy pairwise
    summation over atoms), so results are reproducible run to run.
    """
    fields = list(fields)
    if not fields:
        raise EmptyInputError("no tangent fields")
    base = fields[0].base
    for f in fields[1:]:
        if f.base is not base and not f.base.same_as(base):
            raise BaseMismatchError("tangent fields are based at different measures")
    w = base.weights if p0_weights is None else np.asarray(p0_weights, dtype=float)
    if w.shape != (base.n,):
        raise BaseMismatchError("weight vector does not match the base measure")
    s = stabilizing_scale(fields) if scale is None else float(scale)
    V = [s * f.displacement for f in fields]
    J = len(V)
    G = np.zeros((J, J))
    for j in range(J):
        for k in range(j, J):
            G[j, k] = G[k, j] = float(np.sum(w * np.einsum("ij,ij->i", V[j], V[k])))
    return GramSystem(G, s)


@dataclass(frozen=True, eq=False)
class QPSolution:
    lam: np.ndarray
    kkt_gap: float
    converged: bool
    iterations: int
    objective: float
    unique: bool = True

    def __iter__(self):
        # allows ``lam, gap = solve_simplex_qp(...)``-style unpacking of the essentials
        return iter((self.lam, self.kkt_gap))


def _affine_minimizer(G: np.ndarray, S: list[int]) -> np.ndarray:
    """argmin a' G_SS a subject to sum(a) = 1 (minimum-norm solution if not unique)."""
    m = len(S)
    if m == 1:
        return np.ones(1)
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = G[np.ix_(S, S)]
    A[:m, m] = 1.0
    A[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    try:
        sol = np.linalg.solve(A, rhs)
        if not np.all(np.isfinite(sol)) or np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    a = sol[:m]
    return a / a.sum()


def _corrective_step(G: np.ndarray, lam: np.ndarray, S: list[int]) -> tuple[np.ndarray, list[int]]:
    """Minimize over the face spanned by ``S``, dropping vertices that leave it.

    Wolfe's minor cycle: move toward the affine minimizer of the face until
    it is reached or a weight hits zero; drop zeros and repeat.
    """
    lam = lam.copy()
    S = list(S)
    while True:
        alpha = _affine_minimizer(G, S)
        cur = lam[S]
        if np.all(alpha > 0):
            lam[:] = 0.0
            lam[S] = alpha
            return lam, S
        neg = alpha <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(neg, cur / (cur - alpha), np.inf)
        theta = float(min(1.0, ratios.min()))
        new = cur + theta * (alpha - cur)
        hit = int(np.argmin(ratios))
        new[hit] = 0.0
        new[new <= 1e-15] = 0.0
        lam[:] = 0.0
        lam[S] = new
        S = [k for k in S if lam[k] > 0]
        lam[S] /= lam[S].sum()
        if len(S) == 1:
            return lam, S


def kkt_gap(G: np.ndarray, lam: np.ndarray) -> float:
    """lam' G lam - min_k (G lam)_k; zero certifies optimality over the simplex."""
    g = G @ lam
    return max(0.0, float(lam @ g - g.min()))


def solve_simplex_qp(
    gram: GramSystem | np.ndarray,
    tol: float | None = None,
    max_iter: int = 100_000,
) -> QPSolution:
    """Minimize ``lam' G lam`` over the probability simplex.

    Fully-corrective Frank-Wolfe: start at the barycenter, and at each
    iteration add the vertex with the smallest gradient entry (lowest index
    on ties) to the active set, then re-optimize exactly over the face of
    the active set, dropping vertices whose weight reaches zero (which also
    performs the away steps).  Stops when the KKT gap is at most ``tol``,
    default ``1e-9 * trace(G)``.

    ``unique`` is False when the set of minimizers has positive dimension,
    i.e. G is singular along a feasible direction of the optimal face.
    """
    G = gram.G if isinstance(gram, GramSystem) else np.asarray(gram, dtype=float)
    J = G.shape[0]
    tr = float(np.trace(G))
    if tol is None:
        tol = QP_REL_TOL * tr
    lam = np.full(J, 1.0 / J)
    S = list(range(J))
    lam, S = _corrective_step(G, lam, S)
    converged = False
    it = 0
    best = (float(lam @ G @ lam), lam.copy())
    for it in range(1, max_iter + 1):
        grad = G @ lam
        obj = float(lam @ grad)
        k = int(np.argmin(grad))
        if obj - grad[k] <= tol:
            converged = True
            break
        if k in S:
            # the face optimum is already exact; rounding keeps the gap open
            converged = obj - grad[k] <= max(tol, 1e-12 * max(tr, 1e-300))
            break
        S = sorted(S + [k])
        lam, S = _corrective_step(G, lam, S)
        val = float(lam @ G @ lam)
        if val < best[0]:
            best = (val, lam.copy())
        elif val > best[0] + 1e-15 * max(tr, 1.0):
            lam = best[1].copy()
            S = [j for j in range(J) if lam[j] > 0]
    else:
        lam = best[1]
    lam = np.maximum(lam, 0.0)
    lam /= lam.sum()
    gap = kkt_gap(G, lam)
    return QPSolution(
        lam, gap, converged or gap <= tol, it, max(0.0, float(lam @ G @ lam)),
        unique=_is_unique(G, lam, tol),
    )


def _is_unique(G: np.ndarray, lam: np.ndarray, tol: float) -> bool:
    """Whether ``lam`` is the only minimizer of lam' G lam on the simplex.

    All minimizers share G lam and are supported on the vertices T whose
    gradient attains the minimum.  The optimal set is lam + {z in N : lam + z
    >= 0} with N the null space of G_TT on sum-zero directions; it is a
    single point iff no coordinate of z can move, checked by small LPs.
    """
    J = G.shape[0]
    if J == 1:
        return True
    tr = float(np.trace(G))
    grad = G @ lam
    T = np.flatnonzero(grad <= grad.min() + max(tol, 1e-12 * tr))
    if T.size == 1:
        return True
    GT = G[np.ix_(T, T)]
    # orthonormal basis of {d : sum(d) = 0} in R^|T|
    Q = np.linalg.svd(np.ones((1, T.size)))[2][1:].T
    M = Q.T @ GT @ Q
    evals, evecs = np.linalg.eigh((M + M.T) / 2)
    thresh = UNIQUE_REL_TOL * max(tr, 1e-300) if tr > 0 else 0.0
    null = evecs[:, evals <= thresh]
    if null.shape[1] == 0:
        return True
    N = Q @ null  # directions in T coordinates
    lt = np.where(lam[T] > 1e-12, lam[T], 0.0)
    if np.all(lt > 0):
        return False
    r = N.shape[1]
    bounds = [(-1.0, 1.0)] * r
    for k in range(r):
        for sign in (1.0, -1.0):
            c = np.zeros(r)
            c[k] = -sign
            res = linprog(c, A_ub=-N, b_ub=lt, bounds=bounds, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                return False
    return True


@dataclass
class ProjectOptions:
    """Solver settings for :func:`project`.

    ``epsilon`` (absolute) wins over ``epsilon_scale``, which multiplies the
    median centered squared distance of each (target, control) pair.
    """

    method: str = "exact"
    epsilon: float | None = None
    epsilon_scale: float = _ot.DEFAULT_EPSILON_SCALE
    sinkhorn_tol: float = 1e-9
    sinkhorn_max_iter: int = 10_000
    sinkhorn_relaxation: float = 1.0
    sinkhorn_float32: bool = False
    qp_tol: float | None = None
    qp_max_iter: int = 100_000
    threads: int = 1
    size_budget: int = _ot.DEFAULT_SIZE_BUDGET
    stabilize: bool = True
    keep_plans: bool = False

    def __post_init__(self):
        if self.method not in ("exact", "entropic"):
            raise ValueError(f"unknown OT method {self.method!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass(eq=False)
class ProjectionResult:
    lam: np.ndarray
    objective: float
    projected: DiscreteMeasure
    kkt_gap: float
    per_control_w2: np.ndarray
    unique: bool
    converged: bool
    method: str
    gram: GramSystem
    fields: list[TangentField] = field(repr=False)
    plans: list | None = field(default=None, repr=False)
    ot_converged: bool = True

    @property
    def J(self) -> int:
        return self.lam.size

    @property
    def n0(self) -> int:
        return self.projected.n

    def display_weights(self) -> np.ndarray:
        """Weights with entries below 1e-6 shown as exact zeros."""
        return np.where(self.lam < DISPLAY_ZERO, 0.0, self.lam)

    def to_dict(self, seed=None) -> dict:
        return {
            "lambda": [float(x) for x in self.lam],
            "lambda_display": [float(x) for x in self.display_weights()],
            "objective": float(self.objective),
            "kkt_gap": float(self.kkt_gap),
            "unique": bool(self.unique),
            "converged": bool(self.converged),
            "per_control_w2": [float(x) for x in self.per_control_w2],
            "n0": int(self.n0),
            "J": int(self.J),
            "method": self.method,
            "seed": seed,
        }


def _entropic_kwargs(p0, pj, opts: ProjectOptions) -> dict:
    eps = opts.epsilon
    if eps is None:
        eps = _ot.default_epsilon(p0, pj, opts.epsilon_scale)
    return dict(
        epsilon=eps,
        max_iter=opts.sinkhorn_max_iter,
        tol=opts.sinkhorn_tol,
        relaxation=opts.sinkhorn_relaxation,
        dtype=np.float32 if opts.sinkhorn_float32 else np.float64,
        size_budget=opts.size_budget,
    )


def _lift_one(p0, pj, opts: ProjectOptions):
    """(field, plan or None, transport cost, converged) for one control."""
    if opts.method == "exact":
        plan = _ot.solve_exact(p0, pj, size_budget=opts.size_budget)
    elif opts.keep_plans:
        plan = _ot.solve_entropic(p0, pj, **_entropic_kwargs(p0, pj, opts))
    else:
        # the map is all we need; skip materializing the coupling
        m = _ot.entropic_map(p0, pj, **_entropic_kwargs(p0, pj, opts))
        return TangentField.from_map(p0, m.map_values, "entropic"), None, m.cost, m.converged
    fld = barycentric_projection(plan, p0, pj)
    return fld, (plan if opts.keep_plans else None), plan.cost, plan.converged


def lift(p0: DiscreteMeasure, controls: Sequence[DiscreteMeasure], options: ProjectOptions | None = None):
    """Solve OT from ``p0`` to every control and return ``(fields, plans_or_None, w2, ot_ok)``."""
    opts = options or ProjectOptions()
    controls = list(controls)
    if not controls:
        raise EmptyInputError("need at least one control measure")
    for j, c in enumerate(controls):
        if c.dim != p0.dim:
            raise DimensionMismatchError(f"control {j} has dimension {c.dim}, target has {p0.dim}")

    def work(j):
        try:
            fld, plan, cost, ok = _lift_one(p0, controls[j], opts)
        except Exception as exc:  # surfaced with the failing index
            raise PartialFailureError(j, exc) from exc
        return fld, plan, math.sqrt(max(cost, 0.0)), ok

    if opts.threads > 1 and len(controls) > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            out = list(pool.map(work, range(len(controls))))
    else:
        out = [work(j) for j in range(len(controls))]
    fields = [o[0] for o in out]
    plans = [o[1] for o in out] if opts.keep_plans else None
    w2 = np.array([o[2] for o in out])
    return fields, plans, w2, all(o[3] for o in out)


def project_fields(p0: DiscreteMeasure, fields: Sequence[TangentField], options: ProjectOptions | None = None):
    """Weights, KKT data and projected measure from precomputed tangent fields."""
    opts = options or ProjectOptions()
    gram = assemble_gram(fields, p0.weights, scale=None if opts.stabilize else 1.0)
    qp = solve_simplex_qp(gram, tol=opts.qp_tol, max_iter=opts.qp_max_iter)
    projected = hull_point(p0, fields, qp.lam)
    resid = combine(fields, qp.lam)
    objective = math.sqrt(l2_sq_norm(resid, p0.weights))
    return gram, qp, projected, objective


def project(
    p0: DiscreteMeasure,
    controls: Sequence[DiscreteMeasure],
    options: ProjectOptions | None = None,
) -> ProjectionResult:
    """Project ``p0`` onto the hull of ``controls`` in the tangent space at ``p0``.

    Returns the optimal simplex weights, the projected measure
    ``(sum_j lam_j b_j)_# p0``, the residual norm in original units, the
    KKT gap of the QP and the per-control transport distances (exact W2 for
    exact plans, the entropic plan's cost otherwise).
    """
    opts = options or ProjectOptions()
    fields, plans, w2, ot_ok = lift(p0, controls, opts)
    gram, qp, projected, objective = project_fields(p0, fields, opts)
    if not qp.converged:
        logger.warning("simplex QP stopped with KKT gap %.3g", qp.kkt_gap)
    return ProjectionResult(
        lam=qp.lam,
        objective=objective,
        projected=projected,
        kkt_gap=qp.kkt_gap / gram.scale**2,
        per_control_w2=w2,
        unique=qp.unique,
        converged=qp.converged,
        method=opts.method,
        gram=gram,
        fields=fields,
        plans=plans,
        ot_converged=ot_ok,
    )


@dataclass(frozen=True)
class VIReport:
    slacks: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slacks <= self.tol))

    @property
    def max_slack(self) -> float:
        return float(self.slacks.max())


def variational_inequality_check(
    p0: DiscreteMeasure, fields: Sequence[TangentField], lam, tol: float
) -> VIReport:
    """Check that f* = sum_j lam_j b_j is the metric projection of id.

    For each vertex f_j = b_j computes ``<id - f*, f_j - f*>`` in L2(P0)
    directly from the fields; by convexity all slacks <= 0 (within ``tol``)
    certifies optimality over the whole hull.
    """
    lam = check_simplex(lam, tol=1e-8, what="lambda")
    v_star = combine(fields, lam)  # f* - id
    w = p0.weights
    slacks = np.array(
        [float(np.sum(w * np.einsum("ij,ij->i", -v_star, f.displacement - v_star))) for f in fields]
    )
    return VIReport(slacks, float(tol))
