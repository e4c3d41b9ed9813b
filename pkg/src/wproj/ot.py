"""Optimal transport between two discrete measures under squared Euclidean cost.

Three solvers return a :class:`TransportPlan`:

* :func:`solve_exact` -- the discrete Kantorovich LP, solved by a network
  simplex (POT's ``emd``).
* :func:`solve_entropic` -- Sinkhorn iterations with log-domain absorption
  and epsilon-scaling.
* :func:`brute_force_assignment` -- enumeration over permutations, for tests.
"""

from __future__ import annotations

import itertools
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ApproximatePlanWarning,
    BadWeightsError,
    DimensionMismatchError,
    NotConvergedWarning,
    OracleSizeExceededError,
    SizeBudgetExceededError,
    ZeroRowMassError,
)
from .measures import DiscreteMeasure

DEFAULT_SIZE_BUDGET = 500_000_000
EXACT_MARGINAL_TOL = 1e-7
DEFAULT_EPSILON_SCALE = 0.05
ORACLE_MAX_N = 8


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling between a source (rows) and a target (columns) measure."""

    coupling: np.ndarray
    cost: float
    method: str
    marginal_residual: float
    epsilon: float | None = None
    converged: bool = True
    iterations: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.coupling.shape


def _ot_module():
    # POT probes every installed array backend on import; we only use numpy.
    for name in ("TORCH", "PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def _check_pair(a: DiscreteMeasure, b: DiscreteMeasure) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension {a.dim} vs {b.dim}")


def cost_matrix(a: DiscreteMeasure, b: DiscreteMeasure) -> np.ndarray:
    """Squared Euclidean distances, ``C[i, j] = |a_i - b_j|^2``.

    Computed coordinate by coordinate, so identical atoms give exact zeros.
    """
    _check_pair(a, b)
    x, y = a.support, b.support
    C = np.zeros((x.shape[0], y.shape[0]))
    for k in range(x.shape[1]):
        diff = np.subtract.outer(x[:, k], y[:, k])
        diff *= diff
        C += diff
    return C


def _marginal_residual(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max()))


def _plan_cost(P: np.ndarray, C: np.ndarray) -> float:
    return float(np.einsum("ij,ij->", P, C))


def _check_budget(a: DiscreteMeasure, b: DiscreteMeasure, budget: int) -> None:
    if a.n * b.n > budget:
        raise SizeBudgetExceededError(
            f"{a.n} x {b.n} cost matrix exceeds the budget of {budget} entries"
        )


def solve_exact(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    *,
    size_budget: int = DEFAULT_SIZE_BUDGET,
    max_iter: int = 1_000_000_000,
    cost: np.ndarray | None = None,
) -> TransportPlan:
    """Optimal plan of the discrete Kantorovich problem.

    Deterministic for a given input order.  Raises ``RuntimeError`` if the
    network simplex stops before optimality.
    """
    _check_pair(a, b)
    _check_budget(a, b, size_budget)
    C = cost_matrix(a, b) if cost is None else cost
    ot = _ot_module()
    # emd wants equal masses to machine precision; our weights are within 1e-9
    wa = a.weights / math.fsum(a.weights)
    wb = b.weights / math.fsum(b.weights)
    P, log = ot.emd(wa, wb, C, numItermax=max_iter, log=True)
    if log.get("result_code", 1) != 1:
        raise RuntimeError(f"network simplex did not reach optimality: {log.get('warning')}")
    P = np.asarray(P, dtype=float)
    resid = _marginal_residual(P, a.weights, b.weights)
    if resid > EXACT_MARGINAL_TOL:
        raise RuntimeError(f"exact plan violates marginals by {resid:.3g}")
    return TransportPlan(P, _plan_cost(P, C), "exact", resid)


def centered_cost_median(a: DiscreteMeasure, b: DiscreteMeasure, max_points: int = 2000) -> float:
    """Median squared distance after moving both measures to mean zero.

    Translating either measure changes the cost only by terms that depend on
    one index, so the optimal plan is unchanged; this median is therefore a
    translation-free length scale for the entropic parameter.  At most
    ``max_points`` evenly spaced atoms of each side are used.
    """
    xa = a.support - a.mean()
    xb = b.support - b.mean()
    sa = xa[np.linspace(0, a.n - 1, min(a.n, max_points)).astype(int)]
    sb = xb[np.linspace(0, b.n - 1, min(b.n, max_points)).astype(int)]
    C = cost_matrix(DiscreteMeasure(sa, np.full(len(sa), 1 / len(sa))),
                    DiscreteMeasure(sb, np.full(len(sb), 1 / len(sb))))
    return float(np.median(C))


def default_epsilon(a: DiscreteMeasure, b: DiscreteMeasure, scale: float = DEFAULT_EPSILON_SCALE) -> float:
    med = centered_cost_median(a, b)
    return scale * med if med > 0 else scale


_ROWS = 512


def _centered_cost(a: DiscreteMeasure, b: DiscreteMeasure, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Cost between the mean-centered supports, and the mean offset.

    |x - y|^2 and |(x - mx) - (y - my)|^2 differ by terms that depend on one
    index only, so both give the same entropic plan; the centered one has
    much smaller entries, which is what makes single precision usable.
    """
    shift = a.mean() - b.mean()
    x = (a.support - a.mean()).astype(dtype)
    y = (b.support - b.mean()).astype(dtype)
    C = np.empty((x.shape[0], y.shape[0]), dtype=dtype)
    for i in range(0, x.shape[0], _ROWS):
        block = C[i:i + _ROWS]
        block[...] = 0
        for k in range(x.shape[1]):
            diff = np.subtract.outer(x[i:i + _ROWS, k], y[:, k])
            diff *= diff
            block += diff
    return C, shift


def _kernel(C, f, g, eps, dtype, out=None):
    """exp((f_i + g_k - C_ik) / eps), built in place in ``dtype``."""
    K = np.subtract(C, f[:, None].astype(dtype), out=out, dtype=dtype)
    K -= g[None, :].astype(dtype)
    K *= dtype(-1.0 / eps)
    # subnormal entries slow BLAS down by an order of magnitude; flush them
    K[K < np.log(np.finfo(dtype).tiny)] = -np.inf
    np.exp(K, out=K)
    return K


def _chunked_dot(P: np.ndarray, C: np.ndarray) -> float:
    """sum(P * C) accumulated in double precision whatever C's dtype."""
    total = 0.0
    for i in range(0, P.shape[0], _ROWS):
        total += float(np.einsum("ij,ij->", P[i:i + _ROWS], C[i:i + _ROWS].astype(float)))
    return total


@dataclass
class _SinkhornState:
    C: np.ndarray
    shift: np.ndarray | None
    f: np.ndarray
    g: np.ndarray
    epsilon: float
    converged: bool
    iterations: int


def _scaling_update(u, Ku, w, relaxation):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if relaxation == 1.0:
            return w / Ku
        return u ** (1 - relaxation) * (w / Ku) ** relaxation


def _needs_absorb(u) -> bool:
    # e^30 keeps products with the kernel well inside single precision
    return bool(np.abs(np.log(u)).max() > 30.0)


def _absorb(C, f, g, u, v, eps, K, dtype):
    """Move the scalings into the potentials and rebuild the kernel."""
    f += eps * np.log(u)
    g += eps * np.log(v)
    return _kernel(C, f, g, eps, dtype, out=K), np.ones_like(u), np.ones_like(v)


def _rescue(C, f, g, v, u, w, eps, K, dtype, axis):
    """Exact log-domain update where the kernel mass underflowed to zero.

    For the bad rows (``axis=0``; columns with ``axis=1``, roles of f and g
    swapped) the potential is set by a log-sum-exp so that the marginal is
    matched exactly, the scaling reset to one and the kernel entries
    rebuilt.  Other entries keep the ordinary update.
    """
    bad_all = np.flatnonzero(~np.isfinite(u) | (u <= 0))
    logv = np.log(v)
    for s in range(0, bad_all.size, _ROWS):
        bad = bad_all[s:s + _ROWS]
        Cb = (C[bad] if axis == 0 else C[:, bad].T).astype(float)
        z = (f[bad, None] + g[None, :] + eps * logv[None, :] - Cb) / eps
        top = z.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(z - top).sum(axis=1))
        f[bad] += eps * (np.log(w[bad]) - lse)
        rows = _kernel(Cb, f[bad], g, eps, dtype)
        if axis == 0:
            K[bad] = rows
        else:
            K[:, bad] = rows.T
    u = u.copy()
    u[bad_all] = 1.0
    return u


def _sinkhorn(a, b, epsilon, max_iter, tol, epsilon_scaling, relaxation, dtype, size_budget, cost):
    _check_pair(a, b)
    _check_budget(a, b, size_budget)
    if not 0.0 < relaxation < 2.0:
        raise ValueError("relaxation must lie in (0, 2)")
    dtype = np.dtype(dtype).type
    if cost is None:
        C, shift = _centered_cost(a, b, dtype)
    else:
        C, shift = np.asarray(cost, dtype=dtype), None
    if epsilon is None:
        epsilon = default_epsilon(a, b)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    wa, wb = a.weights, b.weights

    # row/column reduction: potentials absorb the separable part of C
    f = C.min(axis=1).astype(float)
    g = np.full(C.shape[1], np.inf)
    for i in range(0, C.shape[0], _ROWS):
        g = np.minimum(g, (C[i:i + _ROWS] - f[i:i + _ROWS, None].astype(dtype)).min(axis=0))
    K = None
    if epsilon_scaling:
        si, sk = max(1, C.shape[0] // 2000), max(1, C.shape[1] // 2000)
        reduced = C[::si, ::sk] - f[::si, None] - g[None, ::sk]
        eps_k = max(epsilon, float(np.median(reduced)))
    else:
        eps_k = epsilon

    total = 0
    converged = False
    while True:
        final = eps_k <= epsilon
        stage_tol = tol if final else max(tol, 1e-3 * float(wa.min()))
        K = _kernel(C, f, g, eps_k, dtype, out=K)
        u = np.ones_like(wa)
        v = np.ones_like(wb)
        stage_converged = False
        for it in range(max_iter):
            Kv = (K @ v.astype(dtype)).astype(float)
            resid = float(np.abs(u * Kv - wa).max()) if it else math.inf
            if resid <= stage_tol:
                stage_converged = True
                break
            u = _scaling_update(u, Kv, wa, relaxation)
            if not np.all(np.isfinite(u) & (u > 0)):
                u = _rescue(C, f, g, v, u, wa, eps_k, K, dtype, axis=0)
            if _needs_absorb(u):
                K, u, v = _absorb(C, f, g, u, v, eps_k, K, dtype)
            KTu = (K.T @ u.astype(dtype)).astype(float)
            v = _scaling_update(v, KTu, wb, relaxation)
            if not np.all(np.isfinite(v) & (v > 0)):
                v = _rescue(C, g, f, u, v, wb, eps_k, K, dtype, axis=1)
            if _needs_absorb(v):
                K, u, v = _absorb(C, f, g, u, v, eps_k, K, dtype)
            total += 1
        f += eps_k * np.log(u)
        g += eps_k * np.log(v)
        if final:
            converged = stage_converged
            break
        eps_k = max(epsilon, eps_k / 4.0)
    return _SinkhornState(C, shift, f, g, float(epsilon), converged, total)


def _uncentered_cost(st: _SinkhornState, a, b, ra, rb, centered_cost: float) -> float:
    # undo the centering: the dropped terms are linear in the marginals of the plan
    if st.shift is None:
        return centered_cost
    xa = (a.support - a.mean()).T @ ra
    yb = (b.support - b.mean()).T @ rb
    return centered_cost + 2.0 * float((xa - yb) @ st.shift) + float(st.shift @ st.shift) * float(ra.sum())


def _warn_not_converged(st: _SinkhornState, max_iter: int, resid: float) -> None:
    if not st.converged:
        warnings.warn(
            f"Sinkhorn stopped after {max_iter} iterations with marginal residual {resid:.3g}",
            NotConvergedWarning,
            stacklevel=3,
        )


def solve_entropic(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    epsilon: float | None = None,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    *,
    epsilon_scaling: bool = True,
    relaxation: float = 1.0,
    dtype=np.float64,
    size_budget: int = DEFAULT_SIZE_BUDGET,
    cost: np.ndarray | None = None,
) -> TransportPlan:
    """Entropy-regularized plan via Sinkhorn scaling.

    The dual potentials ``f, g`` are kept in the log domain and the kernel is
    rebuilt from ``C - f - g`` whenever the scalings drift beyond ``e^{+-30}``,
    so nothing under- or overflows however small ``epsilon`` is.  With
    ``epsilon_scaling`` the regularization starts near the cost scale and
    is divided by four per stage down to ``epsilon``, warm-starting the
    potentials.  ``tol`` bounds the max absolute marginal deviation.

    ``relaxation`` in (0, 2) over-relaxes the scaling updates; values around
    1.5 cut the iteration count substantially at small ``epsilon``.
    ``dtype=np.float32`` halves memory traffic of the kernel products; the
    returned coupling is always double precision.

    If ``max_iter`` is reached (counted over the final stage), a
    :class:`NotConvergedWarning` is issued and the last iterate returned with
    ``converged=False``.  The reported ``cost`` is the unregularized cost of
    the returned coupling under the squared Euclidean cost.
    """
    st = _sinkhorn(a, b, epsilon, max_iter, tol, epsilon_scaling, relaxation, dtype, size_budget, cost)
    P = _kernel(st.C, st.f, st.g, st.epsilon, np.float64)
    # Sinkhorn's last half-step fixes the column marginals; report both
    resid = _marginal_residual(P, a.weights, b.weights)
    plan_cost = _uncentered_cost(st, a, b, P.sum(axis=1), P.sum(axis=0), _chunked_dot(P, st.C))
    _warn_not_converged(st, max_iter, resid)
    return TransportPlan(
        P, plan_cost, "entropic", resid,
        epsilon=st.epsilon, converged=st.converged, iterations=st.iterations,
    )


@dataclass(frozen=True, eq=False)
class EntropicMap:
    """Barycentric map of an entropic plan, without the plan itself."""

    map_values: np.ndarray
    row_mass: np.ndarray
    cost: float
    marginal_residual: float
    epsilon: float
    converged: bool
    iterations: int
    method: str = "entropic"


def entropic_map(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    epsilon: float | None = None,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    *,
    epsilon_scaling: bool = True,
    relaxation: float = 1.0,
    dtype=np.float64,
    size_budget: int = DEFAULT_SIZE_BUDGET,
) -> EntropicMap:
    """Same plan as :func:`solve_entropic`, reduced to its barycentric map.

    The double-precision coupling is formed a block of rows at a time and
    never held in full, which saves ``8 n m`` bytes for large problems.
    """
    st = _sinkhorn(a, b, epsilon, max_iter, tol, epsilon_scaling, relaxation, dtype, size_budget, None)
    y = b.support
    n = a.n
    bary = np.empty((n, y.shape[1]))
    ra = np.empty(n)
    rb = np.zeros(b.n)
    ccost = 0.0
    for i in range(0, n, _ROWS):
        rows = slice(i, i + _ROWS)
        P = _kernel(st.C[rows], st.f[rows], st.g, st.epsilon, np.float64)
        ra[rows] = P.sum(axis=1)
        rb += P.sum(axis=0)
        bary[rows] = P @ y
        ccost += float(np.einsum("ij,ij->", P, st.C[rows].astype(float)))
    resid = float(max(np.abs(ra - a.weights).max(), np.abs(rb - b.weights).max()))
    if np.any(ra <= 0):
        bad = np.flatnonzero(ra <= 0)
        raise ZeroRowMassError(f"plan has no mass on source atom(s) {bad[:10].tolist()}")
    bary /= ra[:, None]
    _warn_not_converged(st, max_iter, resid)
    return EntropicMap(
        bary, ra, _uncentered_cost(st, a, b, ra, rb, ccost), resid,
        st.epsilon, st.converged, st.iterations,
    )


def brute_force_assignment(a: DiscreteMeasure, b: DiscreteMeasure) -> TransportPlan:
    """Cheapest permutation coupling, by enumerating all n! permutations.

    Only for equal-size uniform measures with n <= 8.  When uniform weights
    are equal the LP has a permutation optimum, so this is an exact oracle.
    Ties go to the lexicographically first permutation.
    """
    _check_pair(a, b)
    n = a.n
    if b.n != n:
        raise OracleSizeExceededError("oracle needs equal numbers of atoms")
    if n > ORACLE_MAX_N:
        raise OracleSizeExceededError(f"oracle limited to n <= {ORACLE_MAX_N}, got {n}")
    for m in (a, b):
        if not np.allclose(m.weights, 1.0 / n, rtol=0, atol=1e-12):
            raise BadWeightsError("oracle needs uniform weights")
    C = cost_matrix(a, b)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = C[np.arange(n)[None, :], perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]
    P = np.zeros((n, n))
    P[np.arange(n), best] = 1.0 / n
    return TransportPlan(P, _plan_cost(P, C), "oracle", _marginal_residual(P, a.weights, b.weights))


def w2_distance(plan: TransportPlan) -> float:
    """Square root of the plan's transport cost.

    This is W2 only for an optimal plan; for an entropic plan it is an upper
    bound and an :class:`ApproximatePlanWarning` is issued.
    """
    if plan.method == "entropic":
        warnings.warn(
            "W2 from an entropic plan is an upper bound, not the distance",
            ApproximatePlanWarning,
            stacklevel=2,
        )
    return math.sqrt(max(plan.cost, 0.0))


def wasserstein2(a: DiscreteMeasure, b: DiscreteMeasure, **kwargs) -> float:
    """Exact W2 between two discrete measures."""
    return w2_distance(solve_exact(a, b, **kwargs))


def solve(a: DiscreteMeasure, b: DiscreteMeasure, method: str = "exact", **kwargs) -> TransportPlan:
    """Dispatch to :func:`solve_exact` or :func:`solve_entropic`."""
    if method == "exact":
        return solve_exact(a, b, **kwargs)
    if method == "entropic":
        return solve_entropic(a, b, **kwargs)
    raise ValueError(f"unknown OT method {method!r}")
