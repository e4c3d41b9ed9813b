"""Seeded Gaussian and Gaussian-mixture studies.

Random numbers come from ``numpy.random.Generator`` over a Philox bit
generator seeded through ``SeedSequence``.  Philox is counter based, so the
stream depends on the seed alone and is identical across platforms; normals
use numpy's ziggurat sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonPSDCovarianceError
from .measures import DiscreteMeasure, from_samples
from .projection import ProjectOptions, ProjectionResult, project

GAUSSIAN_MEANS = (10.0, 50.0, 200.0, -50.0)
MIXTURE_COEFFICIENTS = (
    (0.3, 0.6, 0.1, 0.0),
    (0.8, 0.1, 0.1, 0.0),
    (0.0, 0.2, 0.7, 0.1),
    (0.2, 0.0, 0.2, 0.6),
)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed``; extra integers select independent substreams."""
    if seed is None or int(seed) < 0:
        raise ValueError("a nonnegative integer seed is required")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=stream)))


def equicorrelated_factor(d: int, rho: float = 0.8, var: float = 1.0) -> np.ndarray:
    """Symmetric L with ``L @ L.T = var * ((1 - rho) I + rho 11')``.

    The matrix has eigenvalue var(1 - rho) on the sum-zero subspace and
    var(1 + rho(d - 1)) along the ones vector, so its square root is
    ``a I + c 11'`` in closed form.
    """
    lo = var * (1.0 - rho)
    hi = var * (1.0 + rho * (d - 1))
    if d < 1 or min(lo, hi) < 0 or var < 0:
        raise NonPSDCovarianceError(
            f"equicorrelated covariance with d={d}, rho={rho}, var={var} is not PSD"
        )
    a = math.sqrt(lo)
    c = (math.sqrt(hi) - a) / d
    return a * np.eye(d) + c * np.ones((d, d))


def covariance_factor(cov) -> np.ndarray:
    """Lower-triangular Cholesky factor; raises if ``cov`` is not positive definite."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NonPSDCovarianceError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise NonPSDCovarianceError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NonPSDCovarianceError("covariance is not positive definite") from exc


@dataclass
class GaussianStudy:
    """Target N(means[0] 1, S) and controls N(means[j] 1, S), j >= 1."""

    d: int = 10
    means: Sequence[float] = GAUSSIAN_MEANS
    rho: float = 0.8
    var: float = 1.0
    cov: list | None = None
    n: int = 10_000
    seed: int = 0

    def factor(self) -> np.ndarray:
        if self.cov is not None:
            L = covariance_factor(self.cov)
            if L.shape[0] != self.d:
                raise NonPSDCovarianceError(f"covariance is {L.shape[0]}-dimensional, d={self.d}")
            return L
        return equicorrelated_factor(self.d, self.rho, self.var)


@dataclass
class MixtureStudy(GaussianStudy):
    """Measures Y_j = sum_k c_jk X_k for the Gaussian components X_k."""

    d: int = 20
    coefficients: Sequence[Sequence[float]] = MIXTURE_COEFFICIENTS


def _gaussian(rng, mean: float, L: np.ndarray, n: int) -> np.ndarray:
    return mean + rng.standard_normal((n, L.shape[0])) @ L.T


def sample_gaussians(study: GaussianStudy) -> list[DiscreteMeasure]:
    """Target first, then the controls, drawn in that order from one stream."""
    rng = make_rng(study.seed)
    L = study.factor()
    return [from_samples(_gaussian(rng, m, L, study.n)) for m in study.means]


def component_counts(coef: Sequence[float], n: int) -> np.ndarray:
    """Exact component sizes: floor(c n), remainder to the largest coefficient."""
    c = np.asarray(coef, dtype=float)
    if np.any(c < 0) or not math.isclose(c.sum(), 1.0, abs_tol=1e-12):
        raise ValueError(f"mixture coefficients must be a probability vector, got {coef}")
    counts = np.floor(c * n).astype(int)
    counts[int(np.argmax(c))] += n - counts.sum()
    return counts


def sample_mixtures(study: MixtureStudy) -> list[DiscreteMeasure]:
    """One measure per coefficient row, components in exact proportions.

    Each row's points are drawn component by component and then shuffled,
    so the pooled sample has the stated mixing proportions exactly.
    """
    rng = make_rng(study.seed)
    L = study.factor()
    if any(len(row) != len(study.means) for row in study.coefficients):
        raise ValueError("each coefficient row needs one entry per component mean")
    out = []
    for row in study.coefficients:
        counts = component_counts(row, study.n)
        parts = [_gaussian(rng, m, L, k) for m, k in zip(study.means, counts) if k > 0]
        pts = np.concatenate(parts)
        out.append(from_samples(pts[rng.permutation(study.n)]))
    return out


def subsample(m: DiscreteMeasure, size: int, rng: np.random.Generator) -> DiscreteMeasure:
    """Uniform measure on ``size`` atoms drawn without replacement (uniform inputs)."""
    if size >= m.n:
        return m
    idx = np.sort(rng.choice(m.n, size=size, replace=False))
    return from_samples(m.support[idx])


@dataclass
class StudyResult:
    result: ProjectionResult
    target_mean: np.ndarray
    weighted_mean: np.ndarray
    control_means: np.ndarray = field(repr=False)

    def mean_table(self, columns: int | None = None) -> list[dict]:
        """Rows of per-coordinate means: target, then the weighted controls."""
        k = self.target_mean.size if columns is None else min(columns, self.target_mean.size)
        return [
            {"row": "target", **{str(i + 1): float(self.target_mean[i]) for i in range(k)}},
            {"row": "weighted_controls", **{str(i + 1): float(self.weighted_mean[i]) for i in range(k)}},
        ]


def run_study(
    measures: Sequence[DiscreteMeasure],
    options: ProjectOptions | None = None,
    *,
    fit_size: int | None = None,
    seed: int = 0,
) -> StudyResult:
    """Project measures[0] onto measures[1:] and tabulate coordinate means.

    ``fit_size`` subsamples every measure before the projection (for the
    exact solver at large n); the mean table always uses the full samples.
    """
    target, controls = measures[0], list(measures[1:])
    fit = list(measures)
    if fit_size is not None:
        rng = make_rng(seed, 1)
        fit = [subsample(m, fit_size, rng) for m in fit]
    res = project(fit[0], fit[1:], options)
    cm = np.array([c.mean() for c in controls])
    return StudyResult(res, target.mean(), res.lam @ cm, cm)
