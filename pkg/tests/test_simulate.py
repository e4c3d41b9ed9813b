import numpy as np
import pytest

from wproj.errors import NonPSDCovarianceError
from wproj.projection import ProjectOptions
from wproj.simulate import (
    GaussianStudy,
    MixtureStudy,
    component_counts,
    covariance_factor,
    equicorrelated_factor,
    make_rng,
    run_study,
    sample_gaussians,
    sample_mixtures,
    subsample,
)


def test_rng_is_reproducible_and_streams_differ():
    a = make_rng(42).standard_normal(5)
    assert np.array_equal(a, make_rng(42).standard_normal(5))
    assert not np.array_equal(a, make_rng(42, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(43).standard_normal(5))
    with pytest.raises(ValueError):
        make_rng(-1)


def test_rng_uses_philox():
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


@pytest.mark.parametrize("d,rho,var", [(1, 0.8, 1.0), (10, 0.8, 1.0), (20, 0.8, 2.5), (5, -0.2, 1.0), (4, 0.0, 3.0)])
def test_equicorrelated_factor(d, rho, var):
    L = equicorrelated_factor(d, rho, var)
    target = var * ((1 - rho) * np.eye(d) + rho * np.ones((d, d)))
    assert np.allclose(L @ L.T, target, rtol=0, atol=1e-12 * max(1, d))
    assert np.array_equal(L, L.T)


def test_equicorrelated_not_psd():
    with pytest.raises(NonPSDCovarianceError):
        equicorrelated_factor(5, -0.5)
    with pytest.raises(NonPSDCovarianceError):
        equicorrelated_factor(3, 1.5)


def test_covariance_factor():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    L = covariance_factor(cov)
    assert np.allclose(L @ L.T, cov)
    with pytest.raises(NonPSDCovarianceError):
        covariance_factor([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NonPSDCovarianceError):
        covariance_factor([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(NonPSDCovarianceError):
        covariance_factor(np.eye(3)[:2])


def test_study_with_explicit_covariance():
    s = GaussianStudy(d=2, means=(0.0, 1.0), cov=[[1.0, 0.0], [0.0, 4.0]], n=20000, seed=1)
    target, control = sample_gaussians(s)
    assert np.allclose(np.cov(target.support.T), [[1, 0], [0, 4]], atol=0.15)
    assert np.allclose(control.mean(), 1.0, atol=0.05)
    with pytest.raises(NonPSDCovarianceError):
        GaussianStudy(d=3, cov=np.eye(2)).factor()


def test_gaussian_samples_shape_and_moments():
    ms = sample_gaussians(GaussianStudy(n=20000, seed=2))
    assert [m.n for m in ms] == [20000] * 4 and all(m.dim == 10 for m in ms)
    for m, mu in zip(ms, (10.0, 50.0, 200.0, -50.0)):
        assert np.abs(m.mean() - mu).max() < 0.05
    C = np.cov(ms[0].support.T)
    assert np.abs(np.diag(C) - 1).max() < 0.05
    assert np.abs(C[np.triu_indices(10, 1)] - 0.8).max() < 0.05


def test_sampling_is_deterministic():
    a = sample_mixtures(MixtureStudy(n=500, seed=9))
    b = sample_mixtures(MixtureStudy(n=500, seed=9))
    assert all(x.same_as(y) for x, y in zip(a, b))


def test_component_counts_exact():
    assert component_counts((0.3, 0.6, 0.1, 0.0), 10000).tolist() == [3000, 6000, 1000, 0]
    counts = component_counts((1 / 3, 1 / 3, 1 / 3), 10)
    assert counts.sum() == 10
    with pytest.raises(ValueError):
        component_counts((0.5, 0.6), 10)


def test_mixture_component_proportions():
    study = MixtureStudy(d=2, n=1000, seed=3, means=(0.0, 100.0), coefficients=((0.3, 0.7), (1.0, 0.0)))
    y0, y1 = sample_mixtures(study)
    high = y0.support[:, 0] > 50
    assert high.sum() == 700
    assert np.all(y1.support[:, 0] < 50)


def test_mixture_coefficient_length_checked():
    with pytest.raises(ValueError):
        sample_mixtures(MixtureStudy(n=10, coefficients=((0.5, 0.5),)))


def test_subsample():
    m = sample_gaussians(GaussianStudy(d=2, n=100, seed=4))[0]
    s = subsample(m, 30, make_rng(0))
    assert s.n == 30
    rows = {tuple(r) for r in m.support.tolist()}
    assert all(tuple(r) in rows for r in s.support.tolist())
    assert subsample(m, 200, make_rng(0)) is m


def test_run_study_mean_table():
    ms = sample_gaussians(GaussianStudy(d=3, n=400, seed=5))
    sr = run_study(ms, ProjectOptions())
    rows = sr.mean_table()
    assert [r["row"] for r in rows] == ["target", "weighted_controls"]
    assert set(rows[0]) == {"row", "1", "2", "3"}
    assert np.allclose(sr.weighted_mean, sr.result.lam @ np.array([m.mean() for m in ms[1:]]))
    assert np.abs(sr.weighted_mean - sr.target_mean).max() < 0.5


def test_run_study_fit_size():
    ms = sample_gaussians(GaussianStudy(d=3, n=400, seed=6))
    sr = run_study(ms, ProjectOptions(), fit_size=100, seed=6)
    assert sr.result.n0 == 100
    assert np.array_equal(sr.target_mean, ms[0].mean())


@pytest.mark.xfail(strict=True, reason="finite samples give a positive definite Gram matrix, so the minimizer is unique")
def test_equal_means_flagged_non_unique():
    ms = sample_gaussians(GaussianStudy(means=(10.0, 10.0, 10.0, 10.0), n=1000, seed=0))
    assert not run_study(ms, ProjectOptions()).result.unique


def test_equal_means_give_symmetric_weights():
    ms = sample_gaussians(GaussianStudy(means=(10.0, 10.0, 10.0, 10.0), n=1000, seed=0))
    res = run_study(ms, ProjectOptions()).result
    assert np.abs(res.lam - 1 / 3).max() < 0.1
    # residual is pure sampling noise: smaller than any single control's distance
    assert res.objective < res.per_control_w2.min()
