import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.linalg import sqrtm

from dpmix.errors import (AsymmetricCovariance, DimensionMismatch, InvalidMixture,
                          NotPositiveDefinite, SingularTransform)
from dpmix.metrics import tv_quadrature_1d
from dpmix.model import (affine_transform, dense_decompose, gaussian_create, gaussian_delta,
                         log_density, mixture_create, model_from_dict, model_to_dict, sample)

from conftest import random_mixture_1d


def test_standard_normal_factor(std_normal):
    assert np.array_equal(std_normal.chol, [[1.0]])


def test_isotropic_factor_is_sqrt_two():
    g = gaussian_create([0, 0], [[2, 0], [0, 2]])
    assert np.allclose(g.chol, [[math.sqrt(2), 0], [0, math.sqrt(2)]], atol=1e-15)
    assert np.allclose(g.chol, np.linalg.cholesky(np.array([[2.0, 0], [0, 2.0]])))


def test_indefinite_covariance_rejected():
    with pytest.raises(NotPositiveDefinite):
        gaussian_create([0, 0], [[1, 2], [2, 1]])


def test_asymmetric_covariance_rejected():
    with pytest.raises(AsymmetricCovariance):
        gaussian_create([0, 0], [[1, 0.5], [0.4, 1]])


def test_tiny_pivot_rejected():
    with pytest.raises(NotPositiveDefinite):
        gaussian_create([0, 0], [[1, 1], [1, 1 + 1e-14]])


def test_log_density_known_constants(std_normal):
    assert log_density(std_normal, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_density(std_normal, [1.0]) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5,
                                                           abs=1e-15)


def test_mixture_log_density_matches_direct_sum():
    m = mixture_create([0.5, 0.5], [gaussian_create([0], [[1]]), gaussian_create([10], [[1]])])
    direct = 0.5 * stats.norm.pdf(0, 0, 1) + 0.5 * stats.norm.pdf(0, 10, 1)
    assert log_density(m, [0.0]) == pytest.approx(math.log(direct), rel=1e-13)


def test_mixture_log_density_far_tail_is_finite():
    m = mixture_create([0.5, 0.5], [gaussian_create([0], [[1]]), gaussian_create([1], [[1]])])
    val = log_density(m, [60.0])
    assert np.isfinite(val)
    assert val == pytest.approx(math.log(0.5) + stats.norm.logpdf(60, 1, 1), rel=1e-12)


def test_log_density_matches_scipy_in_2d():
    rng = np.random.default_rng(3)
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    g = gaussian_create([1.0, -1.0], cov)
    x = rng.normal(size=(50, 2))
    ref = stats.multivariate_normal([1.0, -1.0], cov).logpdf(x)
    assert np.allclose(log_density(g, x), ref, atol=1e-12)


def test_log_density_dimension_mismatch():
    g = gaussian_create([0, 0], np.eye(2))
    with pytest.raises(DimensionMismatch):
        log_density(g, np.zeros((3, 3)))


@pytest.mark.parametrize("mu,var", [(0.0, 1.0), (3.0, 0.2), (-7.0, 9.0)])
def test_density_integrates_to_one(mu, var):
    g = gaussian_create([mu], [[var]])
    sd = math.sqrt(var)
    total, _ = integrate.quad(lambda x: math.exp(log_density(g, [x])), mu - 12 * sd,
                              mu + 12 * sd, epsabs=1e-10)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_density_integrates_to_one_2d_monte_carlo():
    g = gaussian_create([0.5, 0.0], [[1.0, 0.2], [0.2, 0.7]])
    rng = np.random.default_rng(0)
    box = rng.uniform(-8, 8, size=(400_000, 2))
    est = 256 * np.mean(np.exp(log_density(g, box)))
    assert est == pytest.approx(1.0, abs=0.02)


def test_sample_empty(std_normal):
    assert len(sample(std_normal, 0, 1)) == 0


def test_sample_moments(std_normal):
    x = sample(std_normal, 100_000, 7).points[:, 0]
    assert abs(x.mean()) <= 0.02
    assert abs(x.var(ddof=1) - 1) <= 0.05


def test_sample_mixture_hit_fraction():
    m = mixture_create([0.3, 0.7], [gaussian_create([-50], [[1]]), gaussian_create([50], [[1]])])
    x = sample(m, 100_000, 11).points[:, 0]
    assert abs(np.mean(x < 0) - 0.3) <= 0.01


def test_sample_deterministic_per_seed():
    m = mixture_create([0.3, 0.7], [gaussian_create([0], [[1]]), gaussian_create([4], [[2]])])
    a, b = sample(m, 500, 42), sample(m, 500, 42)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.seed == 42


def test_affine_identity(std_normal):
    g = gaussian_create([1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]])
    h = affine_transform(g, np.eye(2), np.zeros(2))
    assert np.array_equal(h.mean, g.mean) and np.array_equal(h.cov, g.cov)


def test_affine_maps_standard_to_target():
    mu = np.array([1.0, -2.0])
    sigma = np.array([[2.0, 0.6], [0.6, 1.0]])
    g = affine_transform(gaussian_create([0, 0], np.eye(2)), np.real(sqrtm(sigma)), mu)
    x = np.random.default_rng(5).normal(size=(100, 2)) * 2
    ref = stats.multivariate_normal(mu, sigma).logpdf(x)
    assert np.allclose(log_density(g, x), ref, atol=1e-10)


def test_affine_singular_rejected(std_normal):
    with pytest.raises(SingularTransform):
        affine_transform(gaussian_create([0, 0], np.eye(2)), [[1, 1], [1, 1]], [0, 0])


def test_affine_preserves_tv():
    rng = np.random.default_rng(8)
    for _ in range(5):
        g1 = gaussian_create([rng.normal()], [[rng.uniform(0.5, 2)]])
        g2 = gaussian_create([rng.normal()], [[rng.uniform(0.5, 2)]])
        a, b = rng.uniform(0.3, 3) * rng.choice([-1, 1]), rng.normal()
        before = tv_quadrature_1d(g1, g2)
        after = tv_quadrature_1d(affine_transform(g1, [[a]], [b]), affine_transform(g2, [[a]], [b]))
        assert after == pytest.approx(before, abs=1e-7)


def test_dense_decompose_all_heavy():
    m = mixture_create([0.5, 0.5], [gaussian_create([0], [[1]]), gaussian_create([3], [[1]])])
    dec = dense_decompose(m, 2, 0.2)
    assert dec.gamma == 0 and dec.residual is None
    assert model_to_dict(dec.dense_part) == model_to_dict(m)


def test_dense_decompose_example():
    comps = [gaussian_create([i], [[1]]) for i in range(3)]
    m = mixture_create([0.5, 0.45, 0.05], comps)
    dec = dense_decompose(m, 3, 0.3)
    assert dec.gamma == pytest.approx(0.05, abs=1e-15)
    assert np.allclose(dec.dense_part.weights, [0.5 / 0.95, 0.45 / 0.95], atol=1e-15)


def _recombined(m, dec):
    """Weights of gamma*residual + (1-gamma)*dense, keyed by component mean."""
    out = {}
    for w, c in zip(dec.dense_part.weights, dec.dense_part.components):
        out[float(c.mean[0])] = out.get(float(c.mean[0]), 0) + (1 - dec.gamma) * w
    if dec.residual is not None:
        for w, c in zip(dec.residual.weights, dec.residual.components):
            out[float(c.mean[0])] = out.get(float(c.mean[0]), 0) + dec.gamma * w
    return out


def test_dense_decompose_reconstruction_and_gamma_bound():
    rng = np.random.default_rng(12)
    for i in range(1000):
        k = int(rng.integers(1, 6))
        alpha = float(rng.uniform(0, 0.99))
        m = random_mixture_1d(rng, k)
        dec = dense_decompose(m, k, alpha)
        assert dec.gamma < alpha or (dec.gamma == 0 and alpha == 0)
        assert np.all(m.weights[m.weights >= alpha / k] >= alpha / k)
        if i < 100:
            rec = _recombined(m, dec)
            for w, c in zip(m.weights, m.components):
                assert rec[float(c.mean[0])] == pytest.approx(w, abs=1e-12)


def test_delta_examples(std_normal):
    assert gaussian_delta(std_normal, std_normal) == 0
    assert gaussian_delta(std_normal, gaussian_create([0.1], [[1]])) == pytest.approx(0.1, abs=1e-15)
    assert gaussian_delta(std_normal, gaussian_create([0.0], [[2]])) == pytest.approx(1.0, abs=1e-15)


def test_delta_matches_symmetric_square_root():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3))
        s1, s2 = a @ a.T + np.eye(3), b @ b.T + np.eye(3)
        m1, m2 = rng.normal(size=3), rng.normal(size=3)
        inv_half = np.linalg.inv(np.real(sqrtm(s1)))
        ref = max(np.linalg.norm(inv_half @ s2 @ inv_half - np.eye(3), "fro"),
                  np.linalg.norm(inv_half @ (m1 - m2)))
        assert gaussian_delta(gaussian_create(m1, s1), gaussian_create(m2, s2)) == \
            pytest.approx(ref, rel=1e-9)


def test_delta_dimension_mismatch(std_normal):
    with pytest.raises(DimensionMismatch):
        gaussian_delta(std_normal, gaussian_create([0, 0], np.eye(2)))


def test_model_json_round_trip():
    m = mixture_create([0.5, 0.5], [gaussian_create([-1], [[1]]), gaussian_create([2], [[0.5]])])
    d = model_to_dict(m)
    assert set(d) == {"weights", "components"}
    assert model_to_dict(model_from_dict(d)) == d


def test_single_gaussian_serialises_as_one_component(std_normal):
    d = model_to_dict(std_normal)
    assert d == {"weights": [1.0], "components": [{"mean": [0.0], "cov": [[1.0]]}]}


def test_weights_must_sum_to_one():
    with pytest.raises(InvalidMixture):
        mixture_create([0.5, 0.4], [gaussian_create([0], [[1]]), gaussian_create([1], [[1]])])


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-20, 20), logvar=st.floats(-3, 3), x=st.floats(-30, 30))
def test_log_density_agrees_with_scipy(mu, logvar, x):
    var = math.exp(logvar)
    g = gaussian_create([mu], [[var]])
    assert log_density(g, [x]) == pytest.approx(stats.norm.logpdf(x, mu, math.sqrt(var)),
                                                rel=1e-10, abs=1e-10)
