import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from protshape import vmf
from protshape.curve import Rotation
from protshape.vmf import VmfParams


def mp_log_i(v, x):
    with mpmath.workdps(40):
        return float(mpmath.log(mpmath.besseli(v, x)))


# -- Bessel ----------------------------------------------------------------


def test_log_bessel_special_values():
    assert vmf.log_bessel_i(0, 0) == 0.0
    assert vmf.log_bessel_i(1.5, 0) == -math.inf
    # I_0(1) by its power series sum 1/(k!)^2 / 4^k
    series = math.log(sum(0.25**k / math.factorial(k) ** 2 for k in range(40)))
    assert abs(vmf.log_bessel_i(0, 1.0) - series) < 1e-14
    assert abs(vmf.log_bessel_i(0, 1.0) - 0.235914) < 1e-6
    x = 2.5
    closed = math.log(math.sqrt(2 / (math.pi * x)) * math.sinh(x))
    assert abs(vmf.log_bessel_i(0.5, x) - closed) < 1e-13


V_GRID = [0, 0.5, 1, 2.5, 7, 14.5, 15, 31, 80, 250]
X_GRID = [1e-8, 0.3, 5, 29.9, 30.1, 60, 150, 499, 2e3, 5e4, 1e6]


@pytest.mark.parametrize("v", V_GRID)
def test_log_bessel_against_mpmath(v):
    for x in X_GRID:
        ref = mp_log_i(v, x)
        got = vmf.log_bessel_i(v, x)
        assert abs(got - ref) <= 1e-10 * max(1.0, abs(ref)), (v, x, got, ref)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 300), st.floats(1e-3, 1e4))
def test_log_bessel_random_against_mpmath(v, x):
    ref = mp_log_i(v, x)
    assert abs(vmf.log_bessel_i(v, x) - ref) <= 1e-10 * max(1.0, abs(ref))


def test_log_bessel_continuity_across_regimes():
    # the series / asymptotic switch must not leave a visible seam
    for v in [0.0, 3.0, 20.0]:
        edge = max(30.0, 2 * v)
        lo, hi = vmf.log_bessel_i(v, edge - 1e-9), vmf.log_bessel_i(v, edge + 1e-9)
        assert abs(lo - hi) < 1e-8


# -- density ---------------------------------------------------------------


def test_log_density_closed_forms():
    mu = np.array([0.0, 0.0, 1.0])
    p = VmfParams(mu, 1.0)
    c3 = 1 / (4 * math.pi * math.sinh(1.0))
    assert abs(math.exp(vmf.log_normalizer(3, 1.0)) - c3) < 1e-15
    assert abs(vmf.log_density(mu, p) - (1 + math.log(c3))) < 1e-12
    # quoted reference value is truncated to five decimals (exact: -1.6924636...)
    assert abs(vmf.log_density(mu, p) + 1.69245) < 5e-5
    u = VmfParams(mu, 0.0)
    for z in np.eye(3):
        assert abs(vmf.log_density(z, u) + math.log(4 * math.pi)) < 1e-14
    with pytest.raises(vmf.NotUnit):
        vmf.log_density(2 * mu, p)


def test_params_validation():
    with pytest.raises(vmf.NotUnit):
        VmfParams(np.array([1.0, 1.0]), 1.0)
    with pytest.raises(vmf.VmfError):
        VmfParams(np.array([1.0]), 1.0)
    with pytest.raises(vmf.VmfError):
        VmfParams(np.array([1.0, 0.0]), -1.0)


def test_density_normalizes_monte_carlo():
    rng = np.random.default_rng(0)
    Z = vmf.sample_uniform_sphere(3, rng, 10**6)
    p = VmfParams(np.array([0.6, 0.0, 0.8]), 2.0)
    est = 4 * math.pi * np.mean(np.exp(vmf.log_density_batch(Z, p)))
    assert abs(est - 1) < 0.01


@pytest.mark.parametrize("m,kappa", [(2, 3.0), (5, 0.7), (16, 10.0), (64, 200.0)])
def test_density_normalizes_quadrature(m, kappa):
    # integrate the w-marginal C exp(kappa w)(1-w^2)^((m-3)/2) |S^{m-2}|
    logc = vmf.log_normalizer(m, kappa) + vmf.log_sphere_area(m - 1)
    f = lambda w: math.exp(logc + kappa * w + 0.5 * (m - 3) * math.log1p(-w * w))
    total, _ = integrate.quad(f, -1, 1, limit=200, points=[1 - 10 / kappa] if kappa > 20 else None)
    assert abs(total - 1) < 1e-7


def test_density_maximized_at_mu(rng):
    mu = rng.standard_normal(6)
    mu /= np.linalg.norm(mu)
    p = VmfParams(mu, 3.0)
    Z = vmf.sample_uniform_sphere(6, rng, 1000)
    assert np.all(vmf.log_density_batch(Z, p) <= vmf.log_density(mu, p))


# -- mean resultant and KL -------------------------------------------------


def test_mean_resultant_length():
    assert vmf.mean_resultant_length(5, 0.0) == 0.0
    assert abs(vmf.mean_resultant_length(3, 1.0) - (1 / math.tanh(1) - 1)) < 1e-14
    a = vmf.mean_resultant_length(8, 100.0)
    assert 0.95 <= a < 1
    assert abs(a - (1 - 7 / 200)) < 2e-3
    ks = np.linspace(0.01, 500, 300)
    vals = [vmf.mean_resultant_length(16, k) for k in ks]
    assert np.all(np.diff(vals) > 0) and max(vals) < 1


def test_kl_properties():
    assert vmf.kl_to_uniform(7, 0.0) == 0.0
    assert vmf.kl_to_uniform(16, 5.0) > vmf.kl_to_uniform(16, 1.0) > 0


def test_kl_monte_carlo():
    rng = np.random.default_rng(1)
    p = VmfParams(np.array([1.0, 0.0, 0.0]), 2.0)
    Z = vmf.sample(p, rng, size=10**6)
    mc = np.mean(vmf.log_density_batch(Z, p)) + math.log(4 * math.pi)
    assert abs(vmf.kl_to_uniform(3, 2.0) - mc) < 0.01 * mc


# -- sampling --------------------------------------------------------------


def test_uniform_w_ks():
    w = vmf.sample_w(3, 0.0, np.random.default_rng(2), size=10**5)
    res = stats.kstest(w, stats.uniform(loc=-1, scale=2).cdf)
    assert res.statistic < 0.01
    assert res.pvalue > 0.01


@pytest.mark.parametrize("m,kappa", [(3, 1.0), (8, 4.0), (16, 10.0)])
def test_w_mean_matches_bessel_ratio(m, kappa):
    w = vmf.sample_w(m, kappa, np.random.default_rng(m), size=10**5)
    se = w.std(ddof=1) / math.sqrt(len(w))
    assert abs(w.mean() - vmf.mean_resultant_length(m, kappa)) < 3 * se


@pytest.mark.parametrize("m,kappa", [(3, 2.0), (10, 25.0)])
def test_w_histogram_chi_square(m, kappa):
    w = vmf.sample_w(m, kappa, np.random.default_rng(5), size=10**5)
    logc = vmf.log_normalizer(m, kappa) + vmf.log_sphere_area(m - 1)
    dens = lambda t: math.exp(logc + kappa * t + 0.5 * (m - 3) * math.log1p(-t * t))
    edges = np.quantile(w, np.linspace(0, 1, 31))
    edges[0], edges[-1] = -1.0, 1.0
    probs = np.array([integrate.quad(dens, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    counts, _ = np.histogram(w, edges)
    expected = probs / probs.sum() * len(w)
    chi = stats.chisquare(counts, expected)
    assert chi.pvalue > 0.001


def test_tangent_vectors(rng):
    for m in (2, 3, 9):
        mu = rng.standard_normal(m)
        mu /= np.linalg.norm(mu)
        V = vmf.sample_tangent(mu, rng, size=500)
        assert np.max(np.abs(V @ mu)) < 1e-9
        assert np.max(np.abs(np.linalg.norm(V, axis=1) - 1)) < 1e-9


def test_tangent_m2_signs():
    mu = np.array([0.6, 0.8])
    V = vmf.sample_tangent(mu, np.random.default_rng(3), size=10**4)
    perp = np.array([-0.8, 0.6])
    s = V @ perp
    assert np.allclose(np.abs(s), 1)
    assert abs(np.mean(s > 0) - 0.5) < 0.02


def test_tangent_covariance():
    m = 5
    rng = np.random.default_rng(4)
    mu = rng.standard_normal(m)
    mu /= np.linalg.norm(mu)
    V = vmf.sample_tangent(mu, rng, size=10**5)
    cov = V.T @ V / len(V)
    target = (np.eye(m) - np.outer(mu, mu)) / (m - 1)
    assert np.max(np.abs(cov - target)) < 0.02 * np.max(np.abs(target))


def test_samples_unit_norm_and_aligned():
    rng = np.random.default_rng(6)
    for m, kappa in [(3, 5.0), (16, 5.0), (16, 50.0)]:
        mu = rng.standard_normal(m)
        mu /= np.linalg.norm(mu)
        Z = vmf.sample(VmfParams(mu, kappa), rng, size=10**5)
        assert np.max(np.abs(np.linalg.norm(Z, axis=1) - 1)) < 1e-9
        mean = Z.mean(axis=0)
        assert mean @ mu / np.linalg.norm(mean) > 0.99


def test_concentrated_and_uniform_limits():
    rng = np.random.default_rng(7)
    mu = np.array([0.0, 1.0, 0.0])
    Z = vmf.sample(VmfParams(mu, 1e6), rng, size=1000)
    assert np.mean(Z @ mu) > 0.999
    U = vmf.sample(VmfParams(mu, 0.0), rng, size=10**5)
    assert np.linalg.norm(U.mean(axis=0)) < 0.02
    Z = vmf.sample(VmfParams(mu, 1.0), rng, size=10**5)
    w = Z @ mu
    assert abs(w.mean() - 0.31304) < 3 * w.std(ddof=1) / math.sqrt(len(w)) + 1e-5


def test_single_draws_and_errors(rng):
    p = VmfParams(np.array([1.0, 0.0, 0.0]), 3.0)
    z = vmf.sample(p, rng)
    assert z.shape == (3,)
    assert isinstance(vmf.sample_w(3, 2.0, rng), float)
    with pytest.raises(vmf.VmfError):
        vmf.sample_w(1, 1.0, rng)


def test_rotational_equivariance():
    rng = np.random.default_rng(8)
    mu = np.array([0.0, 0.0, 1.0])
    R = Rotation.random(rng).matrix
    kappa = 3.0
    a = vmf.sample(VmfParams(mu, kappa), rng, size=20000) @ R.T
    b = vmf.sample(VmfParams(R @ mu, kappa), rng, size=20000)
    # compare projections on a fixed direction and on the rotated mean
    for d in [R @ mu, np.array([1.0, 0.0, 0.0])]:
        assert stats.ks_2samp(a @ d, b @ d).pvalue > 0.001
