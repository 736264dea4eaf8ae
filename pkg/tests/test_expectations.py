"""Distributions, quadrature rules, and the Gaussian expectation operators."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import expit

from hdse.errors import ConfigError, NumericError
from hdse.expectations import (
    bernoulli_gaussian,
    expect_bivariate_gaussian,
    expect_gauss_1d,
    expect_noise_gaussian,
    expect_noise_sum,
    expect_noise_zweighted,
    expect_signal_gaussian,
    expect_signal_weighted,
    expect_zv,
    gauss_hermite,
    gaussian,
    point_mass,
    soft_threshold_moments,
    two_point,
)


# ---------------------------------------------------------------------------
# DistributionSpec


def test_second_moment_closed_forms():
    assert point_mass(3.0).second_moment() == 9.0
    assert gaussian(1.0, 2.0).second_moment() == 5.0
    assert two_point(2.0, 0.3).second_moment() == 4.0
    assert bernoulli_gaussian(0.1, 3.0).second_moment() == pytest.approx(0.9)


def test_sampling_mean_matches_analytic():
    rng = np.random.default_rng(42)
    n = 1_000_000
    for dist in (gaussian(0.5, 2.0), two_point(1.0, 0.7), bernoulli_gaussian(0.2, 1.5)):
        draws = dist.sample(rng, n)
        sd = np.sqrt(dist.variance())
        assert abs(np.mean(draws) - dist.mean()) < 5.0 * sd / 1e3
    assert np.all(point_mass(2.0).sample(rng, 100) == 2.0)


def test_distribution_validation():
    with pytest.raises(ConfigError):
        two_point(1.0, 1.5)
    with pytest.raises(ConfigError):
        gaussian(0.0, -1.0)
    with pytest.raises(ConfigError):
        bernoulli_gaussian(-0.1, 1.0)


# ---------------------------------------------------------------------------
# Quadrature rules


@pytest.mark.parametrize("order", [3, 21, 61, 121])
def test_hermite_rule_polynomial_exactness(order):
    rule = gauss_hermite(order)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.dot(rule.weights, rule.nodes) == pytest.approx(0.0, abs=1e-12)
    assert np.dot(rule.weights, rule.nodes**2) == pytest.approx(1.0, abs=1e-12)
    assert np.dot(rule.weights, rule.nodes**4) == pytest.approx(3.0, abs=1e-11)


def test_rules_are_cached():
    assert gauss_hermite(61) is gauss_hermite(61)


# ---------------------------------------------------------------------------
# Noise-pair expectations


RULE = gauss_hermite(61)


def test_noise_pair_examples():
    val = expect_noise_gaussian(lambda w, z: (w + 0.0 * z) ** 2, two_point(1.0, 0.5), 0.0, RULE)
    assert val == pytest.approx(1.0, abs=1e-12)
    val = expect_noise_gaussian(lambda w, z: z**4, two_point(1.0, 0.5), 0.0, RULE)
    assert val == pytest.approx(3.0, abs=1e-10)
    val = expect_noise_gaussian(lambda w, z: (w + z) ** 2, gaussian(0.0, 1.0), 1.0, RULE)
    assert val == pytest.approx(2.0, abs=1e-10)


def test_noise_sum_folding_matches_pair():
    # E[cos(W + tau Z)] = cos(mean) * exp(-(sd^2 + tau^2)/2), exactly
    mean, sd, tau = 0.2, 1.1, 0.8
    exact = np.cos(mean) * np.exp(-0.5 * (sd**2 + tau**2))
    folded = expect_noise_sum(np.cos, gaussian(mean, sd), tau, RULE)
    tensor = expect_noise_gaussian(lambda w, z: np.cos(w + tau * z),
                                   gaussian(mean, sd), tau, RULE)
    assert folded == pytest.approx(exact, abs=1e-12)
    assert tensor == pytest.approx(exact, abs=1e-12)
    sum_only = expect_noise_gaussian(lambda w, z: np.cos(w + tau * z), gaussian(mean, sd),
                                     tau, RULE, sum_only=True)
    assert sum_only == pytest.approx(folded, abs=1e-14)


def test_noise_must_not_be_bernoulli_gaussian():
    with pytest.raises(ConfigError):
        expect_noise_sum(lambda s: s, bernoulli_gaussian(0.1, 1.0), 1.0, RULE)


def test_zweighted_matches_direct_tensor():
    # E[Z cos(W + tau Z)] = -tau * E[sin(W + tau Z)] by the Gaussian identity;
    # both routes must agree with the tensor evaluation
    tau = 0.7
    for noise in (gaussian(0.0, 1.3), two_point(1.0, 0.4)):
        direct = expect_noise_gaussian(lambda w, z: z * np.cos(w + tau * z),
                                       noise, tau, RULE)
        reduced = expect_noise_zweighted(np.cos, noise, tau, RULE)
        assert reduced == pytest.approx(direct, abs=1e-10)
    exact = -tau * np.sin(0.0) * np.exp(-0.5 * (1.3**2 + tau**2))
    assert expect_noise_zweighted(np.cos, gaussian(0.0, 1.3), tau, RULE) == \
        pytest.approx(exact, abs=1e-12)


def test_kinked_integrand_uses_panels():
    # E[clip(S, -a, a)^2] for S ~ N(0, s^2): adaptive reference vs panel value
    a, s = 2.69, 1.2
    g = lambda x: np.clip(x, -a, a) ** 2
    ref = quad(lambda x: g(x) * np.exp(-0.5 * (x / s) ** 2) / (np.sqrt(2 * np.pi) * s),
               -15, 15, points=[-a, a], limit=200, epsabs=1e-14)[0]
    val = expect_gauss_1d(g, 0.0, s, RULE, kinks=(-a, a))
    assert val == pytest.approx(ref, abs=1e-12)
    # doubling the order moves the panel value by far less than 1e-9
    val2 = expect_gauss_1d(g, 0.0, s, gauss_hermite(122), kinks=(-a, a))
    assert abs(val - val2) < 1e-12


# ---------------------------------------------------------------------------
# Signal expectations


def test_signal_examples():
    sq = lambda s: s * s
    val = expect_signal_gaussian(sq, point_mass(0.0), 1.0, 1.0, RULE)
    assert val == pytest.approx(1.0, abs=1e-12)
    val = expect_signal_gaussian(lambda s: s, two_point(2.0, 0.5), 1.0, 1.0, RULE)
    assert val == pytest.approx(0.0, abs=1e-13)
    val = expect_signal_gaussian(sq, bernoulli_gaussian(0.1, 3.0), 1.0, 0.0, RULE)
    assert val == pytest.approx(0.9, abs=1e-12)


def test_signal_weighted_matches_monte_carlo_free_identity():
    # E[B * (theta B + gamma Z)] = theta E[B^2]
    prior = bernoulli_gaussian(0.3, 2.0)
    theta, gamma = 0.6, 0.9
    val = expect_signal_weighted(lambda s: s, prior, theta, gamma, RULE)
    assert val == pytest.approx(theta * prior.second_moment(), abs=1e-12)


# ---------------------------------------------------------------------------
# Bivariate expectations


def test_bivariate_examples():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert expect_bivariate_gaussian(lambda a, b: a * b, cov, RULE) == pytest.approx(0.5, abs=1e-10)
    cov2 = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert expect_bivariate_gaussian(lambda a, b: a * a, cov2, RULE) == pytest.approx(2.0, abs=1e-10)
    eye = np.eye(2)
    assert expect_bivariate_gaussian(lambda a, b: a * b, eye, RULE) == pytest.approx(0.0, abs=1e-12)


def test_bivariate_permutation_invariance():
    cov = np.array([[1.5, -0.4], [-0.4, 0.8]])
    f = lambda a, b: np.exp(-0.1 * a) * np.tanh(b)
    swapped = cov[::-1, ::-1]
    v1 = expect_bivariate_gaussian(f, cov, RULE)
    v2 = expect_bivariate_gaussian(lambda a, b: f(b, a), swapped, RULE)
    assert v1 == pytest.approx(v2, abs=1e-9)


def test_bivariate_rejects_indefinite():
    with pytest.raises(NumericError):
        expect_bivariate_gaussian(lambda a, b: a, np.array([[1.0, 2.0], [2.0, 1.0]]), RULE)


def test_bivariate_accepts_semidefinite_with_jitter():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    val = expect_bivariate_gaussian(lambda a, b: (a - b) ** 2, cov, RULE)
    assert val == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Tilted label-variable expectations


def test_zv_normalization_exact():
    assert expect_zv(lambda z, v: np.ones_like(z), 1.7, RULE) == pytest.approx(1.0, abs=1e-14)


def test_zv_reduces_to_gaussian_at_zero_tilt():
    assert expect_zv(lambda z, v: v * v, 0.0, RULE) == pytest.approx(1.0, abs=1e-12)


def test_zv_mean_of_v_against_adaptive_oracle():
    # oracle: integral of v * phi(v) * 2 sigmoid(2 v) by adaptive quadrature
    oracle = quad(lambda v: v * np.exp(-0.5 * v * v) / np.sqrt(2 * np.pi)
                  * 2.0 * expit(2.0 * v), -12, 12, epsabs=1e-13)[0]
    val = expect_zv(lambda z, v: v, 2.0, RULE)
    assert val == pytest.approx(oracle, abs=1e-8)
    assert val == pytest.approx(0.6057055, abs=1e-6)


def test_zv_function_of_z_only_matches_plain_gaussian():
    f = lambda z: np.cos(z)
    plain = float(np.dot(RULE.weights, f(RULE.nodes)))
    val = expect_zv(lambda z, v: f(z), 1.3, RULE)
    assert abs(val - plain) < 1e-12


# ---------------------------------------------------------------------------
# Closed-form soft-threshold moments


@pytest.mark.parametrize("mean,sd,thresh", [
    (0.0, 1.0, 0.5),
    (1.3, 0.7, 0.2),
    (-2.0, 2.5, 1.0),
    (0.4, 1.0, 0.0),
    (5.0, 0.3, 4.0),
])
def test_soft_threshold_moments_against_quadrature(mean, sd, thresh):
    from hdse.losses import soft_threshold

    rule = gauss_hermite(61)
    kinks = (-thresh, thresh)
    e1_q = expect_gauss_1d(lambda s: soft_threshold(s, thresh)[0], mean, sd, rule, kinks)
    e2_q = expect_gauss_1d(lambda s: soft_threshold(s, thresh)[0] ** 2, mean, sd, rule, kinks)
    es_q = expect_gauss_1d(lambda s: s * soft_threshold(s, thresh)[0], mean, sd, rule, kinks)
    ep_q = expect_gauss_1d(lambda s: soft_threshold(s, thresh)[1], mean, sd, rule, kinks)
    e1, e2, es, ep = soft_threshold_moments(mean, sd, thresh)
    assert e1 == pytest.approx(e1_q, abs=1e-11)
    assert e2 == pytest.approx(e2_q, abs=1e-11)
    assert es == pytest.approx(es_q, abs=1e-11)
    assert ep == pytest.approx(ep_q, abs=1e-11)


def test_soft_threshold_moments_zero_threshold():
    e1, e2, es, ep = soft_threshold_moments(0.7, 1.2, 0.0)
    assert e1 == pytest.approx(0.7, abs=1e-14)
    assert e2 == pytest.approx(0.7**2 + 1.2**2, abs=1e-13)
    assert ep == pytest.approx(1.0, abs=1e-14)
    assert es == pytest.approx(e2, abs=1e-13)
