from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficprim.errors import GpError
from trafficprim.gp import (GpHyperparams, fit_gp, fit_poly_prior, point_at_arc, poly_eval,
                            posterior, psd_factor, sample_posterior, sq_exp_kernel,
                            synthesize_training_points)

HP = GpHyperparams()


def dense_oracle(X, Y, Xs, hp, coeffs):
    """Condition the joint Gaussian directly with a general-purpose solve."""
    X, Y, Xs = (np.asarray(v, dtype=float) for v in (X, Y, Xs))
    k = lambda a, b: hp.sigma_f ** 2 * np.exp(-((a[:, None] - b[None, :]) ** 2) / (2 * hp.length_scale ** 2))
    A = k(X, X) + hp.sigma_n ** 2 * np.eye(len(X))
    Ks = k(Xs, X)
    mean = np.polyval(coeffs[::-1], Xs) + Ks @ np.linalg.solve(A, Y - np.polyval(coeffs[::-1], X))
    cov = k(Xs, Xs) - Ks @ np.linalg.solve(A, Ks.T)
    return mean, cov


def random_instance(rng):
    n = int(rng.integers(1, 51))
    m = int(rng.integers(1, 201))
    hp = GpHyperparams(sigma_f=float(rng.uniform(1, 20)), length_scale=float(rng.uniform(20, 200)),
                       sigma_n=float(rng.uniform(0.5, 3)))
    X = rng.choice(np.arange(0, 300), n, replace=False).astype(float)
    Y = rng.normal(0, 50, n) + 0.01 * X ** 2
    Xs = rng.uniform(-20, 320, m)
    return X, Y, Xs, hp


# ------------------------------------------------------------------ polynomial prior


def test_poly_prior_recovers_cubic():
    X = np.linspace(-3, 12, 9)
    c = np.array([2.0, -1.0, 0.5, 0.25])
    coeffs = fit_poly_prior(X, poly_eval(c, X))
    assert np.max(np.abs(poly_eval(coeffs, X) - poly_eval(c, X))) < 1e-8
    assert np.allclose(coeffs, c, atol=1e-9)


def test_poly_prior_constant():
    coeffs = fit_poly_prior([0, 1, 2, 5, 9], [4, 4, 4, 4, 4])
    assert np.allclose(coeffs, [4, 0, 0, 0], atol=1e-10)


def test_poly_prior_matches_normal_equations():
    rng = np.random.default_rng(2)
    X = np.sort(rng.uniform(0, 10, 50))
    Y = 3 - 0.7 * X + rng.normal(0, 0.3, 50)
    V = np.vander(X, 4, increasing=True)
    oracle = np.linalg.solve(V.T @ V, V.T @ Y)
    assert np.max(np.abs(fit_poly_prior(X, Y) - oracle)) < 1e-8


@pytest.mark.parametrize("X,Y", [([1, 2, 3], [1, 2, 3]), ([1, 1, 2, 2, 3], [0, 1, 2, 3, 4])])
def test_poly_prior_rejects_underdetermined(X, Y):
    with pytest.raises(GpError):
        fit_poly_prior(X, Y)


# ------------------------------------------------------------------ kernel


def test_kernel_values():
    assert sq_exp_kernel([3.0], [3.0], HP)[0, 0] == pytest.approx(100.0)
    assert sq_exp_kernel([0.0], [100.0], HP)[0, 0] == pytest.approx(100 * math.exp(-0.5))
    assert sq_exp_kernel([0.0], [1e5], HP)[0, 0] == 0.0


def test_hyperparams_positive():
    with pytest.raises(GpError):
        GpHyperparams(length_scale=0)
    with pytest.raises(GpError):
        GpHyperparams(sigma_n=float("nan"))


# ------------------------------------------------------------------ posterior


def test_empty_training_gives_prior():
    m = fit_gp([], [], HP)
    Xs = np.array([0.0, 50.0, 400.0])
    post = posterior(m, Xs)
    assert np.array_equal(post.mean, np.zeros(3))
    assert np.allclose(post.cov, sq_exp_kernel(Xs, Xs, HP), atol=1e-6)


def test_interpolation_limit():
    X = np.array([0.0, 30.0, 60.0, 90.0, 120.0])
    Y = np.array([1.0, 5.0, -2.0, 7.0, 3.0])
    m = fit_gp(X, Y, GpHyperparams(sigma_n=1e-6))
    assert np.max(np.abs(posterior(m, X).mean - Y)) < 1e-3


def test_matches_dense_oracle_five_points():
    rng = np.random.default_rng(7)
    X = np.sort(rng.uniform(0, 200, 5))
    Y = rng.normal(0, 20, 5)
    Xs = np.linspace(-50, 250, 60)
    m = fit_gp(X, Y, HP)
    post = posterior(m, Xs)
    mean, cov = dense_oracle(X, Y, Xs, HP, m.coeffs)
    assert np.max(np.abs(post.mean - mean)) < 1e-8
    assert np.max(np.abs(post.cov - cov)) < 1e-8 + post.jitter


def test_matches_dense_oracle_random():
    rng = np.random.default_rng(11)
    for _ in range(25):
        X, Y, Xs, hp = random_instance(rng)
        m = fit_gp(X, Y, hp)
        post = posterior(m, Xs)
        mean, cov = dense_oracle(X, Y, Xs, hp, m.coeffs)
        assert np.max(np.abs(post.mean - mean)) < 1e-8
        assert np.max(np.abs(post.cov - cov)) < 1e-8 + post.jitter


def test_zero_prior_reverts_to_zero():
    m = fit_gp([0.0, 10.0, 20.0], [50.0, 60.0, 55.0], HP, prior="zero")
    far = posterior(m, [5000.0])
    assert abs(far.mean[0]) < 1e-9
    assert far.cov[0, 0] == pytest.approx(100.0)


def test_per_point_noise_pins_endpoints():
    X = np.arange(11.0)
    Y = np.sin(X) * 10
    noise = np.ones(11)
    noise[[0, -1]] = 1e-5
    post = posterior(fit_gp(X, Y, HP, noise_std=noise), X)
    assert abs(post.mean[0] - Y[0]) < 1e-6 and abs(post.mean[-1] - Y[-1]) < 1e-6
    with pytest.raises(GpError):
        fit_gp(X, Y, HP, noise_std=0.0)


@given(st.integers(0, 2**31 - 1))
def test_posterior_covariance_properties(seed):
    rng = np.random.default_rng(seed)
    X, Y, Xs, hp = random_instance(rng)
    X, Y, Xs = X[:20], Y[:20], Xs[:40]
    m = fit_gp(X, Y, hp)
    post = posterior(m, Xs)
    assert np.array_equal(post.cov, post.cov.T)
    assert np.linalg.eigvalsh(post.cov).min() >= -1e-8
    assert np.all(np.diag(post.cov) <= hp.sigma_f ** 2 + post.jitter + 1e-9)
    # information monotonicity with a fixed mean prior
    more = fit_gp(np.append(X, 400.0), np.append(Y, 0.0), hp, prior="zero")
    less = fit_gp(X, Y, hp, prior="zero")
    assert np.all(np.diag(posterior(more, Xs).cov) <= np.diag(posterior(less, Xs).cov) + 1e-8)


# ------------------------------------------------------------------ sampling


def test_sampling_shapes_and_determinism():
    m = fit_gp([0.0, 50.0, 100.0, 150.0], [0.0, 10.0, 5.0, 20.0], HP)
    Xs = np.arange(0, 151, 10.0)
    assert sample_posterior(m, Xs, 0).shape == (0, len(Xs))
    a, b = sample_posterior(m, Xs, 4, seed=3), sample_posterior(m, Xs, 4, seed=3)
    assert a.shape == (4, len(Xs)) and np.array_equal(a, b)
    with pytest.raises(GpError):
        sample_posterior(m, Xs, -1)


def test_tiny_sigma_f_samples_equal_mean():
    hp = GpHyperparams(sigma_f=1e-9)
    m = fit_gp([0.0, 50.0, 100.0, 150.0], [0.0, 10.0, 5.0, 20.0], hp)
    Xs = np.arange(0, 151, 5.0)
    s = sample_posterior(m, Xs, 5, seed=0)
    assert np.max(np.abs(s - posterior(m, Xs).mean)) < 1e-6


def test_monte_carlo_moments():
    m = fit_gp([0.0, 40.0, 90.0], [3.0, -4.0, 8.0], HP)
    Xs = np.array([20.0, 60.0, 150.0])
    post = posterior(m, Xs)
    n = 10_000
    s = sample_posterior(m, Xs, n, seed=1)
    sd = np.sqrt(np.diag(post.cov))
    assert np.all(np.abs(s.mean(axis=0) - post.mean) < 3 * sd / math.sqrt(n))
    emp = np.cov(s.T)
    # standard error of a sample covariance entry
    se = np.sqrt((post.cov ** 2 + np.outer(sd ** 2, sd ** 2)) / (n - 1))
    assert np.all(np.abs(emp - post.cov) < 3 * se)


def test_psd_factor_reconstructs():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 3))
    C = A @ A.T
    F = psd_factor(C)
    assert np.allclose(F @ F.T, C, atol=1e-10)


# ------------------------------------------------------------------ training points


def test_training_points_quadratic_from_rest():
    tp = synthesize_training_points([[0, 0], [50, 0]], v_in=0.0, v_out=10.0, duration=10)
    assert np.allclose(tp.arc, 50 * (np.arange(11) / 10) ** 2)
    assert np.allclose(tp.xy[:, 0], tp.arc) and np.allclose(tp.xy[:, 1], 0)
    assert tp.arc[:4].tolist() == pytest.approx([0, 0.5, 2, 4.5])
    assert not tp.uniform_fallback


def test_training_points_uniform_when_consistent():
    tp = synthesize_training_points([[0, 0], [30, 40]], v_in=5.0, v_out=5.0, duration=10, t0=7)
    assert np.allclose(np.diff(tp.arc), 5.0)
    assert tp.times.tolist() == list(range(7, 18))
    assert np.array_equal(tp.xy[-1], (30, 40))


def test_training_points_fallback():
    tp = synthesize_training_points([[0, 0], [10, 0]], v_in=5.0, v_out=0.0, duration=10)
    assert tp.uniform_fallback
    assert np.allclose(tp.arc, np.linspace(0, 10, 11))


def test_training_points_arc_oracle():
    rng = np.random.default_rng(4)
    w = np.cumsum(rng.uniform(-20, 40, (6, 2)), axis=0) + 200
    tp = synthesize_training_points(w, v_in=3.0, v_out=4.0, duration=40)
    # brute-force arc length by fine subdivision of each piece
    fine = np.concatenate([np.linspace(a, b, 20001)[:-1] for a, b in zip(w[:-1], w[1:])] + [w[-1:]])
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(fine, axis=0), axis=1))])
    for s, p in zip(tp.arc, tp.xy):
        j = int(np.argmin(np.linalg.norm(fine - p, axis=1)))
        assert abs(cum[j] - s) < 1e-2  # grid resolution of the oracle
        assert np.linalg.norm(fine[j] - p) < 1e-2
    assert np.allclose(point_at_arc(w, tp.arc), tp.xy, atol=1e-9)
    assert np.array_equal(tp.xy[0], w[0]) and np.array_equal(tp.xy[-1], w[-1])


def test_training_points_errors():
    with pytest.raises(GpError):
        synthesize_training_points([[0, 0], [10, 0]], 1, 1, duration=1)
    with pytest.raises(GpError):
        synthesize_training_points([[5, 5], [5, 5]], 1, 1, duration=5)
