"""Gaussian-process regression with a cubic mean prior, plus training-point synthesis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import GpError

# diagonal jitter relative to the prior variance sigma_f^2 (1e-10 .. 1e-6 at sigma_f = 10)
JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


@dataclass(frozen=True)
class GpHyperparams:
    sigma_omega: float = 10.0
    sigma_f: float = 10.0
    length_scale: float = 100.0
    sigma_n: float = 1.0

    def __post_init__(self):
        for name in ("sigma_omega", "sigma_f", "length_scale", "sigma_n"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise GpError(f"{name} must be finite and > 0, got {v}")


def fit_poly_prior(X, Y, degree: int = 3) -> np.ndarray:
    """Least-squares polynomial coefficients, lowest order first."""
    X = np.asarray(X, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float).ravel()
    if X.shape != Y.shape:
        raise GpError("X and Y must have the same length")
    if degree < 0:
        raise GpError("degree must be >= 0")
    if len(X) < degree + 1:
        raise GpError(f"need at least {degree + 1} points for a degree-{degree} fit, got {len(X)}")
    if len(np.unique(X)) < degree + 1:
        raise GpError("rank-deficient design: too few distinct X values")
    # centre and scale for conditioning, then map coefficients back
    c = 0.5 * (X.max() + X.min())
    h = 0.5 * (X.max() - X.min()) or 1.0
    V = np.vander((X - c) / h, degree + 1, increasing=True)
    coef_u, *_ = np.linalg.lstsq(V, Y, rcond=None)
    # expand sum_k b_k ((x - c)/h)^k into powers of x
    out = np.zeros(degree + 1)
    basis = np.polynomial.polynomial
    for k, b in enumerate(coef_u):
        out[: k + 1] += b * basis.polypow([-c / h, 1.0 / h], k)[: k + 1]
    return out


def poly_eval(coeffs, X) -> np.ndarray:
    return np.polynomial.polynomial.polyval(np.asarray(X, dtype=float), np.asarray(coeffs, dtype=float))


def sq_exp_kernel(X1, X2, hp: GpHyperparams) -> np.ndarray:
    a = np.asarray(X1, dtype=float).ravel()
    b = np.asarray(X2, dtype=float).ravel()
    d = a[:, None] - b[None, :]
    return hp.sigma_f ** 2 * np.exp(-0.5 * (d / hp.length_scale) ** 2)


def _cholesky_with_jitter(A: np.ndarray, what: str, scale: float = 1.0):
    for rel in JITTER_LADDER:
        jitter = rel * scale
        try:
            return cho_factor(A + jitter * np.eye(len(A)), lower=True), jitter
        except LinAlgError:
            continue
    raise GpError(f"{what} is not positive definite even with jitter {JITTER_LADDER[-1] * scale:g}")


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray
    Y: np.ndarray
    coeffs: np.ndarray
    hp: GpHyperparams
    noise_var: np.ndarray
    alpha: np.ndarray
    _factor: tuple

    def prior_mean(self, X) -> np.ndarray:
        return poly_eval(self.coeffs, X)


def fit_gp(X, Y, hp: GpHyperparams | None = None, *, prior: str = "poly", degree: int = 3,
           noise_std=None) -> GpModel:
    """Condition a GP on ``(X, Y)``.

    ``prior`` is ``"poly"`` (least-squares polynomial mean of ``degree``) or
    ``"zero"``; with fewer than ``degree + 1`` distinct inputs the degree
    drops to what they determine. ``noise_std`` overrides ``hp.sigma_n`` per training point,
    which lets boundary points be pinned much harder than interior ones.
    """
    hp = hp or GpHyperparams()
    X = np.asarray(X, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float).ravel()
    if X.shape != Y.shape:
        raise GpError("X and Y must have the same length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise GpError("training data must be finite")
    if prior == "poly":
        # too few distinct inputs for the full degree: fit the highest one they support
        deg = min(degree, len(np.unique(X)) - 1)
        coeffs = fit_poly_prior(X, Y, deg) if len(X) else np.zeros(1)
    elif prior == "zero":
        coeffs = np.zeros(1)
    else:
        raise GpError(f"unknown prior {prior!r}")
    if noise_std is None:
        noise_var = np.full(len(X), hp.sigma_n ** 2)
    else:
        noise_var = np.broadcast_to(np.asarray(noise_std, dtype=float) ** 2, X.shape).copy()
        if np.any(noise_var <= 0):
            raise GpError("per-point noise std must be > 0")
    K = sq_exp_kernel(X, X, hp) + np.diag(noise_var)
    if len(X):
        factor, _ = _cholesky_with_jitter(K, "training Gram matrix", hp.sigma_f ** 2)
        alpha = cho_solve(factor, Y - poly_eval(coeffs, X))
    else:
        factor, alpha = (np.zeros((0, 0)), True), np.zeros(0)
    return GpModel(X, Y, coeffs, hp, noise_var, alpha, factor)


@dataclass(frozen=True)
class GpPosterior:
    mean: np.ndarray
    cov: np.ndarray
    jitter: float


def posterior(model: GpModel, X_star) -> GpPosterior:
    """Posterior mean and covariance at ``X_star``.

    The covariance is symmetrised and, if needed, given the smallest
    diagonal jitter from ``JITTER_LADDER`` (times sigma_f^2) that makes it factorisable.
    """
    Xs = np.asarray(X_star, dtype=float).ravel()
    mean = model.prior_mean(Xs)
    cov = sq_exp_kernel(Xs, Xs, model.hp)
    if len(model.X):
        Ks = sq_exp_kernel(Xs, model.X, model.hp)
        mean = mean + Ks @ model.alpha
        cov = cov - Ks @ cho_solve(model._factor, Ks.T)
    cov = 0.5 * (cov + cov.T)
    if len(Xs) == 0:
        return GpPosterior(mean, cov, 0.0)
    _, jitter = _cholesky_with_jitter(cov, "posterior covariance", model.hp.sigma_f ** 2)
    if jitter:
        cov = cov + jitter * np.eye(len(Xs))
    return GpPosterior(mean, cov, jitter)


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """``F`` with ``F @ F.T == cov`` up to clipping of round-off negative eigenvalues."""
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_posterior(model: GpModel, X_star, n_samples: int, seed=0) -> np.ndarray:
    """``(n_samples, len(X_star))`` draws from the posterior; deterministic under ``seed``."""
    if n_samples < 0:
        raise GpError("n_samples must be >= 0")
    post = posterior(model, X_star)
    m = len(post.mean)
    if n_samples == 0:
        return np.zeros((0, m))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Z = rng.standard_normal((n_samples, m))
    return post.mean + Z @ psd_factor(post.cov).T


# ---------------------------------------------------------------- training points

@dataclass(frozen=True)
class TrainingPoints:
    times: np.ndarray
    xy: np.ndarray
    arc: np.ndarray
    uniform_fallback: bool = False


def _cumulative_arc(waypoints: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at_arc(waypoints, s) -> np.ndarray:
    """Positions at arc lengths ``s`` along a polyline (linear between waypoints)."""
    w = np.asarray(waypoints, dtype=float)
    cum = _cumulative_arc(w)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    # skip zero-length pieces so interpolation is well defined
    keep = np.concatenate([[True], np.diff(cum) > 0])
    return np.column_stack([np.interp(s, cum[keep], w[keep, 0]), np.interp(s, cum[keep], w[keep, 1])])


def synthesize_training_points(path, v_in: float, v_out: float, duration: int, t0: int = 0) -> TrainingPoints:
    """One point per timestep along ``path`` under constant acceleration.

    ``a = 2 (s_total - v_in T) / T^2`` so that ``s(T) = s_total``; ``v_out``
    is implied by that choice and only reported by callers. If the implied
    motion would reverse (non-monotone ``s``), points are spaced uniformly
    instead and ``uniform_fallback`` is set.
    """
    w = np.asarray(getattr(path, "waypoints", path), dtype=float)
    if duration < 2:
        raise GpError("duration must be >= 2 timesteps")
    if w.ndim != 2 or w.shape[1] != 2 or len(w) < 2:
        raise GpError("path needs at least two 2-D waypoints")
    s_total = float(_cumulative_arc(w)[-1])
    if s_total <= 0:
        raise GpError("path has zero length")
    T = int(duration)
    t = np.arange(T + 1, dtype=float)
    a = 2.0 * (s_total - v_in * T) / T ** 2
    s = v_in * t + 0.5 * a * t ** 2
    fallback = bool(np.any(np.diff(s) < 0) or v_in < 0)
    if fallback:
        s = s_total * t / T
    s[-1] = s_total
    xy = point_at_arc(w, s)
    # land exactly on the path endpoints
    xy[0], xy[-1] = w[0], w[-1]
    return TrainingPoints(times=t.astype(int) + int(t0), xy=xy, arc=s, uniform_fallback=fallback)

