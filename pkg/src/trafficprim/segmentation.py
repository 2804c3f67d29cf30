"""Traffic-primitive segmentation with a weak-limit sticky HDP-HMM.

The sampler alternates four blocked Gibbs steps:

1. the whole state sequence, by backward message passing and forward sampling;
2. transition rows ``pi_j ~ Dir(alpha * beta + kappa * e_j + n_j)``;
3. global weights ``beta`` from auxiliary table counts, with the sticky
   override correction so self-transitions do not inflate ``beta``;
4. full-covariance Gaussian emissions from their Normal-Inverse-Wishart posterior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .errors import SegmentationError
from .scenario import ObservationMatrix, Scenario, featurize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StickyHdpHmmConfig:
    truncation_L: int = 20
    gamma: float = 1.0
    alpha: float = 1.0
    # kappa / (alpha + kappa) = 0.9
    kappa: float = 9.0
    iterations: int = 200
    seed: int = 0
    min_primitive_len: int = 2
    # NIW emission prior; None means data-driven (mean, 0.75 * covariance, dim + 2)
    kappa0: float = 0.1
    nu0: float | None = None
    mu0: tuple | None = None
    psi0: tuple | None = None
    scatter_scale: float = 0.75
    emission: str = "ar1"
    # AR(1) emissions: strong pull of A toward persistence, weak on the offset
    ar_precision: float = 100.0
    offset_precision: float = 1.0
    # initial over-segmentation into blocks of this many samples
    init_block_len: int = 30

    def validate(self, dim: int) -> None:
        if self.iterations < 1:
            raise SegmentationError("iterations must be >= 1")
        if self.truncation_L < 2:
            raise SegmentationError("truncation_L must be >= 2")
        if self.gamma <= 0 or self.alpha <= 0 or self.kappa < 0:
            raise SegmentationError("gamma, alpha must be > 0 and kappa >= 0")
        if self.emission not in EMISSIONS:
            raise SegmentationError(f"unknown emission model {self.emission!r}")
        if self.kappa0 <= 0 or self.ar_precision <= 0 or self.offset_precision <= 0:
            raise SegmentationError("kappa0 must be positive")
        if self.init_block_len < 1:
            raise SegmentationError("init_block_len must be >= 1")
        if self.min_primitive_len < 1:
            raise SegmentationError("min_primitive_len must be >= 1")
        nu0 = self.nu0 if self.nu0 is not None else dim + 2
        if not nu0 > dim - 1:
            raise SegmentationError(f"nu0={nu0} must exceed feature dimension - 1 = {dim - 1}")


@dataclass(frozen=True)
class SegmentationResult:
    labels: np.ndarray
    changepoints: tuple[int, ...]
    transition_matrix: np.ndarray
    emission_means: np.ndarray
    emission_covs: np.ndarray
    beta: np.ndarray
    log_likelihood_trace: np.ndarray
    raw_labels: np.ndarray = field(default=None)
    initial_distribution: np.ndarray = field(default=None)
    emission_dynamics: np.ndarray | None = None
    emission: str = "gaussian"

    @property
    def n_primitives(self) -> int:
        return len(self.changepoints) + 1

    def to_dict(self) -> dict:
        used = sorted(set(self.labels.tolist()))
        return {
            "labels": self.labels.tolist(),
            "raw_labels": None if self.raw_labels is None else self.raw_labels.tolist(),
            "changepoints": list(self.changepoints),
            "transition_matrix": self.transition_matrix.tolist(),
            "beta": self.beta.tolist(),
            "log_likelihood_trace": self.log_likelihood_trace.tolist(),
            "states": {
                str(k): {"mean": self.emission_means[k].tolist(), "cov": self.emission_covs[k].tolist()}
                for k in used
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationResult":
        labels = np.asarray(d["labels"], dtype=int)
        P = np.asarray(d["transition_matrix"], dtype=float)
        L = P.shape[0]
        states = d.get("states", {})
        dim = len(next(iter(states.values()))["mean"]) if states else 0
        means = np.zeros((L, dim))
        covs = np.tile(np.eye(dim), (L, 1, 1))
        for k, s in states.items():
            means[int(k)] = s["mean"]
            covs[int(k)] = s["cov"]
        raw = d.get("raw_labels")
        return cls(
            labels=labels,
            changepoints=tuple(int(c) for c in d["changepoints"]),
            transition_matrix=P,
            emission_means=means,
            emission_covs=covs,
            beta=np.asarray(d["beta"], dtype=float),
            log_likelihood_trace=np.asarray(d["log_likelihood_trace"], dtype=float),
            raw_labels=None if raw is None else np.asarray(raw, dtype=int),
        )


# ---------------------------------------------------------------- changepoints

def _runs(labels) -> list[list[int]]:
    runs: list[list[int]] = []
    for lab in labels:
        if runs and runs[-1][0] == lab:
            runs[-1][1] += 1
        else:
            runs.append([lab, 1])
    return runs


def prune_short_runs(labels, min_primitive_len: int) -> np.ndarray:
    """Absorb runs shorter than ``min_primitive_len`` into their longer neighbour.

    The leftmost short run is handled first; ties go to the preceding run.
    Adjacent runs that end up with the same label coalesce before the next pass.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return labels.copy()
    runs = _runs(labels.tolist())
    while len(runs) > 1:
        i = next((k for k, (_, n) in enumerate(runs) if n < min_primitive_len), None)
        if i is None:
            break
        if i == 0:
            target = 1
        elif i == len(runs) - 1:
            target = i - 1
        else:
            target = i - 1 if runs[i - 1][1] >= runs[i + 1][1] else i + 1
        runs[target][1] += runs[i][1]
        del runs[i]
        merged: list[list[int]] = []
        for lab, n in runs:
            if merged and merged[-1][0] == lab:
                merged[-1][1] += n
            else:
                merged.append([lab, n])
        runs = merged
    return np.repeat([lab for lab, _ in runs], [n for _, n in runs]).astype(labels.dtype)


def extract_changepoints(labels, min_primitive_len: int = 2) -> list[int]:
    pruned = prune_short_runs(labels, min_primitive_len)
    if pruned.size < 2:
        return []
    return (np.flatnonzero(pruned[1:] != pruned[:-1]) + 1).tolist()


# ---------------------------------------------------------------- samplers

def _log_dirichlet(rng: np.random.Generator, conc: np.ndarray) -> np.ndarray:
    """Log of a Dirichlet draw; stable for concentrations far below 1."""
    # floor keeps log(U) / a finite when a global weight underflows
    conc = np.maximum(np.asarray(conc, dtype=float), 1e-300)
    # Gamma(a) = Gamma(a + 1) * U^(1/a)
    g = np.log(rng.gamma(conc + 1.0)) + np.log(rng.random(conc.shape)) / conc
    return g - logsumexp(g)


def sample_dirichlet(rng: np.random.Generator, conc) -> np.ndarray:
    p = np.exp(_log_dirichlet(rng, np.asarray(conc, dtype=float)))
    return p / p.sum()


def sample_inverse_wishart(rng: np.random.Generator, dof: float, scale: np.ndarray) -> np.ndarray:
    """Bartlett draw of ``Sigma ~ IW(dof, scale)``."""
    d = scale.shape[0]
    prec = np.linalg.inv(scale)
    C = np.linalg.cholesky(0.5 * (prec + prec.T))
    A = np.tril(rng.standard_normal((d, d)), -1)
    A[np.diag_indices(d)] = np.sqrt(rng.chisquare(dof - np.arange(d)))
    M_inv = solve_triangular(C @ A, np.eye(d), lower=True)
    sigma = M_inv.T @ M_inv
    return 0.5 * (sigma + sigma.T)


class GaussianEmissions:
    """Full-covariance Gaussian per state under a Normal-Inverse-Wishart prior."""

    kind = "gaussian"

    def __init__(self, X: np.ndarray, L: int, cfg: StickyHdpHmmConfig):
        T, d = X.shape
        self.X = X
        self.mu0 = X.mean(axis=0) if cfg.mu0 is None else np.asarray(cfg.mu0, dtype=float)
        if cfg.psi0 is None:
            cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
            self.psi0 = cfg.scatter_scale * cov + 1e-6 * np.eye(d)
        else:
            self.psi0 = np.asarray(cfg.psi0, dtype=float)
        self.kappa0 = float(cfg.kappa0)
        self.nu0 = d + 2.0 if cfg.nu0 is None else float(cfg.nu0)
        self.means = np.zeros((L, d))
        self.covs = np.tile(np.eye(d), (L, 1, 1))

    def resample(self, rng: np.random.Generator, z: np.ndarray) -> None:
        for k in range(self.means.shape[0]):
            Xk = self.X[z == k]
            n = Xk.shape[0]
            kn = self.kappa0 + n
            if n:
                xbar = Xk.mean(axis=0)
                R = Xk - xbar
                dev = (xbar - self.mu0)[:, None]
                psin = self.psi0 + R.T @ R + (self.kappa0 * n / kn) * (dev @ dev.T)
                mun = (self.kappa0 * self.mu0 + n * xbar) / kn
            else:
                psin, mun = self.psi0, self.mu0
            sigma = sample_inverse_wishart(rng, self.nu0 + n, 0.5 * (psin + psin.T))
            self.covs[k] = sigma
            self.means[k] = mun + np.linalg.cholesky(sigma) @ rng.standard_normal(mun.size) / np.sqrt(kn)

    def loglik(self) -> np.ndarray:
        return _gaussian_loglik(self.X, self.means, self.covs)


class AutoregressiveEmissions:
    """Switching first-order linear dynamics ``s_t = A_k [s_{t-1}; 1] + e``.

    ``(A_k, Sigma_k)`` carry a Matrix-Normal-Inverse-Wishart prior centred on
    persistence (``A = [I | 0]``) with column precision ``ar_precision``, so
    an unused state drawn from the prior still predicts something plausible. The first sample has no
    predecessor and is scored as equally likely under every state.
    """

    kind = "ar1"

    def __init__(self, X: np.ndarray, L: int, cfg: StickyHdpHmmConfig):
        T, d = X.shape
        self.d = d
        self.Y = X[1:]
        self.R = np.column_stack([X[:-1], np.ones(T - 1)])
        if cfg.psi0 is None:
            cov = np.atleast_2d(np.cov(np.diff(X, axis=0), rowvar=False, bias=True))
            self.psi0 = cfg.scatter_scale * cov + 1e-6 * np.eye(d)
        else:
            self.psi0 = np.asarray(cfg.psi0, dtype=float)
        self.nu0 = d + 2.0 if cfg.nu0 is None else float(cfg.nu0)
        self.K0 = np.diag([cfg.ar_precision] * d + [cfg.offset_precision])
        self.M0 = np.eye(d, d + 1)
        self.dynamics = np.zeros((L, d, d + 1))
        self.covs = np.tile(np.eye(d), (L, 1, 1))

    @property
    def means(self) -> np.ndarray:
        return self.dynamics[:, :, -1]

    def resample(self, rng: np.random.Generator, z: np.ndarray) -> None:
        zt = z[1:]
        for k in range(self.dynamics.shape[0]):
            mask = zt == k
            Rk, Yk = self.R[mask], self.Y[mask]
            Sxx = Rk.T @ Rk + self.K0
            Syx = Yk.T @ Rk + self.M0 @ self.K0
            Syy = Yk.T @ Yk + self.M0 @ self.K0 @ self.M0.T
            Lxx = np.linalg.cholesky(Sxx)
            Mn = cho_solve((Lxx, True), Syx.T).T
            psin = self.psi0 + Syy - Mn @ Syx.T
            sigma = sample_inverse_wishart(rng, self.nu0 + Rk.shape[0], 0.5 * (psin + psin.T))
            # A = Mn + chol(Sigma) Z chol(Sxx^-1)^T, with chol(Sxx^-1)^T = Lxx^-1 rows
            Z = rng.standard_normal(Mn.shape)
            self.dynamics[k] = Mn + np.linalg.cholesky(sigma) @ solve_triangular(Lxx, Z.T, lower=True, trans="T").T
            self.covs[k] = sigma

    def loglik(self) -> np.ndarray:
        L = self.dynamics.shape[0]
        out = np.zeros((self.Y.shape[0] + 1, L))
        for k in range(L):
            resid = self.Y - self.R @ self.dynamics[k].T
            out[1:, k] = _gaussian_loglik(resid, np.zeros((1, self.d)), self.covs[k][None])[:, 0]
        return out


EMISSIONS = {"gaussian": GaussianEmissions, "ar1": AutoregressiveEmissions}


def _gaussian_loglik(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    T, d = X.shape
    out = np.empty((T, means.shape[0]))
    for k in range(means.shape[0]):
        Lc = np.linalg.cholesky(covs[k])
        z = solve_triangular(Lc, (X - means[k]).T, lower=True)
        out[:, k] = (-0.5 * np.sum(z * z, axis=0) - np.log(np.diag(Lc)).sum()
                     - 0.5 * d * np.log(2 * np.pi))
    return out


def _backward_messages(log_P: np.ndarray, loglik: np.ndarray) -> np.ndarray:
    T, L = loglik.shape
    P = np.exp(log_P)
    msgs = np.zeros((T, L))
    for t in range(T - 2, -1, -1):
        m = loglik[t + 1] + msgs[t + 1]
        top = m.max()
        with np.errstate(divide="ignore"):
            msgs[t] = np.log(P @ np.exp(m - top)) + top
    return msgs


def _categorical(rng: np.random.Generator, logp: np.ndarray) -> int:
    p = np.exp(logp - logp.max())
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))


def _sample_states(rng, log_pi0, log_P, loglik, msgs) -> np.ndarray:
    T = loglik.shape[0]
    z = np.empty(T, dtype=int)
    z[0] = _categorical(rng, log_pi0 + loglik[0] + msgs[0])
    for t in range(1, T):
        z[t] = _categorical(rng, log_P[z[t - 1]] + loglik[t] + msgs[t])
    return z


def _transition_counts(z: np.ndarray, L: int) -> np.ndarray:
    n = np.zeros((L, L))
    np.add.at(n, (z[:-1], z[1:]), 1)
    return n


def _sample_beta(rng, n, beta, cfg: StickyHdpHmmConfig) -> np.ndarray:
    L = n.shape[0]
    m = np.zeros_like(n)
    for j, k in zip(*np.nonzero(n)):
        ab = cfg.alpha * beta[k] + (cfg.kappa if j == k else 0.0)
        njk = int(n[j, k])
        m[j, k] = np.count_nonzero(rng.random(njk) < ab / (ab + np.arange(njk)))
    rho = cfg.kappa / (cfg.alpha + cfg.kappa)
    diag = np.diag(m).astype(int)
    w = rng.binomial(diag, rho / (rho + beta * (1.0 - rho)))
    m[np.diag_indices(L)] = diag - w
    return sample_dirichlet(rng, cfg.gamma / L + m.sum(axis=0))


def fit_sticky_hdphmm(obs, cfg: StickyHdpHmmConfig | None = None) -> SegmentationResult:
    """Run ``cfg.iterations`` blocked Gibbs sweeps and return the final sample."""
    cfg = cfg or StickyHdpHmmConfig()
    X = obs.values if isinstance(obs, ObservationMatrix) else np.asarray(obs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise SegmentationError("non-finite observations")
    T, d = X.shape
    if T < 4:
        raise SegmentationError(f"sequence too short (T={T}, need >= 4)")
    cfg.validate(d)

    L = cfg.truncation_L
    rng = np.random.default_rng(cfg.seed)
    emissions = EMISSIONS[cfg.emission](X, L, cfg)
    eye = np.eye(L)

    # over-segment into contiguous blocks and draw every parameter given them;
    # the sticky prior then merges blocks that share dynamics
    n_blocks = int(np.clip(T // cfg.init_block_len, 1, L))
    z = np.arange(T) * n_blocks // T
    beta = np.full(L, 1.0 / L)

    def resample_params(z, beta):
        n = _transition_counts(z, L)
        beta = _sample_beta(rng, n, beta, cfg)
        log_P = np.array([
            _log_dirichlet(rng, cfg.alpha * beta + cfg.kappa * eye[j] + n[j]) for j in range(L)
        ])
        log_pi0 = _log_dirichlet(rng, cfg.alpha * beta + eye[z[0]])
        emissions.resample(rng, z)
        return beta, log_P, log_pi0

    beta, log_P, log_pi0 = resample_params(z, beta)

    trace = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        loglik = emissions.loglik()
        msgs = _backward_messages(log_P, loglik)
        trace[it] = float(logsumexp(log_pi0 + loglik[0] + msgs[0]))
        z = _sample_states(rng, log_pi0, log_P, loglik, msgs)
        beta, log_P, log_pi0 = resample_params(z, beta)
        if log.isEnabledFor(logging.DEBUG) and (it + 1) % 50 == 0:
            log.debug("sweep %d: loglik %.3f, %d states used", it + 1, trace[it], len(np.unique(z)))

    P = np.exp(log_P)
    P /= P.sum(axis=1, keepdims=True)
    pruned = prune_short_runs(z, cfg.min_primitive_len)
    cps = np.flatnonzero(pruned[1:] != pruned[:-1]) + 1
    return SegmentationResult(
        labels=pruned,
        changepoints=tuple(int(c) for c in cps),
        transition_matrix=P,
        emission_means=emissions.means.copy(),
        emission_covs=emissions.covs.copy(),
        beta=beta,
        log_likelihood_trace=trace,
        raw_labels=z,
        initial_distribution=np.exp(log_pi0),
        emission_dynamics=getattr(emissions, "dynamics", None),
        emission=emissions.kind,
    )


def segment_scenario(scenario: Scenario, cfg: StickyHdpHmmConfig | None = None) -> SegmentationResult:
    return fit_sticky_hdphmm(featurize(scenario), cfg)


@dataclass(frozen=True)
class TransitionPriorSummary:
    mean_self: float
    mean_cross: float
    se_self: float
    se_cross: float


def prior_self_transition_check(alpha: float, kappa: float, L: int, n_draws: int = 10000,
                                seed: int = 0) -> TransitionPriorSummary:
    """Monte Carlo moments of a sticky transition row with uniform global weights.

    Rows are drawn from ``Dir(alpha / L + kappa * e_0)``; the analytic self mass
    is ``(alpha / L + kappa) / (alpha + kappa)``.
    """
    if n_draws < 1000:
        raise SegmentationError("n_draws must be >= 1000")
    rng = np.random.default_rng(seed)
    conc = np.full(L, alpha / L)
    conc[0] += kappa
    rows = np.array([sample_dirichlet(rng, conc) for _ in range(n_draws)])
    self_mass = rows[:, 0]
    cross = rows[:, 1:].mean(axis=1)
    return TransitionPriorSummary(
        mean_self=float(self_mass.mean()),
        mean_cross=float(cross.mean()),
        se_self=float(self_mass.std(ddof=1) / np.sqrt(n_draws)),
        se_cross=float(cross.std(ddof=1) / np.sqrt(n_draws)),
    )
