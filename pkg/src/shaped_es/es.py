"""Search-distribution machinery: antithetic sampling, fitness shaping and updates.

Perturbations are drawn from ``N(0, (alpha/n) I + ((1 - alpha)/k) U U^T)`` in
factored form, so the ``n x n`` covariance is never built. Members of a
population are ``mu +- sigma * eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import rankdata

ORTHO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SearchDistribution:
    mu: np.ndarray
    sigma: float
    alpha: float = 1.0
    basis: np.ndarray | None = None  # n x k, orthonormal columns

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be a finite 1-D vector")
        object.__setattr__(self, "mu", mu)
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        basis = self.basis
        if basis is None:
            basis = np.zeros((mu.size, 0))
        basis = np.asarray(basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[0] != mu.size:
            raise ValueError(f"basis must be n x k with n={mu.size}, got {basis.shape}")
        if basis.shape[1] > mu.size:
            raise ValueError("subspace dimension k cannot exceed n")
        if basis.shape[1] and not np.allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=ORTHO_TOL, rtol=0):
            raise ValueError("basis columns are not orthonormal")
        object.__setattr__(self, "basis", basis)

    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @property
    def effective_alpha(self) -> float:
        # An empty subspace leaves all variance to the isotropic term.
        return self.alpha if self.k else 1.0


@dataclass(frozen=True, eq=False)
class Population:
    eps: np.ndarray  # P x n
    members: np.ndarray  # 2P x n; rows P+i mirror rows i about mu
    generation: int = 0

    @property
    def num_pairs(self) -> int:
        return self.eps.shape[0]


def sample_perturbations(dist: SearchDistribution, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` rows from the guided Gaussian (without the sigma scale)."""
    n, k = dist.n, dist.k
    alpha = dist.effective_alpha
    z = rng.standard_normal((count, n))
    eps = np.sqrt(alpha / n) * z
    if k:
        w = rng.standard_normal((count, k))
        eps = eps + np.sqrt((1.0 - alpha) / k) * (w @ dist.basis.T)
    return eps


def sample_population(dist: SearchDistribution, num_pairs: int, rng: np.random.Generator, generation: int = 0) -> Population:
    if num_pairs < 1:
        raise ValueError("need at least one perturbation pair")
    eps = sample_perturbations(dist, num_pairs, rng)
    plus = dist.mu + dist.sigma * eps
    minus = dist.mu - dist.sigma * eps
    return Population(eps=eps, members=np.vstack([plus, minus]), generation=generation)


def rank_transform(raw) -> np.ndarray:
    """Map values to [-1, 1] by rank; ties share their averaged rank."""
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if raw.size == 0:
        raise ValueError("cannot rank an empty array")
    if raw.size == 1:
        return np.zeros(1)
    ranks = rankdata(raw, method="average")
    return 2.0 * (ranks - 1.0) / (raw.size - 1) - 1.0


def vanilla_es_update(mu, eps, f_plus, f_minus, gamma: float, beta: float, sigma: float) -> np.ndarray:
    """Antithetic ES step, ascending the fitness.

    ``mu + gamma * beta / (sigma**2 * 2P) * sum_i eps_i (F+_i - F-_i)`` with P the
    number of pairs actually supplied.
    """
    mu = np.asarray(mu, dtype=np.float64)
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    f_plus = np.asarray(f_plus, dtype=np.float64).ravel()
    f_minus = np.asarray(f_minus, dtype=np.float64).ravel()
    num_pairs = eps.shape[0]
    if f_plus.size != num_pairs or f_minus.size != num_pairs:
        raise ValueError(f"{num_pairs} perturbations but {f_plus.size}/{f_minus.size} fitness values")
    if eps.shape[1] != mu.size:
        raise ValueError("perturbation length does not match mu")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if num_pairs == 0:
        return mu.copy()
    direction = eps.T @ (f_plus - f_minus)
    return mu + gamma * beta / (sigma**2 * 2 * num_pairs) * direction


def orthogonalize(deltas, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (n x r) for the span of the non-zero columns of ``deltas``.

    Uses column-pivoted QR and keeps the numerically independent directions, so
    duplicate or dependent columns do not inflate the subspace. Returns an
    ``n x 0`` array when every column is zero.
    """
    d = np.asarray(deltas, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    if d.ndim != 2:
        raise ValueError("deltas must be an n x k matrix")
    norms = np.linalg.norm(d, axis=0)
    d = d[:, norms > 0.0]
    if d.shape[1] == 0:
        return np.zeros((d.shape[0], 0))
    q, r, _ = scipy.linalg.qr(d, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * diag[0]))
    return q[:, :rank]


def surrogate_gradients(theta_star, mu_next, eta: float) -> np.ndarray:
    """Columns ``(theta*_i - mu_next) / eta`` for an ``n x k`` matrix of refined parameters."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    theta_star = np.asarray(theta_star, dtype=np.float64)
    mu_next = np.asarray(mu_next, dtype=np.float64).ravel()
    if theta_star.ndim != 2 or theta_star.shape[0] != mu_next.size:
        raise ValueError(f"theta_star must be n x k with n={mu_next.size}, got {theta_star.shape}")
    return (theta_star - mu_next[:, None]) / eta


def cma_update(members, rewards, elite_fraction: float = 0.25, weight_decay: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Elite mean and covariance over the best members by weight-decayed reward."""
    members = np.atleast_2d(np.asarray(members, dtype=np.float64))
    rewards = np.asarray(rewards, dtype=np.float64).ravel()
    if members.shape[0] == 0 or members.size == 0:
        raise ValueError("empty population")
    if rewards.size != members.shape[0]:
        raise ValueError("one reward per member is required")
    if not 0.0 < elite_fraction <= 1.0:
        raise ValueError("elite_fraction must lie in (0, 1]")
    num_elite = max(1, int(round(elite_fraction * members.shape[0])))
    penalised = rewards - weight_decay * np.sum(members * members, axis=1)
    # Stable sort keeps ties in member order.
    order = np.argsort(-penalised, kind="stable")[:num_elite]
    elites = members[order]
    mu = elites.mean(axis=0)
    centred = elites - mu
    sigma = centred.T @ centred / num_elite
    return mu, sigma


@dataclass
class CmaState:
    """Mean and full covariance for the CMA-ES baseline, with a variance floor."""

    mu: np.ndarray
    cov: np.ndarray
    min_var: float = 0.0

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        n = self.mu.size
        cov = self.cov + self.min_var * np.eye(n)
        # Elite covariances are often rank deficient, so factor via eigh rather than Cholesky.
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        z = rng.standard_normal((count, n))
        return self.mu + z @ root.T

    def update(self, members, rewards, elite_fraction: float, weight_decay: float) -> None:
        self.mu, self.cov = cma_update(members, rewards, elite_fraction, weight_decay)
