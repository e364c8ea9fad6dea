"""Diagonal Gaussian mixtures fitted by EM, and Fisher vector encoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..errors import ContractError, DimensionError

VAR_FLOOR = 1e-4


@dataclass
class GmmModel:
    weights: np.ndarray  # K
    means: np.ndarray  # K x D
    variances: np.ndarray  # K x D
    history: list[float] = field(default_factory=list)  # mean log-likelihood per EM iteration

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_joint(self, x: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x_n | mu_k, diag(var_k))``, shape N x K."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"descriptors of shape {x.shape} for a {self.dim}-d mixture")
        inv = 1.0 / self.variances
        quad = (x ** 2) @ inv.T - 2.0 * x @ (self.means * inv).T + (self.means ** 2 * inv).sum(1)
        logdet = np.log(self.variances).sum(axis=1)
        return np.log(self.weights) - 0.5 * (quad + logdet + self.dim * np.log(2 * np.pi))

    def posteriors(self, x) -> tuple[np.ndarray, np.ndarray]:
        lj = self.log_joint(x)
        lse = logsumexp(lj, axis=1)
        return np.exp(lj - lse[:, None]), lse

    def log_likelihood(self, x) -> float:
        return float(self.posteriors(x)[1].sum())


def _kmeans_seed(x: np.ndarray, k: int, rng: np.random.Generator, iterations: int = 10):
    # k-means++ seeding followed by a few Lloyd steps
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    centers = np.array(centers)
    for _ in range(iterations):
        dist = (x ** 2).sum(1)[:, None] - 2 * x @ centers.T + (centers ** 2).sum(1)
        assign = dist.argmin(axis=1)
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers, assign


def gmm_fit(descriptors, k: int, iterations: int = 30, seed: int = 0,
            var_floor: float = VAR_FLOOR) -> GmmModel:
    """EM for a ``k``-component diagonal mixture, seeded by k-means.

    ``history`` records the mean log-likelihood of the parameters entering
    each iteration plus the final one; the floor on variances keeps the
    M-step a constrained maximizer, so the sequence does not decrease.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"descriptors must be N x D, got {x.shape}")
    n, d = x.shape
    if n < k:
        raise ContractError(f"need at least {k} descriptors for {k} components, got {n}")
    rng = np.random.default_rng(seed)
    means, assign = _kmeans_seed(x, k, rng)
    resp = np.zeros((n, k))
    resp[np.arange(n), assign] = 1.0
    gmm = _m_step(x, resp, var_floor)
    for _ in range(iterations):
        resp, lse = gmm.posteriors(x)
        ll = float(lse.mean())
        history = gmm.history + [ll]
        gmm = _m_step(x, resp, var_floor)
        gmm.history = history
    gmm.history.append(float(gmm.posteriors(x)[1].mean()))
    return gmm


def _m_step(x, resp, var_floor) -> GmmModel:
    nk = np.maximum(resp.sum(axis=0), 1e-300)
    means = (resp.T @ x) / nk[:, None]
    second = (resp.T @ (x ** 2)) / nk[:, None]
    variances = np.maximum(second - means ** 2, var_floor)
    return GmmModel(nk / nk.sum(), means, variances)


def fisher_blocks(descriptors, gmm: GmmModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard-deviation gradient blocks, each ``K x D``.

    ``G_mu = sum_n g_nk (x_n - mu_k) / sigma_k / (N sqrt(w_k))`` and
    ``G_sigma = sum_n g_nk ((x_n - mu_k)^2 / sigma_k^2 - 1) / (N sqrt(2 w_k))``.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != gmm.dim:
        raise DimensionError(f"descriptors of shape {x.shape} for a {gmm.dim}-d mixture")
    n = len(x)
    gamma, _ = gmm.posteriors(x)
    sigma = np.sqrt(gmm.variances)
    s0 = gamma.sum(axis=0)[:, None]
    s1 = gamma.T @ x
    s2 = gamma.T @ (x ** 2)
    mu = gmm.means
    g_mu = (s1 - mu * s0) / sigma / (n * np.sqrt(gmm.weights)[:, None])
    g_sigma = (s2 - 2 * mu * s1 + mu ** 2 * s0) / gmm.variances - s0
    g_sigma = g_sigma / (n * np.sqrt(2 * gmm.weights)[:, None])
    return g_mu, g_sigma


def power_l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def fisher_encode(descriptors, gmm: GmmModel, normalize: bool = True) -> np.ndarray:
    """Fisher vector of dimension ``2 K D``; signed-sqrt + L2 normalized by default."""
    g_mu, g_sigma = fisher_blocks(descriptors, gmm)
    v = np.concatenate([g_mu.ravel(), g_sigma.ravel()])
    return power_l2_normalize(v) if normalize else v
