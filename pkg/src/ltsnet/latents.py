"""Latent-variable primitives: Gaussian reparameterization, Gumbel-softmax,
closed-form KL divergences and the domain-conditional Gaussian prior.

Batched inputs are supported throughout: leading axes are samples, the last
axis is the latent coordinate. KL functions sum over the last axis only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, as_tensor, exp, log, log_softmax, softmax, square, sum_

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianPosterior:
    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        self.mu = as_tensor(self.mu)
        self.log_sigma = as_tensor(self.log_sigma)
        if self.mu.shape != self.log_sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} != log_sigma shape {self.log_sigma.shape}")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)


@dataclass
class ConditionalPrior:
    """N(f(delta), sigma_prior^2 I) with f a fixed lookup table of well-separated means."""

    mean_table: np.ndarray
    sigma_prior: float = 1.0

    def __post_init__(self):
        self.mean_table = np.asarray(self.mean_table, dtype=np.float64)
        if self.sigma_prior <= 0:
            raise ValueError("sigma_prior must be positive")
        rows = {tuple(r) for r in self.mean_table}
        if len(rows) != len(self.mean_table):
            raise ValueError("conditional prior mean rows must be pairwise distinct")

    @classmethod
    def one_hot_table(cls, k_max: int, d_z: int, spacing: float = 3.0, sigma_prior: float = 1.0) -> "ConditionalPrior":
        """Row i is ``spacing * e_i``; rows past ``d_z`` reuse the axes with a negative sign."""
        if k_max > 2 * d_z:
            raise ValueError(f"cannot place {k_max} distinct one-hot means in {d_z} dimensions")
        table = np.zeros((k_max, d_z))
        for i in range(k_max):
            if i < d_z:
                table[i, i] = spacing
            else:
                table[i, i - d_z] = -spacing
        return cls(table, sigma_prior)

    @property
    def k_max(self) -> int:
        return self.mean_table.shape[0]

    def means(self, domain_index) -> np.ndarray:
        idx = np.asarray(domain_index)
        if np.any(idx < 0) or np.any(idx >= self.k_max):
            raise IndexError(f"domain index out of range for {self.k_max} prior rows")
        return self.mean_table[idx]


@dataclass
class DomainPrior:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.size == 0:
            raise ValueError("empty domain prior")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("domain prior weights must be a probability vector")

    @classmethod
    def uniform(cls, k: int) -> "DomainPrior":
        return cls(np.full(k, 1.0 / k))


@dataclass
class RelaxedCategorical:
    logits: Tensor
    temperature: float = 0.5

    def __post_init__(self):
        self.logits = as_tensor(self.logits)
        if not self.temperature > 0:
            raise ValueError("Gumbel-softmax temperature must be positive")


def gaussian_reparameterize(post: GaussianPosterior, noise) -> Tensor:
    noise = as_tensor(noise)
    if noise.shape != post.mu.shape:
        raise ValueError(f"noise shape {noise.shape} != posterior shape {post.mu.shape}")
    return post.mu + exp(post.log_sigma) * noise


def kl_gaussian_vs_standard(post: GaussianPosterior) -> Tensor:
    mu, ls = post.mu, post.log_sigma
    terms = square(mu) + exp(2.0 * ls) - 1.0 - 2.0 * ls
    return 0.5 * sum_(terms, axis=-1)


def kl_gaussian_vs_conditional(post: GaussianPosterior, prior: ConditionalPrior, domain_index) -> Tensor:
    """KL(N(mu, sigma^2) || N(f(delta), sigma_prior^2)), one value per leading index."""
    m = prior.means(domain_index)
    if m.shape != post.mu.shape:
        m = np.broadcast_to(m, post.mu.shape)
    ls, s2 = post.log_sigma, prior.sigma_prior**2
    diff = post.mu - Tensor(m)
    terms = (exp(2.0 * ls) + square(diff)) / s2 - 1.0 - 2.0 * ls + np.log(s2)
    return 0.5 * sum_(terms, axis=-1)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(rc: RelaxedCategorical, gumbel_noise) -> Tensor:
    g = np.asarray(gumbel_noise, dtype=np.float64)
    if g.shape != rc.logits.shape:
        raise ValueError(f"gumbel noise shape {g.shape} != logits shape {rc.logits.shape}")
    # softmax subtracts the row max internally
    return softmax((rc.logits + g) / rc.temperature, axis=-1)


def kl_categorical(q, p) -> float:
    """KL(q || p) for plain probability vectors; +inf when q puts mass where p has none."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"length mismatch: {q.shape} vs {p.shape}")
    support = q > 0
    if np.any(p[support] == 0):
        return float("inf")
    return float(np.sum(q[support] * (np.log(q[support]) - np.log(p[support]))))


def kl_categorical_logits(logits: Tensor, prior_probs) -> Tensor:
    """Differentiable KL(softmax(logits) || prior), summed over the last axis."""
    p = np.asarray(prior_probs, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("prior must have full support over the logits")
    logq = log_softmax(logits, axis=-1)
    q = exp(logq)
    return sum_(q * (logq - Tensor(np.log(p))), axis=-1)


def sample_domain_prior(prior: DomainPrior, u: float) -> np.ndarray:
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    cdf = np.cumsum(prior.weights)
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(cdf) - 1)
    out = np.zeros(len(cdf))
    out[idx] = 1.0
    return out


def gaussian_log_density(z: np.ndarray, mean: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    """log N(z; mean, diag(exp(log_sigma)^2)) summed over the last axis."""
    sig = np.exp(log_sigma)
    return np.sum(-0.5 * ((z - mean) / sig) ** 2 - log_sigma - 0.5 * LOG_2PI, axis=-1)
