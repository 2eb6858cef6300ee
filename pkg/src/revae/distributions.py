"""Probability primitives: diagonal Gaussian, Bernoulli vector, Laplace, Categorical.

All log-densities reduce over the trailing axis, so a batch of row vectors
maps to one log-probability per row. Sampling takes an explicit
``numpy.random.Generator``; only the Gaussian reparameterized path is
differentiable, discrete draws are plain values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-7          # Bernoulli probabilities are clamped to [eps, 1-eps]
LOG_2PI = float(np.log(2.0 * np.pi))


class NonBinaryLabel(ValueError):
    """Label entries must be exactly 0 or 1."""


def _require_binary(y: np.ndarray) -> None:
    if not np.all((y == 0.0) | (y == 1.0)):
        raise NonBinaryLabel("labels must be 0/1")


@dataclass
class DiagGaussian:
    """Factorized Gaussian with unconstrained log standard deviation."""

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise T.ShapeMismatch(
                f"mu {self.mu.shape} vs log_sigma {self.log_sigma.shape}")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1] if self.mu.ndim else 1

    def sigma(self) -> Tensor:
        return T.exp(self.log_sigma)

    def rsample(self, noise: Tensor) -> Tensor:
        """mu + sigma * noise; differentiable in mu and log_sigma."""
        if noise.shape != self.mu.shape:
            raise T.ShapeMismatch(
                f"noise {noise.shape} vs mu {self.mu.shape}")
        return T.add(self.mu, T.mul(self.sigma(), noise))

    def _as_rows(self):
        mu = self.mu if self.mu.ndim == 2 else T.reshape(self.mu, (1, self.dim))
        ls = self.log_sigma if self.log_sigma.ndim == 2 else T.reshape(
            self.log_sigma, (1, self.dim))
        return mu, ls

    def sample_k(self, k: int, rng: np.random.Generator) -> Tensor:
        """k reparameterized draws per row, stacked as [k*rows, dim]."""
        mu, ls = self._as_rows()
        rows = mu.shape[0]
        noise = Tensor(rng.standard_normal((k * rows, mu.shape[1])))
        return T.add(T.repeat_rows(mu, k), T.mul(T.exp(T.repeat_rows(ls, k)), noise))

    def tile(self, k: int) -> "DiagGaussian":
        """Row-tiled view matching sample_k's [k*rows, dim] stacking."""
        mu, ls = self._as_rows()
        return DiagGaussian(T.repeat_rows(mu, k), T.repeat_rows(ls, k))

    def log_prob(self, z: Tensor) -> Tensor:
        """Sum over the trailing axis of the per-coordinate log-density."""
        mu, ls = self.mu, self.log_sigma
        if z.shape[-1:] != mu.shape[-1:]:
            raise T.ShapeMismatch(f"z {z.shape} vs mu {mu.shape}")
        diff = T.sub(z, mu)
        inv_var = T.exp(T.mul(ls, -2.0))
        quad = T.mul(T.square(diff), T.mul(inv_var, 0.5))
        per_dim = T.sub(T.sub(Tensor(-0.5 * LOG_2PI), ls), quad)
        return T.reduce_sum(per_dim, axis=-1)

    def kl_std(self) -> Tensor:
        """KL to the standard normal, summed over the trailing axis."""
        var = T.exp(T.mul(self.log_sigma, 2.0))
        per_dim = T.mul(T.sub(T.sub(T.add(T.square(self.mu), var), 1.0),
                              T.mul(self.log_sigma, 2.0)), 0.5)
        return T.reduce_sum(per_dim, axis=-1)

    def kl_to(self, other: "DiagGaussian") -> Tensor:
        """KL(self || other) for two factorized Gaussians."""
        var_ratio = T.exp(T.mul(T.sub(self.log_sigma, other.log_sigma), 2.0))
        diff = T.sub(self.mu, other.mu)
        scaled = T.mul(T.square(diff), T.exp(T.mul(other.log_sigma, -2.0)))
        per_dim = T.mul(T.sub(T.add(var_ratio, scaled),
                              T.add(1.0, T.mul(T.sub(self.log_sigma, other.log_sigma), 2.0))),
                        0.5)
        return T.reduce_sum(per_dim, axis=-1)


def gaussian_rsample(d: DiagGaussian, noise: Tensor) -> Tensor:
    return d.rsample(noise)


def gaussian_log_prob(d: DiagGaussian, z: Tensor) -> Tensor:
    return d.log_prob(z)


def gaussian_kl_std(d: DiagGaussian) -> Tensor:
    return d.kl_std()


def std_normal_log_prob(z: Tensor) -> Tensor:
    """log N(z; 0, I) summed over the trailing axis."""
    quad = T.mul(T.square(z), 0.5)
    per_dim = T.sub(Tensor(-0.5 * LOG_2PI), quad)
    return T.reduce_sum(per_dim, axis=-1)


@dataclass
class BernoulliVec:
    """Independent Bernoulli per coordinate; probs clamped away from 0/1."""

    probs: Tensor

    def __post_init__(self):
        self.probs = T.clip(self.probs, PROB_EPS, 1.0 - PROB_EPS)

    def log_prob(self, y) -> Tensor:
        y = y if isinstance(y, Tensor) else Tensor(y)
        _require_binary(y.values)
        p = self.probs
        per = T.add(T.mul(y, T.log(p)), T.mul(T.sub(1.0, y), T.log(T.sub(1.0, p))))
        return T.reduce_sum(per, axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.probs.shape)
        return (u < self.probs.values).astype(np.float64)


def bernoulli_log_prob(b: BernoulliVec, y) -> Tensor:
    return b.log_prob(y)


def bernoulli_sample(b: BernoulliVec, rng: np.random.Generator) -> np.ndarray:
    return b.sample(rng)


@dataclass
class LaplaceLik:
    """Laplace likelihood with a shared positive scale."""

    loc: Tensor
    scale: Tensor  # scalar tensor, > 0

    def log_prob(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape != self.loc.shape:
            raise T.ShapeMismatch(f"x {x.shape} vs loc {self.loc.shape}")
        b = self.scale
        per = T.sub(T.neg(T.log(T.mul(b, 2.0))),
                    T.div(T.absolute(T.sub(x, self.loc)), b))
        return T.reduce_sum(per, axis=-1)


def laplace_log_prob(l: LaplaceLik, x) -> Tensor:
    return l.log_prob(x)


@dataclass
class CategoricalDist:
    """Distribution over M classes given probabilities on the simplex."""

    probs: Tensor

    def __post_init__(self):
        p = self.probs.values
        if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError("probs must be nonnegative and sum to 1")

    def log_prob(self, index) -> Tensor:
        """Log-probability of integer class indices (last-axis one-hot)."""
        idx = np.asarray(index, dtype=np.int64)
        m = self.probs.shape[-1]
        onehot = np.eye(m)[idx]
        picked = T.reduce_sum(
            T.mul(T.log(T.clip(self.probs, PROB_EPS, 1.0)), Tensor(onehot)), axis=-1)
        return picked

    def sample(self, rng: np.random.Generator):
        """Inverse-CDF draw; returns int (single row) or int array (batch)."""
        p = self.probs.values
        if p.ndim == 1:
            return int(np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, p.shape[-1] - 1))
        u = rng.random(p.shape[:-1] + (1,))
        cdf = np.cumsum(p, axis=-1)
        return (u >= cdf).sum(axis=-1).clip(0, p.shape[-1] - 1).astype(np.int64)


def categorical_sample(c: CategoricalDist, rng: np.random.Generator):
    return c.sample(rng)
