"""Closed-form linear-Gaussian label-mixture models for certifying bounds.

The generative story: per-label scalar characteristic blocks drawn from a
two-row Gaussian table selected by the binary label, a standard-normal
residual, and a linear observation x = W z + b + noise. Everything about
this model is available in closed form: evidence, joints, posteriors, and
the label-marginalized characteristic density. Estimators are certified by
comparing their Monte Carlo means against these exact values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .distributions import DiagGaussian, PROB_EPS
from .model import LatentLayout
from .tensor import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))
MAX_DIM = 16
MAX_LABELS = 8


class SingularCovariance(np.linalg.LinAlgError):
    """Oracle configuration produced an ill-conditioned covariance."""


class FullGaussian:
    """Multivariate normal with a dense covariance (oracle-internal only)."""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.cov = np.asarray(cov, dtype=np.float64)
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as e:
            raise SingularCovariance(str(e))
        self._log_det = 2.0 * np.log(np.diag(self._chol)).sum()

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        diff = x - self.mean
        y = np.linalg.solve(self._chol, diff.T)
        quad = (y * y).sum(axis=0)
        return -0.5 * (self.dim * LOG_2PI + self._log_det + quad)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((n, self.dim))
        return self.mean + eps @ self._chol.T


@dataclass
class LinearGaussianOracle:
    """Tiny conjugate model with exact log-evidence for bound certification."""

    prior_mu: np.ndarray      # [L, 2] means for label values 0/1
    prior_sigma: np.ndarray   # [L, 2] stds, > 0
    m_notc: int
    W: np.ndarray             # [D, m]
    b: np.ndarray             # [D]
    sigma_x: float
    label_probs: np.ndarray   # [L]

    def __post_init__(self):
        self.prior_mu = np.asarray(self.prior_mu, dtype=np.float64)
        self.prior_sigma = np.asarray(self.prior_sigma, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.label_probs = np.clip(
            np.asarray(self.label_probs, dtype=np.float64), PROB_EPS, 1 - PROB_EPS)
        if np.any(self.prior_sigma <= 0) or self.sigma_x <= 0:
            raise ValueError("scales must be positive")
        if self.L > MAX_LABELS or self.m > MAX_DIM or self.D > MAX_DIM:
            raise ValueError("oracle dimensions exceed the desk-scale caps")
        if self.W.shape != (self.D, self.m):
            raise ValueError(f"W must be [{self.D}, {self.m}]")

    # -- structure ---------------------------------------------------------

    @property
    def L(self) -> int:
        return self.prior_mu.shape[0]

    @property
    def m(self) -> int:
        return self.L + self.m_notc

    @property
    def D(self) -> int:
        return self.b.shape[0]

    @property
    def layout(self) -> LatentLayout:
        return LatentLayout([f"y{i}" for i in range(self.L)],
                            [1] * self.L, self.m_notc)

    @staticmethod
    def random(rng: np.random.Generator, L: int = 2, m_notc: int = 2,
               D: int = 4, sigma_x: float = 0.7) -> "LinearGaussianOracle":
        m = L + m_notc
        return LinearGaussianOracle(
            prior_mu=np.stack([rng.uniform(-2.0, -0.5, L),
                               rng.uniform(0.5, 2.0, L)], axis=1),
            prior_sigma=rng.uniform(0.5, 1.2, (L, 2)),
            m_notc=m_notc,
            W=rng.normal(0.0, 0.8, (D, m)),
            b=rng.normal(0.0, 0.3, D),
            sigma_x=sigma_x,
            label_probs=rng.uniform(0.25, 0.75, L),
        )

    def to_json(self) -> dict:
        return {
            "prior_mu": self.prior_mu.tolist(),
            "prior_sigma": self.prior_sigma.tolist(),
            "m_notc": self.m_notc,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "sigma_x": self.sigma_x,
            "label_probs": self.label_probs.tolist(),
        }

    @staticmethod
    def from_json(obj: dict) -> "LinearGaussianOracle":
        return LinearGaussianOracle(
            np.array(obj["prior_mu"]), np.array(obj["prior_sigma"]),
            obj["m_notc"], np.array(obj["W"]), np.array(obj["b"]),
            obj["sigma_x"], np.array(obj["label_probs"]))

    # -- exact quantities -----------------------------------------------------

    def prior_moments(self, y: np.ndarray):
        """Mean and std of p(z | y) over the full latent."""
        y = np.asarray(y, dtype=np.float64).reshape(self.L)
        mu_c = np.where(y == 1.0, self.prior_mu[:, 1], self.prior_mu[:, 0])
        sd_c = np.where(y == 1.0, self.prior_sigma[:, 1], self.prior_sigma[:, 0])
        mu = np.concatenate([mu_c, np.zeros(self.m_notc)])
        sd = np.concatenate([sd_c, np.ones(self.m_notc)])
        return mu, sd

    def log_prior_y(self, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=np.float64).reshape(self.L)
        p = self.label_probs
        return float((y * np.log(p) + (1 - y) * np.log(1 - p)).sum())

    def _marginal_x(self, y: np.ndarray) -> FullGaussian:
        mu, sd = self.prior_moments(y)
        cov = self.W @ np.diag(sd**2) @ self.W.T + self.sigma_x**2 * np.eye(self.D)
        return FullGaussian(self.W @ mu + self.b, cov)

    def exact_log_joint(self, x: np.ndarray, y: np.ndarray) -> float:
        """log p(x, y) = log p(y) + log N(x; W mu_y + b, W S_y W^T + s^2 I)."""
        return self.log_prior_y(y) + float(self._marginal_x(y).log_pdf(x)[0])

    def exact_log_evidence(self, x: np.ndarray) -> float:
        """log p(x), marginalized over all label combinations."""
        parts = [self.exact_log_joint(x, np.array(bits))
                 for bits in itertools.product((0.0, 1.0), repeat=self.L)]
        parts = np.array(parts)
        mx = parts.max()
        return float(mx + np.log(np.exp(parts - mx).sum()))

    def exact_posterior(self, x: np.ndarray, y: np.ndarray) -> FullGaussian:
        """Conjugate posterior p(z | x, y); dense covariance in general."""
        mu0, sd0 = self.prior_moments(y)
        prec0 = np.diag(1.0 / sd0**2)
        lam = prec0 + self.W.T @ self.W / self.sigma_x**2
        cond = np.linalg.cond(lam)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularCovariance(f"posterior precision cond {cond:.3g}")
        cov = np.linalg.inv(lam)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (prec0 @ mu0 + self.W.T @ (np.asarray(x) - self.b)
                      / self.sigma_x**2)
        return FullGaussian(mean, cov)

    def posterior_y_probs(self, x: np.ndarray) -> dict:
        """p(y | x) over all label combinations, keyed by the bit tuple."""
        logs = {}
        for bits in itertools.product((0.0, 1.0), repeat=self.L):
            logs[bits] = self.exact_log_joint(x, np.array(bits))
        vals = np.array(list(logs.values()))
        mx = vals.max()
        norm = mx + np.log(np.exp(vals - mx).sum())
        return {k: float(np.exp(v - norm)) for k, v in logs.items()}

    def exact_log_p_zc(self, z_c: np.ndarray) -> float:
        """log p(z_c), blockwise mixture over each label's two values."""
        z_c = np.asarray(z_c, dtype=np.float64).reshape(self.L)
        total = 0.0
        for i in range(self.L):
            lp = []
            for v, pv in ((0, 1 - self.label_probs[i]), (1, self.label_probs[i])):
                mu, sd = self.prior_mu[i, v], self.prior_sigma[i, v]
                lp.append(np.log(pv) - 0.5 * LOG_2PI - np.log(sd)
                          - 0.5 * (z_c[i] - mu)**2 / sd**2)
            total += float(np.logaddexp(lp[0], lp[1]))
        return total

    def exact_log_p_zc_naive(self, z_c: np.ndarray) -> float:
        """Same marginal via full 2^L enumeration; agreement check target."""
        z_c = np.asarray(z_c, dtype=np.float64).reshape(self.L)
        parts = []
        for bits in itertools.product((0, 1), repeat=self.L):
            lp = self.log_prior_y(np.array(bits, dtype=float))
            for i, v in enumerate(bits):
                mu, sd = self.prior_mu[i, v], self.prior_sigma[i, v]
                lp += (-0.5 * LOG_2PI - np.log(sd)
                       - 0.5 * (z_c[i] - mu)**2 / sd**2)
            parts.append(lp)
        parts = np.array(parts)
        mx = parts.max()
        return float(mx + np.log(np.exp(parts - mx).sum()))

    def classifier_probs(self, z_c: np.ndarray) -> np.ndarray:
        """Exact p(y_i = 1 | z_c^i) per block, rows in rows out."""
        z = np.atleast_2d(np.asarray(z_c, dtype=np.float64))
        out = np.empty_like(z)
        for i in range(self.L):
            lp = []
            for v in (0, 1):
                mu, sd = self.prior_mu[i, v], self.prior_sigma[i, v]
                prior = self.label_probs[i] if v == 1 else 1 - self.label_probs[i]
                lp.append(np.log(prior) - np.log(sd)
                          - 0.5 * (z[:, i] - mu)**2 / sd**2)
            out[:, i] = 1.0 / (1.0 + np.exp(lp[0] - lp[1]))
        return out

    def sample_joint(self, n: int, rng: np.random.Generator):
        """Draw (x, y, z) triples from the generative model."""
        y = (rng.random((n, self.L)) < self.label_probs).astype(np.float64)
        z = np.empty((n, self.m))
        for j in range(n):
            mu, sd = self.prior_moments(y[j])
            z[j] = mu + sd * rng.standard_normal(self.m)
        x = z @ self.W.T + self.b + self.sigma_x * rng.standard_normal((n, self.D))
        return x, y, z


class _MixturePosterior:
    """Per-row exact posterior mixture p(z | x), the tightest valid encoder."""

    def __init__(self, components: list, weights: list):
        # components[row] -> list[FullGaussian]; weights[row] -> np.ndarray
        self.components = components
        self.weights = weights
        self.rows = len(components)
        self.dim = components[0][0].dim

    def sample_k(self, k: int, rng: np.random.Generator) -> Tensor:
        """[k*rows, dim] draws in row-tiled order, vectorized per datapoint."""
        out = np.empty((k * self.rows, self.dim))
        for j in range(self.rows):
            comps = self.components[j]
            picks = rng.choice(len(comps), size=k, p=self.weights[j])
            eps = rng.standard_normal((k, self.dim))
            draws = np.empty((k, self.dim))
            for c, comp in enumerate(comps):
                sel = picks == c
                if sel.any():
                    draws[sel] = comp.mean + eps[sel] @ comp._chol.T
            out[j::self.rows] = draws
        return Tensor(out)

    def tile(self, k: int) -> "_TiledMixture":
        return _TiledMixture(self, k)

    def log_prob_rows(self, z: np.ndarray) -> np.ndarray:
        """z aligned as [k*rows, dim] in sample_k's tiling order."""
        n = z.shape[0]
        out = np.empty(n)
        for j in range(self.rows):
            rows_j = z[j::self.rows]
            parts = np.stack([np.log(w) + comp.log_pdf(rows_j)
                              for w, comp in zip(self.weights[j],
                                                 self.components[j])])
            mx = parts.max(axis=0)
            out[j::self.rows] = mx + np.log(np.exp(parts - mx).sum(axis=0))
        return out


class _TiledMixture:
    def __init__(self, base: _MixturePosterior, k: int):
        self.base = base
        self.k = k

    def log_prob(self, z: Tensor) -> Tensor:
        return Tensor(self.base.log_prob_rows(z.values))


class OracleAdapter:
    """Exposes a linear-Gaussian oracle through the model protocol.

    Objectives evaluated against this adapter use the exact posterior (or a
    moment-matched diagonal one), the exact per-block classifier, and the
    true conditional prior, so estimator means can be compared against
    closed-form evidence.
    """

    def __init__(self, oracle: LinearGaussianOracle, posterior: str = "exact",
                 classifier_temp: float = 1.0):
        if posterior not in ("exact", "meanfield"):
            raise ValueError("posterior must be 'exact' or 'meanfield'")
        if classifier_temp <= 0:
            raise ValueError("classifier_temp must be positive")
        self.oracle = oracle
        self.posterior_kind = posterior
        # Temperature != 1 softens/sharpens the exact block posteriors. The
        # result is still a valid conditional, so every bound stays valid,
        # but tightness identities break, which makes gap tests strict.
        self.classifier_temp = classifier_temp
        self.layout = oracle.layout
        self._label_prior = oracle.label_probs

    @property
    def label_prior(self) -> np.ndarray:
        return self._label_prior

    def _mixture(self, x: np.ndarray) -> _MixturePosterior:
        comps, weights = [], []
        for row in np.atleast_2d(x):
            wy = self.oracle.posterior_y_probs(row)
            keys = list(wy.keys())
            comps.append([self.oracle.exact_posterior(row, np.array(k))
                          for k in keys])
            w = np.array([wy[k] for k in keys])
            weights.append(w / w.sum())
        return _MixturePosterior(comps, weights)

    def encode(self, x: Tensor):
        mix = self._mixture(x.values)
        if self.posterior_kind == "exact":
            return mix
        rows = mix.rows
        mu = np.empty((rows, mix.dim))
        var = np.empty((rows, mix.dim))
        for j in range(rows):
            mus = np.stack([c.mean for c in mix.components[j]])
            covs = np.stack([np.diag(c.cov) for c in mix.components[j]])
            w = mix.weights[j][:, None]
            mu[j] = (w * mus).sum(0)
            var[j] = (w * (covs + mus**2)).sum(0) - mu[j]**2
        return DiagGaussian(Tensor(mu), Tensor(0.5 * np.log(var)))

    def log_likelihood(self, x: Tensor, z: Tensor) -> Tensor:
        o = self.oracle
        loc = z.values @ o.W.T + o.b
        per = (-0.5 * LOG_2PI - np.log(o.sigma_x)
               - 0.5 * (x.values - loc)**2 / o.sigma_x**2)
        return Tensor(per.sum(axis=-1))

    def _probs(self, z_c: np.ndarray) -> np.ndarray:
        p = self.oracle.classifier_probs(z_c)
        if self.classifier_temp != 1.0:
            p = np.clip(p, PROB_EPS, 1 - PROB_EPS)
            logit = np.log(p) - np.log1p(-p)
            p = 1.0 / (1.0 + np.exp(-logit / self.classifier_temp))
        return p

    def classifier_probs(self, z_c: Tensor) -> Tensor:
        return Tensor(self._probs(z_c.values))

    def classifier_log_prob(self, y, z_c: Tensor) -> Tensor:
        p = np.clip(self._probs(z_c.values), PROB_EPS, 1 - PROB_EPS)
        yv = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return Tensor((yv * np.log(p) + (1 - yv) * np.log(1 - p)).sum(axis=-1))

    def classifier_sample(self, z_c: Tensor, rng: np.random.Generator) -> np.ndarray:
        p = self._probs(z_c.values)
        return (rng.random(p.shape) < p).astype(np.float64)

    def conditional_prior(self, y) -> DiagGaussian:
        yv = np.atleast_2d(np.asarray(y, dtype=np.float64))
        mu = np.where(yv == 1.0, self.oracle.prior_mu[:, 1],
                      self.oracle.prior_mu[:, 0])
        sd = np.where(yv == 1.0, self.oracle.prior_sigma[:, 1],
                      self.oracle.prior_sigma[:, 0])
        return DiagGaussian(Tensor(mu), Tensor(np.log(sd)))

    def log_prior_z_given_y(self, z: Tensor, y) -> Tensor:
        o = self.oracle
        zv = z.values
        yv = np.atleast_2d(np.asarray(y, dtype=np.float64))
        mu = np.where(yv == 1.0, o.prior_mu[:, 1], o.prior_mu[:, 0])
        sd = np.where(yv == 1.0, o.prior_sigma[:, 1], o.prior_sigma[:, 0])
        zc, znc = zv[:, :o.L], zv[:, o.L:]
        out = (-0.5 * LOG_2PI - np.log(sd)
               - 0.5 * (zc - mu)**2 / sd**2).sum(axis=-1)
        out = out + (-0.5 * LOG_2PI - 0.5 * znc**2).sum(axis=-1)
        return Tensor(out)

    def log_prior_zc_exact(self, z_c: Tensor) -> Tensor:
        return Tensor(np.array([self.oracle.exact_log_p_zc(row)
                                for row in np.atleast_2d(z_c.values)]))

    def log_prior_y(self, y) -> Tensor:
        yv = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return Tensor(np.array([self.oracle.log_prior_y(row) for row in yv]))
