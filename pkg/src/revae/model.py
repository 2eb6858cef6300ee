"""Model bundle: encoder, decoder, block-diagonal classifier, conditional prior.

The latent vector z is split into per-label characteristic blocks z_c^i and a
residual z_nc. Structure, not regularization, enforces the factorization:
the classifier for label i reads only block i, and the label-conditioned
prior for block i depends only on y_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .distributions import (
    BernoulliVec,
    CategoricalDist,
    DiagGaussian,
    LaplaceLik,
    NonBinaryLabel,
    PROB_EPS,
    std_normal_log_prob,
)
from .tensor import Tensor


@dataclass
class LatentLayout:
    """Partition of the latent space into labeled blocks plus a residual."""

    labels: list[str]
    dims_c: list[int]
    m_notc: int
    num_classes: Optional[int] = None  # set => one block, categorical label

    def __post_init__(self):
        if len(self.dims_c) != len(self.labels):
            raise ValueError("dims_c must align with labels")
        if any(d < 1 for d in self.dims_c) or self.m_notc < 0:
            raise ValueError("block sizes must be >= 1 and m_notc >= 0")
        if self.num_classes is not None and len(self.labels) != 1:
            raise ValueError("categorical mode uses a single label block")

    @property
    def L(self) -> int:
        return len(self.labels)

    @property
    def m_c(self) -> int:
        return sum(self.dims_c)

    @property
    def m(self) -> int:
        return self.m_c + self.m_notc

    @property
    def is_multiclass(self) -> bool:
        return self.num_classes is not None

    def block_slices(self) -> list[slice]:
        out, start = [], 0
        for d in self.dims_c:
            out.append(slice(start, start + d))
            start += d
        return out

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "dims_c": list(self.dims_c),
            "m_notc": self.m_notc,
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_json(obj: dict) -> "LatentLayout":
        return LatentLayout(obj["labels"], obj["dims_c"], obj["m_notc"],
                            obj.get("num_classes"))


def split_latent(layout: LatentLayout, z: Tensor):
    """(per-label blocks..., residual); contiguous views, concat inverts."""
    if z.shape[-1] != layout.m:
        raise T.ShapeMismatch(f"latent dim {z.shape[-1]} != layout m {layout.m}")
    blocks = [T.narrow(z, -1, s.start, s.stop - s.start)
              for s in layout.block_slices()]
    notc = T.narrow(z, -1, layout.m_c, layout.m_notc)
    return blocks, notc


def split_characteristic(layout: LatentLayout, z: Tensor):
    """(z_c, z_nc) halves of the latent."""
    zc = T.narrow(z, -1, 0, layout.m_c)
    znc = T.narrow(z, -1, layout.m_c, layout.m_notc)
    return zc, znc


@dataclass
class ModelConfig:
    image_shape: tuple  # (H, W)
    layout: LatentLayout
    likelihood: str = "bernoulli"  # or "laplace"
    hidden: int = 400
    laplace_scale_init: float = 0.1

    @property
    def input_dim(self) -> int:
        h, w = self.image_shape
        return h * w

    def to_json(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "layout": self.layout.to_json(),
            "likelihood": self.likelihood,
            "hidden": self.hidden,
            "laplace_scale_init": self.laplace_scale_init,
        }

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        return ModelConfig(tuple(obj["image_shape"]),
                           LatentLayout.from_json(obj["layout"]),
                           obj["likelihood"], obj["hidden"],
                           obj.get("laplace_scale_init", 0.1))


def _linear_init(rng, fan_in, fan_out, scale=None) -> np.ndarray:
    scale = np.sqrt(2.0 / fan_in) if scale is None else scale
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def _require_binary(y: np.ndarray) -> None:
    if not np.all((y == 0.0) | (y == 1.0)):
        raise NonBinaryLabel("labels must be 0/1")


class ReVAEModel:
    """Parameter bundle plus the four conditionals used by every objective."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.layout = cfg.layout
        rng = np.random.default_rng(seed)
        D, H, m = cfg.input_dim, cfg.hidden, cfg.layout.m
        p: dict[str, Tensor] = {}
        p["enc_w1"] = Tensor.param(_linear_init(rng, D, H))
        p["enc_b1"] = Tensor.param(np.zeros(H))
        p["enc_w2"] = Tensor.param(_linear_init(rng, H, H))
        p["enc_b2"] = Tensor.param(np.zeros(H))
        p["enc_wmu"] = Tensor.param(_linear_init(rng, H, m, scale=0.01))
        p["enc_bmu"] = Tensor.param(np.zeros(m))
        p["enc_wls"] = Tensor.param(_linear_init(rng, H, m, scale=0.01))
        p["enc_bls"] = Tensor.param(np.zeros(m))
        p["dec_w1"] = Tensor.param(_linear_init(rng, m, H))
        p["dec_b1"] = Tensor.param(np.zeros(H))
        p["dec_w2"] = Tensor.param(_linear_init(rng, H, H))
        p["dec_b2"] = Tensor.param(np.zeros(H))
        p["dec_wout"] = Tensor.param(_linear_init(rng, H, D, scale=0.01))
        p["dec_bout"] = Tensor.param(np.zeros(D))
        if cfg.likelihood == "laplace":
            p["dec_log_scale"] = Tensor.param(
                np.array(np.log(cfg.laplace_scale_init)))
        elif cfg.likelihood != "bernoulli":
            raise ValueError(f"unknown likelihood '{cfg.likelihood}'")

        lay = cfg.layout
        if lay.is_multiclass:
            M, N = lay.num_classes, lay.m_c
            p["cls_w"] = Tensor.param(_linear_init(rng, N, M, scale=1.0 / np.sqrt(N)))
            p["cls_b"] = Tensor.param(np.zeros(M))
            # Spread class means on a +-1 pattern so blocks start separated.
            mu0 = np.full((M, N), -1.0)
            for y in range(M):
                mu0[y, y % N] = 1.0
            p["cp_mu"] = Tensor.param(mu0)
            p["cp_ls"] = Tensor.param(np.zeros((M, N)))
            self._label_prior = np.full(M, 1.0 / M)
        else:
            mc, L = lay.m_c, lay.L
            mask = np.zeros((mc, L))
            for i, s in enumerate(lay.block_slices()):
                mask[s, i] = 1.0
            self._cls_mask = mask  # structural zero pattern, not learned
            p["cls_w"] = Tensor.param(mask.copy())  # identity read-out per block
            p["cls_b"] = Tensor.param(np.zeros(L))
            p["cp_mu"] = Tensor.param(
                np.stack([np.full(mc, -1.0), np.full(mc, 1.0)], axis=1))
            p["cp_ls"] = Tensor.param(np.zeros((mc, 2)))
            # y -> per-dim expansion: column j of E is block j's indicator.
            self._y_expand = mask.T.copy()
            self._label_prior = np.full(L, 0.5)
        self.params = p

    # -- label prior -----------------------------------------------------------

    @property
    def label_prior(self) -> np.ndarray:
        return self._label_prior

    def set_label_prior(self, probs: np.ndarray) -> None:
        probs = np.asarray(probs, dtype=np.float64)
        lay = self.layout
        want = (lay.num_classes,) if lay.is_multiclass else (lay.L,)
        if probs.shape != want:
            raise T.ShapeMismatch(f"label prior shape {probs.shape} != {want}")
        self._label_prior = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
        if lay.is_multiclass:
            self._label_prior = self._label_prior / self._label_prior.sum()

    def log_prior_y(self, y) -> Tensor:
        """log p(y) under the (data-estimated) label prior; constant."""
        lay = self.layout
        if lay.is_multiclass:
            idx = np.asarray(y, dtype=np.int64)
            return Tensor(np.log(self._label_prior)[idx])
        yv = np.asarray(y, dtype=np.float64)
        _require_binary(yv)
        p = self._label_prior
        return Tensor((yv * np.log(p) + (1 - yv) * np.log(1 - p)).sum(axis=-1))

    # -- encoder / decoder ------------------------------------------------------

    def encode(self, x: Tensor) -> DiagGaussian:
        """Amortized posterior over the full latent."""
        if x.shape[-1] != self.cfg.input_dim:
            raise T.ShapeMismatch(
                f"input dim {x.shape[-1]} != {self.cfg.input_dim}")
        p = self.params
        h = T.relu(T.add(T.matmul(x, p["enc_w1"]), p["enc_b1"]))
        h = T.relu(T.add(T.matmul(h, p["enc_w2"]), p["enc_b2"]))
        mu = T.add(T.matmul(h, p["enc_wmu"]), p["enc_bmu"])
        ls = T.clip(T.add(T.matmul(h, p["enc_wls"]), p["enc_bls"]), -7.0, 7.0)
        return DiagGaussian(mu, ls)

    posterior = encode

    def decode(self, z: Tensor) -> Tensor:
        """Likelihood location parameter, image-shaped rows in (0, 1)."""
        if z.shape[-1] != self.layout.m:
            raise T.ShapeMismatch(f"latent dim {z.shape[-1]} != {self.layout.m}")
        p = self.params
        h = T.relu(T.add(T.matmul(z, p["dec_w1"]), p["dec_b1"]))
        h = T.relu(T.add(T.matmul(h, p["dec_w2"]), p["dec_b2"]))
        return T.sigmoid(T.add(T.matmul(h, p["dec_wout"]), p["dec_bout"]))

    def log_likelihood(self, x: Tensor, z: Tensor) -> Tensor:
        loc = self.decode(z)
        if self.cfg.likelihood == "bernoulli":
            return BernoulliVec(loc).log_prob(x)
        return LaplaceLik(loc, T.exp(self.params["dec_log_scale"])).log_prob(x)

    # -- classifier --------------------------------------------------------------

    def classifier_logits(self, z_c: Tensor) -> Tensor:
        p = self.params
        if self.layout.is_multiclass:
            return T.add(T.matmul(z_c, p["cls_w"]), p["cls_b"])
        w = T.mul(p["cls_w"], Tensor(self._cls_mask))
        return T.add(T.matmul(z_c, w), p["cls_b"])

    def classifier_probs(self, z_c: Tensor) -> Tensor:
        """Per-label Bernoulli probs, or class probabilities when categorical."""
        logits = self.classifier_logits(z_c)
        if self.layout.is_multiclass:
            return T.softmax(logits, axis=-1)
        return T.sigmoid(logits)

    def classifier_log_prob(self, y, z_c: Tensor) -> Tensor:
        """log q(y | z_c), one value per row."""
        logits = self.classifier_logits(z_c)
        if self.layout.is_multiclass:
            idx = np.asarray(y, dtype=np.int64)
            logp = T.sub(logits, T.logsumexp(logits, axis=-1, keepdims=True))
            onehot = np.eye(self.layout.num_classes)[idx]
            return T.reduce_sum(T.mul(logp, Tensor(onehot)), axis=-1)
        yv = np.asarray(y, dtype=np.float64) if not isinstance(y, Tensor) else y.values
        _require_binary(yv)
        # y*log sigma(l) + (1-y)*log sigma(-l), stable in both tails.
        pos = T.log_sigmoid(logits)
        negl = T.log_sigmoid(T.neg(logits))
        per = T.add(T.mul(Tensor(yv), pos), T.mul(Tensor(1.0 - yv), negl))
        return T.reduce_sum(per, axis=-1)

    def classifier_sample(self, z_c: Tensor, rng: np.random.Generator) -> np.ndarray:
        probs = self.classifier_probs(z_c)
        if self.layout.is_multiclass:
            return CategoricalDist(probs.detach()).sample(rng)
        return (rng.random(probs.shape) < probs.values).astype(np.float64)

    # -- conditional prior ----------------------------------------------------------

    def conditional_prior(self, y) -> DiagGaussian:
        """p(z_c | y): the block for label i depends only on y_i."""
        p = self.params
        if self.layout.is_multiclass:
            idx = np.asarray(y, dtype=np.int64)
            onehot = Tensor(np.eye(self.layout.num_classes)[idx])
            return DiagGaussian(T.matmul(onehot, p["cp_mu"]),
                                T.matmul(onehot, p["cp_ls"]))
        yv = np.asarray(y, dtype=np.float64)
        _require_binary(yv)
        # Expand labels to per-dimension selectors, then blend table columns.
        y_dim = Tensor(yv @ self._y_expand)
        mu0 = T.reshape(T.narrow(p["cp_mu"], 1, 0, 1), (self.layout.m_c,))
        mu1 = T.reshape(T.narrow(p["cp_mu"], 1, 1, 1), (self.layout.m_c,))
        ls0 = T.reshape(T.narrow(p["cp_ls"], 1, 0, 1), (self.layout.m_c,))
        ls1 = T.reshape(T.narrow(p["cp_ls"], 1, 1, 1), (self.layout.m_c,))
        one_m = T.sub(1.0, y_dim)
        mu = T.add(T.mul(y_dim, mu1), T.mul(one_m, mu0))
        ls = T.add(T.mul(y_dim, ls1), T.mul(one_m, ls0))
        return DiagGaussian(mu, ls)

    def log_prior_z_given_y(self, z: Tensor, y) -> Tensor:
        """log p(z | y) = log N(z_nc; 0, I) + log p(z_c | y)."""
        zc, znc = split_characteristic(self.layout, z)
        out = self.conditional_prior(y).log_prob(zc)
        if self.layout.m_notc:
            out = T.add(out, std_normal_log_prob(znc))
        return out

    def _prior_table_block(self, sl: slice, column: int) -> DiagGaussian:
        """Conditional-prior Gaussian for one block at one label value."""
        width = sl.stop - sl.start
        mu = T.reshape(T.narrow(T.narrow(self.params["cp_mu"], 0, sl.start, width),
                                1, column, 1), (width,))
        ls = T.reshape(T.narrow(T.narrow(self.params["cp_ls"], 0, sl.start, width),
                                1, column, 1), (width,))
        return DiagGaussian(mu, ls)

    def log_prior_zc_exact(self, z_c: Tensor) -> Tensor:
        """log p(z_c) marginalized over labels, blockwise log-sum-exp.

        Rows in, one log-density per row out. The per-label factorization of
        the prior makes the blockwise computation exact.
        """
        lay = self.layout
        squeeze = z_c.ndim == 1
        if squeeze:
            z_c = T.reshape(z_c, (1, lay.m_c))
        rows = z_c.shape[0]
        if lay.is_multiclass:
            parts = []
            for cls in range(lay.num_classes):
                comp = self.conditional_prior(np.full(rows, cls)).log_prob(z_c)
                parts.append(T.reshape(
                    T.add(comp, float(np.log(self._label_prior[cls]))), (1, rows)))
            total = T.logsumexp(T.concat(parts, axis=0), axis=0)
        else:
            total = Tensor(np.zeros(rows))
            for i, s in enumerate(lay.block_slices()):
                block = T.narrow(z_c, -1, s.start, s.stop - s.start)
                lp0 = T.add(self._prior_table_block(s, 0).log_prob(block),
                            float(np.log(1.0 - self._label_prior[i])))
                lp1 = T.add(self._prior_table_block(s, 1).log_prob(block),
                            float(np.log(self._label_prior[i])))
                both = T.concat([T.reshape(lp0, (1, rows)),
                                 T.reshape(lp1, (1, rows))], axis=0)
                total = T.add(total, T.logsumexp(both, axis=0))
        return T.reshape(total, ()) if squeeze else total

    # -- prediction -----------------------------------------------------------------

    def parameters(self) -> dict:
        return self.params


def estimate_q_y_given_x(model, x: Tensor, y, k: int,
                         rng: np.random.Generator):
    """MC estimate of q(y | x) = E_{q(z|x)} q(y | z_c).

    Returns (estimate per row, per-sample log q(y|z_c) as a [k, rows] array)
    so the same draws can be reused by importance-weighted estimators.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = model.encode(x)
    rows = x.shape[0] if x.ndim == 2 else 1
    z = q.sample_k(k, rng)
    zc, _ = split_characteristic(model.layout, z)
    log_q = model.classifier_log_prob(tile_labels(model.layout, y, k), zc)
    log_q = log_q.values.reshape(k, rows)
    return np.exp(log_q).mean(axis=0), log_q


def tile_labels(layout: LatentLayout, y, k: int):
    """Repeat a label batch k times, matching sample_k's row stacking."""
    arr = np.asarray(y)
    if layout.is_multiclass:
        return np.tile(arr.reshape(-1), k)
    if arr.ndim == 1:
        arr = arr[None, :]
    return np.tile(arr, (k, 1))


def predict(model, x: Tensor, k: int, rng: np.random.Generator):
    """Per-label marginals (multi-label) or (probs, argmax) for classes.

    Works for any model exposing either the latent classifier protocol or a
    direct image classifier (the labels-in-latent baseline).
    """
    if hasattr(model, "classifier_probs_x"):
        probs = model.classifier_probs_x(x).values
    else:
        q = model.encode(x)
        rows = x.shape[0] if x.ndim == 2 else 1
        z = q.sample_k(k, rng)
        zc, _ = split_characteristic(model.layout, z)
        probs = model.classifier_probs(zc).values
        probs = probs.reshape(k, rows, -1).mean(axis=0)
    if model.layout.is_multiclass:
        return probs, probs.argmax(axis=-1)
    return probs


class M2Model:
    """Baseline with the label fixed into the latent when observed.

    The encoder conditions on (x, y), the decoder on (z_style, y), and a
    separate network predicts y from x directly.
    """

    def __init__(self, cfg: ModelConfig, z_style: int, seed: int = 0):
        self.cfg = cfg
        self.layout = cfg.layout
        self.z_style = z_style
        lay = cfg.layout
        self.y_dim = lay.num_classes if lay.is_multiclass else lay.L
        rng = np.random.default_rng(seed)
        D, H = cfg.input_dim, cfg.hidden
        p: dict[str, Tensor] = {}
        p["cls_w1"] = Tensor.param(_linear_init(rng, D, H))
        p["cls_b1"] = Tensor.param(np.zeros(H))
        p["cls_w2"] = Tensor.param(_linear_init(rng, H, self.y_dim, scale=0.01))
        p["cls_b2"] = Tensor.param(np.zeros(self.y_dim))
        enc_in = D + self.y_dim
        p["enc_w1"] = Tensor.param(_linear_init(rng, enc_in, H))
        p["enc_b1"] = Tensor.param(np.zeros(H))
        p["enc_wmu"] = Tensor.param(_linear_init(rng, H, z_style, scale=0.01))
        p["enc_bmu"] = Tensor.param(np.zeros(z_style))
        p["enc_wls"] = Tensor.param(_linear_init(rng, H, z_style, scale=0.01))
        p["enc_bls"] = Tensor.param(np.zeros(z_style))
        dec_in = z_style + self.y_dim
        p["dec_w1"] = Tensor.param(_linear_init(rng, dec_in, H))
        p["dec_b1"] = Tensor.param(np.zeros(H))
        p["dec_wout"] = Tensor.param(_linear_init(rng, H, D, scale=0.01))
        p["dec_bout"] = Tensor.param(np.zeros(D))
        if cfg.likelihood == "laplace":
            p["dec_log_scale"] = Tensor.param(
                np.array(np.log(cfg.laplace_scale_init)))
        self.params = p
        self._label_prior = (np.full(self.y_dim, 1.0 / self.y_dim)
                             if lay.is_multiclass else np.full(self.y_dim, 0.5))

    @property
    def label_prior(self) -> np.ndarray:
        return self._label_prior

    set_label_prior = ReVAEModel.set_label_prior
    log_prior_y = ReVAEModel.log_prior_y

    def _y_matrix(self, y) -> np.ndarray:
        if self.layout.is_multiclass:
            return np.eye(self.y_dim)[np.asarray(y, dtype=np.int64)]
        arr = np.asarray(y, dtype=np.float64)
        return arr[None, :] if arr.ndim == 1 else arr

    def classify_logits(self, x: Tensor) -> Tensor:
        p = self.params
        h = T.relu(T.add(T.matmul(x, p["cls_w1"]), p["cls_b1"]))
        return T.add(T.matmul(h, p["cls_w2"]), p["cls_b2"])

    def classifier_probs_x(self, x: Tensor) -> Tensor:
        logits = self.classify_logits(x)
        if self.layout.is_multiclass:
            return T.softmax(logits, axis=-1)
        return T.sigmoid(logits)

    def classifier_log_prob_x(self, y, x: Tensor) -> Tensor:
        logits = self.classify_logits(x)
        if self.layout.is_multiclass:
            logp = T.sub(logits, T.logsumexp(logits, axis=-1, keepdims=True))
            onehot = np.eye(self.y_dim)[np.asarray(y, dtype=np.int64)]
            return T.reduce_sum(T.mul(logp, Tensor(onehot)), axis=-1)
        yv = self._y_matrix(y)
        per = T.add(T.mul(Tensor(yv), T.log_sigmoid(logits)),
                    T.mul(Tensor(1.0 - yv), T.log_sigmoid(T.neg(logits))))
        return T.reduce_sum(per, axis=-1)

    def encode_xy(self, x: Tensor, y) -> DiagGaussian:
        p = self.params
        inp = T.concat([x, Tensor(self._y_matrix(y))], axis=-1)
        h = T.relu(T.add(T.matmul(inp, p["enc_w1"]), p["enc_b1"]))
        mu = T.add(T.matmul(h, p["enc_wmu"]), p["enc_bmu"])
        ls = T.clip(T.add(T.matmul(h, p["enc_wls"]), p["enc_bls"]), -7.0, 7.0)
        return DiagGaussian(mu, ls)

    def decode_zy(self, z: Tensor, y) -> Tensor:
        p = self.params
        inp = T.concat([z, Tensor(self._y_matrix(y))], axis=-1)
        h = T.relu(T.add(T.matmul(inp, p["dec_w1"]), p["dec_b1"]))
        return T.sigmoid(T.add(T.matmul(h, p["dec_wout"]), p["dec_bout"]))

    def log_likelihood_zy(self, x: Tensor, z: Tensor, y) -> Tensor:
        loc = self.decode_zy(z, y)
        if self.cfg.likelihood == "bernoulli":
            return BernoulliVec(loc).log_prob(x)
        return LaplaceLik(loc, T.exp(self.params["dec_log_scale"])).log_prob(x)

    def parameters(self) -> dict:
        return self.params
