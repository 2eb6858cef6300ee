"""Training objectives: the characteristic-latent bounds and the baselines.

Every estimator returns an ObjectiveEstimate holding the bound value (higher
is better), a component breakdown that sums exactly to the value, the
per-point estimates, and two scalar tensors: `objective` (the value's graph)
and `surrogate` (objective plus gradient-only additions: zero-mean score
terms for discrete label draws, and the optional classifier-strength boost).
Trainers minimize the negated surrogate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .distributions import DiagGaussian, std_normal_log_prob
from .model import split_characteristic, tile_labels
from .tensor import Tensor

ENUM_GUARD = 4096


class DegenerateWeights(ArithmeticError):
    """Every classifier weight underflowed; clamping has failed."""


class LabelSpaceTooLarge(ValueError):
    """Exact enumeration requested beyond the combination guard."""


class BothBatchesEmpty(ValueError):
    """dataset_loss needs at least one non-empty batch."""


@dataclass
class HyperParams:
    alpha: float = 1.0
    beta: float = 1.0
    k_sup: int = 8
    k_unsup: int = 8
    exact_marginal_y: bool = False
    classifier_weight: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.k_sup < 1 or self.k_unsup < 1:
            raise ValueError("sample counts must be >= 1")
        if self.classifier_weight < 0:
            raise ValueError("classifier_weight must be nonnegative")


@dataclass
class ObjectiveEstimate:
    value: float
    components: dict
    k: int
    objective: Tensor
    surrogate: Tensor
    per_point: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if T.is_checked():
            if not np.isfinite(self.value):
                raise ArithmeticError("non-finite objective estimate")
            total = sum(self.components.values())
            if abs(total - self.value) > 1e-9:
                raise ArithmeticError(
                    f"components sum {total} != value {self.value}")


def _finish(components: dict, k: int, per_point: np.ndarray,
            extra_term: Tensor | None = None) -> ObjectiveEstimate:
    """Assemble the estimate so value == sum(component floats) exactly."""
    objective = None
    floats = {}
    for name, tens in components.items():
        floats[name] = tens.item()
        objective = tens if objective is None else T.add(objective, tens)
    surrogate = objective if extra_term is None else T.add(objective, extra_term)
    return ObjectiveEstimate(value=sum(floats.values()), components=floats,
                             k=k, objective=objective, surrogate=surrogate,
                             per_point=per_point)


def _rows(x: Tensor) -> int:
    return x.shape[0] if x.ndim == 2 else 1


def revae_supervised_loss(model, x: Tensor, y, k: int,
                          rng: np.random.Generator,
                          reparam_classifier_sample: bool = False,
                          classifier_weight: float = 1.0) -> ObjectiveEstimate:
    """Supervised bound via self-normalized importance weighting.

    K posterior draws are shared between the weights, the classifier
    estimate, and the integrand. By default the latent fed to the classifier
    is detached (not reparameterized), which keeps classifier evaluations
    out of the encoder's pathwise gradient.

    classifier_weight > 1 strengthens the classifier's training signal by
    adding (weight - 1) * E[log q(y | z_c)] to the surrogate through the
    reparameterized path; the reported value stays the plain bound.
    """
    b = _rows(x)
    q = model.encode(x)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    y_rep = tile_labels(model.layout, y, k)

    z_cls = z if reparam_classifier_sample else z.detach()
    zc_cls, _ = split_characteristic(model.layout, z_cls)
    log_q_cls = model.classifier_log_prob(y_rep, zc_cls)          # [k*b]
    lw = T.reshape(log_q_cls, (k, b))
    log_norm = T.logsumexp(lw, axis=0)                            # [b]
    if np.any(np.isneginf(log_norm.values)):
        raise DegenerateWeights("all classifier weights underflowed")
    w = T.exp(T.sub(lw, T.reshape(log_norm, (1, b))))             # [k, b]
    log_qhat = T.sub(log_norm, float(np.log(k)))                  # [b]

    recon = T.reshape(model.log_likelihood(x_rep, z), (k, b))
    log_pzy = T.reshape(model.log_prior_z_given_y(z, y_rep), (k, b))
    log_qzx = T.reshape(q.tile(k).log_prob(z), (k, b))
    neg_cls = T.neg(lw)

    def weighted(term):
        return T.reduce_sum(T.mul(w, term), axis=0)               # [b]

    recon_pp = weighted(recon)
    latent_pp = weighted(T.sub(log_pzy, log_qzx))
    cls_pp = T.add(weighted(neg_cls), log_qhat)
    prior_pp = model.log_prior_y(y)

    per_point = (recon_pp.values + latent_pp.values + cls_pp.values
                 + prior_pp.values)
    components = {
        "reconstruction": T.reduce_mean(recon_pp),
        "latent": T.reduce_mean(latent_pp),
        "classifier": T.reduce_mean(cls_pp),
        "label_prior": T.reduce_mean(prior_pp),
    }
    boost = None
    if classifier_weight != 1.0:
        zc_live, _ = split_characteristic(model.layout, z)
        lq_live = model.classifier_log_prob(y_rep, zc_live)
        boost = T.mul(T.reduce_mean(lq_live), classifier_weight - 1.0)
    return _finish(components, k, per_point, extra_term=boost)


def revae_unsupervised_loss(model, x: Tensor, k: int,
                            rng: np.random.Generator) -> ObjectiveEstimate:
    """Unsupervised bound with labels sampled from the latent classifier.

    Labels are exact draws (no relaxation). Pathwise gradients flow through
    the latent; the discrete label draw contributes a score-function term
    with a per-batch mean baseline, aimed at the classifier parameters.
    """
    b = _rows(x)
    q = model.encode(x)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    zc, _ = split_characteristic(model.layout, z)
    y_s = model.classifier_sample(zc.detach(), rng)

    log_q_cls = model.classifier_log_prob(y_s, zc)                 # [k*b]
    recon = model.log_likelihood(x_rep, z)
    log_pzy = model.log_prior_z_given_y(z, y_s)
    log_py = model.log_prior_y(y_s)
    log_qzx = q.tile(k).log_prob(z)

    f_vals = (recon.values + log_pzy.values + log_py.values
              - log_q_cls.values - log_qzx.values)
    per_point = f_vals.reshape(k, b).mean(axis=0)

    components = {
        "reconstruction": T.reduce_mean(recon),
        "latent": T.reduce_mean(T.sub(log_pzy, log_qzx)),
        "classifier": T.reduce_mean(T.neg(log_q_cls)),
        "label_prior": T.reduce_mean(log_py),
    }

    # Score term: E[(f - baseline) d log q(y|z_c)] with detached z_c, so the
    # learning signal lands on the classifier parameters.
    zc_bar, _ = split_characteristic(model.layout, z.detach())
    log_q_bar = model.classifier_log_prob(y_s, zc_bar)
    advantage = Tensor(f_vals - f_vals.mean())
    score = T.reduce_mean(T.mul(advantage, log_q_bar))
    return _finish(components, k, per_point, extra_term=score)


def revae_unsupervised_exact(model, x: Tensor, k: int,
                             rng: np.random.Generator) -> ObjectiveEstimate:
    """Single-application bound with the label marginal computed exactly."""
    lay = model.layout
    combos = lay.num_classes if lay.is_multiclass else 2 ** lay.L
    if combos > ENUM_GUARD:
        raise LabelSpaceTooLarge(f"{combos} label combinations > {ENUM_GUARD}")
    b = _rows(x)
    q = model.encode(x)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    zc, znc = split_characteristic(model.layout, z)

    recon = model.log_likelihood(x_rep, z)
    log_pzc = model.log_prior_zc_exact(zc)
    log_pznc = (std_normal_log_prob(znc) if lay.m_notc
                else Tensor(np.zeros(k * b)))
    log_qzx = q.tile(k).log_prob(z)

    per_point = (recon.values + log_pzc.values + log_pznc.values
                 - log_qzx.values).reshape(k, b).mean(axis=0)
    components = {
        "reconstruction": T.reduce_mean(recon),
        "latent": T.reduce_mean(
            T.sub(T.add(log_pzc, log_pznc), log_qzx)),
        "classifier": Tensor(0.0),
        "label_prior": Tensor(0.0),
    }
    return _finish(components, k, per_point)


def dataset_loss(model, sup_batch, unsup_batch, hp: HyperParams,
                 rng: np.random.Generator):
    """Combined bound over a labeled and an unlabeled sub-batch, negated.

    Returns (loss tensor to minimize, info dict with bound values).
    """
    sup_empty = sup_batch is None or _rows(sup_batch[0]) == 0
    unsup_empty = unsup_batch is None or _rows(unsup_batch) == 0
    if sup_empty and unsup_empty:
        raise BothBatchesEmpty("no data in either sub-batch")
    total = None
    info = {"bound": 0.0, "sup": None, "unsup": None}
    if not sup_empty:
        xs, ys = sup_batch
        est = revae_supervised_loss(model, xs, ys, hp.k_sup, rng,
                                    classifier_weight=hp.classifier_weight)
        total = est.surrogate
        info["sup"] = est
    if not unsup_empty:
        if hp.exact_marginal_y:
            est = revae_unsupervised_exact(model, unsup_batch, hp.k_unsup, rng)
        else:
            est = revae_unsupervised_loss(model, unsup_batch, hp.k_unsup, rng)
        total = est.surrogate if total is None else T.add(total, est.surrogate)
        info["unsup"] = est
    info["bound"] = sum(e.value for e in (info["sup"], info["unsup"])
                        if e is not None)
    return T.neg(total), info


def m3_loss(model, x: Tensor, y, hp: HyperParams,
            rng: np.random.Generator) -> ObjectiveEstimate:
    """Plain ELBO with a standard-normal prior over the whole latent, plus an
    alpha-weighted latent classifier term on labeled points."""
    b = _rows(x)
    k = hp.k_sup if y is not None else hp.k_unsup
    q = model.encode(x)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    recon = model.log_likelihood(x_rep, z)
    log_pz = std_normal_log_prob(z)
    log_qzx = q.tile(k).log_prob(z)

    per_point = (recon.values + log_pz.values
                 - log_qzx.values).reshape(k, b).mean(axis=0)
    components = {
        "reconstruction": T.reduce_mean(recon),
        "latent": T.reduce_mean(T.sub(log_pz, log_qzx)),
        "classifier": Tensor(0.0),
        "label_prior": Tensor(0.0),
    }
    if y is not None and hp.alpha > 0:
        zc, _ = split_characteristic(model.layout, z)
        y_rep = tile_labels(model.layout, y, k)
        cls = model.classifier_log_prob(y_rep, zc)
        components["classifier"] = T.mul(T.reduce_mean(cls), hp.alpha)
        per_point = per_point + hp.alpha * cls.values.reshape(k, b).mean(axis=0)
    return _finish(components, k, per_point)


def m2_loss(model, x: Tensor, y, hp: HyperParams,
            rng: np.random.Generator) -> ObjectiveEstimate:
    """Labels-in-latent baseline: observed labels condition the encoder and
    decoder; unobserved labels are enumerated exactly."""
    if y is not None:
        return _m2_supervised(model, x, y, hp, rng)
    return _m2_unsupervised(model, x, hp, rng)


def _m2_conditional_bound(model, x, y, k, rng):
    """E_q[log p(x|z,y)] - KL(q(z|x,y) || N(0,I)) + log p(y), per point."""
    b = _rows(x)
    q = model.encode_xy(x, y)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    y_rep = tile_labels(model.layout, y, k)
    recon = T.reduce_mean(T.reshape(
        model.log_likelihood_zy(x_rep, z, y_rep), (k, b)), axis=0)
    kl = q.kl_std()
    log_py = model.log_prior_y(y)
    return recon, kl, log_py


def _m2_supervised(model, x, y, hp, rng):
    b = _rows(x)
    recon, kl, log_py = _m2_conditional_bound(model, x, y, hp.k_sup, rng)
    components = {
        "reconstruction": T.reduce_mean(recon),
        "latent": T.reduce_mean(T.neg(kl)),
        "label_prior": T.reduce_mean(log_py),
        "classifier": Tensor(0.0),
    }
    per_point = recon.values - kl.values + log_py.values
    if hp.alpha > 0:
        cls = model.classifier_log_prob_x(y, x)
        components["classifier"] = T.mul(T.reduce_mean(cls), hp.alpha)
        per_point = per_point + hp.alpha * cls.values
    return _finish(components, hp.k_sup, per_point)


def _enumerate_labels(layout):
    if layout.is_multiclass:
        return [np.array(c) for c in range(layout.num_classes)]
    return [np.array(bits, dtype=np.float64)
            for bits in itertools.product((0.0, 1.0), repeat=layout.L)]


def _m2_unsupervised(model, x, hp, rng):
    lay = model.layout
    combos = lay.num_classes if lay.is_multiclass else 2 ** lay.L
    if combos > ENUM_GUARD:
        raise LabelSpaceTooLarge(f"{combos} label combinations > {ENUM_GUARD}")
    b = _rows(x)
    probs = model.classifier_probs_x(x)                            # [b, Y]
    bound = None
    recon_mix = None
    for y_single in _enumerate_labels(lay):
        if lay.is_multiclass:
            y_batch = np.full(b, int(y_single))
            w = T.narrow(probs, -1, int(y_single), 1)              # [b, 1]
            w = T.reshape(w, (b,))
        else:
            y_batch = np.tile(y_single, (b, 1))
            yv = Tensor(np.tile(y_single, (b, 1)))
            w = T.exp(T.reduce_sum(
                T.add(T.mul(yv, T.log(T.clip(probs, 1e-12, 1.0))),
                      T.mul(T.sub(1.0, yv),
                            T.log(T.clip(T.sub(1.0, probs), 1e-12, 1.0)))),
                axis=-1))
        recon, kl, log_py = _m2_conditional_bound(model, x, y_batch,
                                                  hp.k_unsup, rng)
        term = T.mul(w, T.add(T.sub(recon, kl), log_py))
        bound = term if bound is None else T.add(bound, term)
        rec_term = T.mul(w, recon)
        recon_mix = rec_term if recon_mix is None else T.add(recon_mix, rec_term)
    # Entropy of the imputation distribution.
    safe = T.clip(probs, 1e-12, 1.0 - 1e-12)
    if lay.is_multiclass:
        ent = T.neg(T.reduce_sum(T.mul(safe, T.log(safe)), axis=-1))
    else:
        ent = T.neg(T.reduce_sum(
            T.add(T.mul(safe, T.log(safe)),
                  T.mul(T.sub(1.0, safe), T.log(T.sub(1.0, safe)))), axis=-1))
    per_point = bound.values + ent.values
    components = {
        "reconstruction": T.reduce_mean(recon_mix),
        "latent": T.reduce_mean(T.sub(bound, recon_mix)),
        "classifier": T.reduce_mean(ent),
        "label_prior": Tensor(0.0),
    }
    return _finish(components, hp.k_unsup, per_point)


def diva_supervised_loss(model, x: Tensor, y, hp: HyperParams,
                         rng: np.random.Generator) -> ObjectiveEstimate:
    """KL-regularized reconstruction with the characteristic block pulled
    toward its label-conditioned prior; adds the alpha classifier term."""
    b = _rows(x)
    k = hp.k_sup
    lay = model.layout
    q = model.encode(x)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    mu_c = T.narrow(q.mu, -1, 0, lay.m_c)
    ls_c = T.narrow(q.log_sigma, -1, 0, lay.m_c)
    mu_n = T.narrow(q.mu, -1, lay.m_c, lay.m_notc)
    ls_n = T.narrow(q.log_sigma, -1, lay.m_c, lay.m_notc)
    q_c = DiagGaussian(mu_c, ls_c)
    q_n = DiagGaussian(mu_n, ls_n)

    recon = T.reduce_mean(T.reshape(
        model.log_likelihood(x_rep, z), (k, b)), axis=0)           # [b]
    kl_n = q_n.kl_std() if lay.m_notc else Tensor(np.zeros(b))
    kl_c = q_c.kl_to(model.conditional_prior(y))
    per_point = recon.values - hp.beta * (kl_n.values + kl_c.values)
    components = {
        "reconstruction": T.reduce_mean(recon),
        "latent": T.mul(T.reduce_mean(T.add(kl_n, kl_c)), -hp.beta),
        "classifier": Tensor(0.0),
        "label_prior": Tensor(0.0),
    }
    if hp.alpha > 0:
        zc, _ = split_characteristic(lay, z)
        y_rep = tile_labels(lay, y, k)
        cls = model.classifier_log_prob(y_rep, zc)
        components["classifier"] = T.mul(T.reduce_mean(cls), hp.alpha)
        per_point = per_point + hp.alpha * cls.values.reshape(k, b).mean(axis=0)
    return _finish(components, k, per_point)


def diva_unsupervised_loss(model, x: Tensor, hp: HyperParams,
                           rng: np.random.Generator) -> ObjectiveEstimate:
    """Unsupervised variant with labels imputed by sampling the classifier."""
    b = _rows(x)
    k = hp.k_unsup
    lay = model.layout
    q = model.encode(x)
    z = q.sample_k(k, rng)
    x_rep = T.repeat_rows(x, k)
    zc, _ = split_characteristic(lay, z)
    mu_n = T.narrow(q.mu, -1, lay.m_c, lay.m_notc)
    ls_n = T.narrow(q.log_sigma, -1, lay.m_c, lay.m_notc)
    kl_n = (DiagGaussian(mu_n, ls_n).kl_std() if lay.m_notc
            else Tensor(np.zeros(b)))

    y_s = model.classifier_sample(zc.detach(), rng)
    log_q_cls = model.classifier_log_prob(y_s, zc)
    log_pzc = model.conditional_prior(y_s).log_prob(zc)
    mu_c = T.narrow(q.mu, -1, 0, lay.m_c)
    ls_c = T.narrow(q.log_sigma, -1, 0, lay.m_c)
    log_qzc = DiagGaussian(mu_c, ls_c).tile(k).log_prob(zc)
    log_py = model.log_prior_y(y_s)

    recon = T.reduce_mean(T.reshape(
        model.log_likelihood(x_rep, z), (k, b)), axis=0)
    latent_term = T.reshape(T.sub(log_pzc, log_qzc), (k, b))
    label_term = T.reshape(T.sub(log_py, log_q_cls), (k, b))
    per_point = (recon.values - hp.beta * kl_n.values
                 + hp.beta * latent_term.values.mean(axis=0)
                 + hp.beta * label_term.values.mean(axis=0))
    components = {
        "reconstruction": T.reduce_mean(recon),
        "latent": T.add(T.mul(T.reduce_mean(kl_n), -hp.beta),
                        T.mul(T.reduce_mean(latent_term), hp.beta)),
        "classifier": T.mul(T.reduce_mean(label_term), hp.beta),
        "label_prior": Tensor(0.0),
    }
    # Score correction for the sampled label, detached-latent signal.
    s_vals = hp.beta * (log_pzc.values + log_py.values - log_q_cls.values)
    zc_bar, _ = split_characteristic(lay, z.detach())
    log_q_bar = model.classifier_log_prob(y_s, zc_bar)
    advantage = Tensor(s_vals - s_vals.mean())
    score = T.reduce_mean(T.mul(advantage, log_q_bar))
    return _finish(components, k, per_point, extra_term=score)
