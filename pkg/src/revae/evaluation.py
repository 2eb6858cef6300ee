"""Evaluation procedures: accuracy, interventions, traversals, diversity maps,
characteristic swaps, intervention confusion matrices, rejection sampling,
and conditional generation.

All latent surgery works on posterior means and modifies only the targeted
coordinates, so the untouched part of the latent is preserved bit-exactly
and every procedure is deterministic given its seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .distributions import DiagGaussian, PROB_EPS
from .model import LatentLayout
from .tensor import Tensor
from .training import AdamState, adam_step, clip_global_norm, evaluate_accuracy


class MaxTriesExceeded(RuntimeError):
    """Rejection sampling gave up; carries the block that never passed."""

    def __init__(self, block: int, tries: int):
        super().__init__(f"block {block} failed {tries} draws; "
                         "threshold infeasible under the prior")
        self.block = block
        self.tries = tries


class InsufficientSamples(ValueError):
    """Fewer eligible datapoints than the minimum for a confusion row."""


# -- latent helpers ------------------------------------------------------------

def posterior_mean(model, x_flat: np.ndarray) -> np.ndarray:
    """Encoded mean latent for one flat image."""
    q = model.encode(Tensor(x_flat[None, :]))
    return q.mu.values[0].copy()


def decode_image(model, z: np.ndarray) -> np.ndarray:
    h, w = model.cfg.image_shape
    out = model.decode(Tensor(z[None, :])).values[0]
    return out.reshape(h, w)


def classifier_probs_of(model, z: np.ndarray) -> np.ndarray:
    zc = z[: model.layout.m_c]
    return model.classifier_probs(Tensor(zc[None, :])).values[0].copy()


# -- interventions --------------------------------------------------------------

@dataclass
class InterventionRequest:
    image: np.ndarray            # flat [D] source image
    label: int
    value: int                   # target label value in {0, 1}
    mode: str = "resample"       # resample | mean | set
    seed: int = 0
    set_value: float = 0.0       # used by mode="set"

    def __post_init__(self):
        if self.mode not in ("resample", "mean", "set"):
            raise ValueError(f"unknown intervention mode '{self.mode}'")
        if self.value not in (0, 1):
            raise ValueError("target value must be 0 or 1")
        if self.mode == "set" and not np.isfinite(self.set_value):
            raise ValueError("mode='set' needs a finite scalar")


@dataclass
class InterventionResult:
    image: np.ndarray            # [H, W] decoded after surgery
    probs_before: np.ndarray
    probs_after: np.ndarray
    z_before: np.ndarray
    z_after: np.ndarray


def _block_conditional(model, label: int, value: int) -> DiagGaussian:
    lay = model.layout
    y = np.zeros((1, lay.L))
    y[0, label] = float(value)
    d = model.conditional_prior(y)
    s = lay.block_slices()[label]
    return DiagGaussian(Tensor(d.mu.values[0, s]),
                        Tensor(d.log_sigma.values[0, s]))


def intervene(model, req: InterventionRequest) -> InterventionResult:
    lay = model.layout
    if not 0 <= req.label < lay.L:
        raise IndexError(f"label {req.label} out of range")
    z = posterior_mean(model, req.image)
    probs_before = classifier_probs_of(model, z)
    z_after = z.copy()
    s = lay.block_slices()[req.label]
    if req.mode == "set":
        z_after[s] = req.set_value
    else:
        cond = _block_conditional(model, req.label, req.value)
        if req.mode == "mean":
            z_after[s] = cond.mu.values
        else:
            rng = np.random.default_rng(req.seed)
            z_after[s] = (cond.mu.values
                          + np.exp(cond.log_sigma.values)
                          * rng.standard_normal(s.stop - s.start))
    return InterventionResult(
        image=decode_image(model, z_after),
        probs_before=probs_before,
        probs_after=classifier_probs_of(model, z_after),
        z_before=z,
        z_after=z_after,
    )


@dataclass
class TraversalGrid:
    image: np.ndarray            # flat source image
    dim_i: int                   # label block varied along rows
    dim_j: int                   # label block varied along columns
    lo: float = -3.0
    hi: float = 3.0
    g: int = 8

    def __post_init__(self):
        if self.g < 2:
            raise ValueError("grid size must be >= 2")


def traverse(model, grid: TraversalGrid) -> np.ndarray:
    """[g, g, H, W] decoded grid; row-major, dim_i varies along rows."""
    lay = model.layout
    for d in (grid.dim_i, grid.dim_j):
        if not 0 <= d < lay.L:
            raise IndexError(f"dim {d} out of range")
    z = posterior_mean(model, grid.image)
    values = np.linspace(grid.lo, grid.hi, grid.g)
    si = lay.block_slices()[grid.dim_i]
    sj = lay.block_slices()[grid.dim_j]
    h, w = model.cfg.image_shape
    out = np.empty((grid.g, grid.g, h, w))
    zs = np.tile(z, (grid.g * grid.g, 1))
    for r in range(grid.g):
        for c in range(grid.g):
            zs[r * grid.g + c, si] = values[r]
            zs[r * grid.g + c, sj] = values[c]
    decoded = model.decode(Tensor(zs)).values
    return decoded.reshape(grid.g, grid.g, h, w)


def diversity_map(model, x_flat: np.ndarray, label: int, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Pixel variance under repeated block draws from p(z_c^i | y_i = 1)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    lay = model.layout
    z = posterior_mean(model, x_flat)
    s = lay.block_slices()[label]
    cond = _block_conditional(model, label, 1)
    zs = np.tile(z, (n, 1))
    zs[:, s] = (cond.mu.values
                + np.exp(cond.log_sigma.values)
                * rng.standard_normal((n, s.stop - s.start)))
    decoded = model.decode(Tensor(zs)).values
    h, w = model.cfg.image_shape
    return decoded.var(axis=0).reshape(h, w)


def characteristic_swap(model, x_a: np.ndarray, x_b: np.ndarray) -> np.ndarray:
    """Decode the characteristics of a onto the residual context of b."""
    lay = model.layout
    za = posterior_mean(model, x_a)
    zb = posterior_mean(model, x_b)
    z = np.concatenate([za[: lay.m_c], zb[lay.m_c:]])
    return decode_image(model, z)


# -- external classifier ------------------------------------------------------------

class ExternalClassifier:
    """Independently trained supervised MLP used only for metrics."""

    def __init__(self, input_dim: int, n_labels: int, hidden: int = 400,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n_labels = n_labels
        self.params = {
            "w1": Tensor.param(rng.normal(0, np.sqrt(2.0 / input_dim),
                                          (input_dim, hidden))),
            "b1": Tensor.param(np.zeros(hidden)),
            "w2": Tensor.param(rng.normal(0, np.sqrt(2.0 / hidden),
                                          (hidden, hidden))),
            "b2": Tensor.param(np.zeros(hidden)),
            "w3": Tensor.param(rng.normal(0, 0.01, (hidden, n_labels))),
            "b3": Tensor.param(np.zeros(n_labels)),
        }

    def logits(self, x: Tensor) -> Tensor:
        p = self.params
        h = T.relu(T.add(T.matmul(x, p["w1"]), p["b1"]))
        h = T.relu(T.add(T.matmul(h, p["w2"]), p["b2"]))
        return T.add(T.matmul(h, p["w3"]), p["b3"])

    def probs(self, x: np.ndarray) -> np.ndarray:
        from .tensor import sigmoid
        return sigmoid(self.logits(Tensor(np.atleast_2d(x)))).values

    def log_probs_on(self, x: np.ndarray) -> np.ndarray:
        """log p(y_i = 1 | x) per label, clamped away from -inf."""
        p = np.clip(self.probs(x), PROB_EPS, 1 - PROB_EPS)
        return np.log(p)


def train_external_classifier(dataset, epochs: int = 20, seed: int = 9999,
                              hidden: int = 400, lr: float = 1e-3,
                              batch_size: int = 128) -> ExternalClassifier:
    """Supervised training on fully labeled data with its own seed."""
    if dataset.is_multiclass:
        raise ValueError("external classifier supports multi-label data")
    d = dataset.flat_images().shape[1]
    clf = ExternalClassifier(d, dataset.labels.shape[1], hidden, seed)
    state = AdamState.init(clf.params, lr)
    rng = np.random.default_rng(seed + 1)
    flat = dataset.flat_images()
    for _ in range(epochs):
        order = rng.permutation(dataset.n)
        for start in range(0, dataset.n, batch_size):
            idx = order[start:start + batch_size]
            x = Tensor(flat[idx])
            y = dataset.labels[idx]
            with T.Tape() as tape:
                logits = clf.logits(x)
                ll = T.add(T.mul(Tensor(y), T.log_sigmoid(logits)),
                           T.mul(Tensor(1.0 - y),
                                 T.log_sigmoid(T.neg(logits))))
                loss = T.neg(T.reduce_mean(T.reduce_sum(ll, axis=-1)))
                grads_map = tape.backward(loss)
            grads = {k: grads_map.of(p) for k, p in clf.params.items()}
            grads = clip_global_norm(grads, 100.0)
            adam_step(clf.params, grads, state)
    return clf


# -- swap and confusion metrics --------------------------------------------------------

def swap_logprob_diff(model, ext: ExternalClassifier, pairs) -> dict:
    """Mean |log p_ext(y_i=1 | x_a) - log p_ext(y_i=1 | swap(a, b))|.

    The swap preserves x_a's characteristics, so an ideal model leaves the
    external classifier's per-label log-probabilities unchanged.
    """
    diffs = []
    for x_a, x_b in pairs:
        swapped = characteristic_swap(model, x_a, x_b).reshape(-1)
        la = ext.log_probs_on(x_a)[0]
        ls = ext.log_probs_on(swapped)[0]
        diffs.append(np.abs(la - ls))
    diffs = np.stack(diffs)
    return {
        "mean": float(diffs.mean()),
        "std_error": float(diffs.mean(axis=1).std(ddof=1)
                           / np.sqrt(len(pairs))),
        "n": len(pairs),
        "per_label": diffs.mean(axis=0).tolist(),
    }


def intervention_confusion(model, ext: ExternalClassifier, dataset, n: int,
                           rng: np.random.Generator,
                           min_eligible: int = 10) -> tuple:
    """(L x L matrix, condition number).

    Entry (i, j): mean change in the external classifier's log p(y_j = 1)
    when label i is switched on, over up to n datapoints that originally
    had y_i = 0.
    """
    lay = model.layout
    L = lay.L
    flat = dataset.flat_images()
    matrix = np.zeros((L, L))
    for i in range(L):
        eligible = np.flatnonzero(dataset.labels[:, i] == 0.0)
        if eligible.size < min_eligible:
            raise InsufficientSamples(
                f"label {i}: only {eligible.size} datapoints with y_i=0")
        take = eligible[:n]
        deltas = np.zeros((take.size, L))
        for t, idx in enumerate(take):
            x = flat[idx]
            res = intervene(model, InterventionRequest(
                image=x, label=i, value=1, mode="resample",
                seed=int(rng.integers(2**31))))
            recon = decode_image(model, res.z_before).reshape(-1)
            after = res.image.reshape(-1)
            deltas[t] = ext.log_probs_on(after)[0] - ext.log_probs_on(recon)[0]
        matrix[i] = deltas.mean(axis=0)
    cond = float(np.linalg.cond(matrix))
    return matrix, cond


def diagonal_dominance(matrix: np.ndarray) -> float:
    """Mean diagonal over mean absolute off-diagonal."""
    L = matrix.shape[0]
    diag = np.diag(matrix).mean()
    off = np.abs(matrix[~np.eye(L, dtype=bool)]).mean()
    return float(diag / off) if off > 0 else float("inf")


# -- conditional generation --------------------------------------------------------------

def rejection_sample_conditional(layout: LatentLayout,
                                 classifier_fn: Callable[[np.ndarray], np.ndarray],
                                 prior: DiagGaussian,
                                 y: np.ndarray, lam: float, max_tries: int,
                                 rng: np.random.Generator) -> tuple:
    """Per-block rejection: draw block i until q(y_i | z_c^i) > lam.

    classifier_fn maps a [1, m_c] characteristic latent to [1, L] per-label
    probabilities; the block structure makes per-block acceptance exact.
    Returns (z_c, tries per block).
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lam must be in (0, 1)")
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    mu = prior.mu.values.reshape(-1)
    sd = np.exp(prior.log_sigma.values.reshape(-1))
    z = np.zeros(layout.m_c)
    tries = np.zeros(layout.L, dtype=int)
    for i, s in enumerate(layout.block_slices()):
        accepted = False
        for _ in range(max_tries):
            tries[i] += 1
            z[s] = mu[s] + sd[s] * rng.standard_normal(s.stop - s.start)
            p1 = classifier_fn(z[None, :])[0, i]
            p = p1 if y[i] == 1 else 1.0 - p1
            if p > lam:
                accepted = True
                break
        if not accepted:
            raise MaxTriesExceeded(i, max_tries)
    return z, tries


def conditional_generate(model, y: np.ndarray, n: int,
                         rng: np.random.Generator,
                         fix_znotc: bool = False) -> np.ndarray:
    """Decode n draws of z_c ~ p(z_c | y); residual fixed or resampled."""
    lay = model.layout
    cond = model.conditional_prior(np.asarray(y, dtype=np.float64)[None, :]
                                   if not lay.is_multiclass else y)
    mu = cond.mu.values.reshape(-1)
    sd = np.exp(cond.log_sigma.values.reshape(-1))
    shared_notc = rng.standard_normal(lay.m_notc)
    zs = np.empty((n, lay.m))
    for j in range(n):
        zs[j, : lay.m_c] = mu + sd * rng.standard_normal(lay.m_c)
        zs[j, lay.m_c:] = shared_notc if fix_znotc else rng.standard_normal(lay.m_notc)
    decoded = model.decode(Tensor(zs)).values
    h, w = model.cfg.image_shape
    return decoded.reshape(n, h, w)


# -- classifier gradient variance experiment ---------------------------------------------------

def classifier_gradient_variance(train_dataset, steps: int = 200,
                                 batch_size: int = 64, k: int = 4,
                                 lr: float = 2e-4, seed: int = 0,
                                 hidden: int = 400, m_notc: int = 16):
    """Train twice from one init, with and without reparameterizing the
    latent fed to the classifier, and record the classifier gradient norm
    at every step.

    Both runs see identical batches and identical noise draws. Returns a
    dict with the two norm traces and their standard deviations.
    """
    from . import objectives as O
    from .model import ModelConfig, ReVAEModel

    flat = train_dataset.flat_images()
    labels = train_dataset.labels
    lay = LatentLayout(list(train_dataset.attr_names),
                       [1] * labels.shape[1], m_notc)
    traces = {}
    for variant, reparam in (("detached", False), ("reparameterized", True)):
        cfg = ModelConfig(image_shape=train_dataset.image_shape, layout=lay,
                          likelihood="laplace", hidden=hidden)
        model = ReVAEModel(cfg, seed=seed)
        model.set_label_prior(train_dataset.label_frequencies())
        state = AdamState.init(model.params, lr)
        data_rng = np.random.default_rng(seed + 1)
        mc_rng = np.random.default_rng(seed + 2)
        norms = np.empty(steps)
        for step in range(steps):
            idx = data_rng.permutation(train_dataset.n)[:batch_size]
            x, y = Tensor(flat[idx]), labels[idx]
            with T.Tape() as tape:
                from . import objectives as O_
                est = O_.revae_supervised_loss(
                    model, x, y, k, mc_rng,
                    reparam_classifier_sample=reparam)
                grads_map = tape.backward(T.neg(est.surrogate))
            grads = {name: grads_map.of(p) for name, p in model.params.items()}
            sq = sum(float((grads[name] ** 2).sum())
                     for name in ("cls_w", "cls_b") if grads[name] is not None)
            norms[step] = np.sqrt(sq)
            grads = clip_global_norm(grads, 100.0)
            adam_step(model.params, grads, state)
        traces[variant] = norms
    det, rep = traces["detached"], traces["reparameterized"]
    return {
        "detached": det,
        "reparameterized": rep,
        "sd_detached": float(det.std(ddof=1)),
        "sd_reparameterized": float(rep.std(ddof=1)),
        "f_statistic": float(rep.var(ddof=1) / det.var(ddof=1)),
    }


# -- metric documents ------------------------------------------------------------------------

def classification_accuracy(model, dataset, k: int, seed: int = 0) -> float:
    return evaluate_accuracy(model, dataset, k, seed)


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def metric_document(name: str, cfg_hash: str, value, std_error=None,
                    n=None, extra=None) -> dict:
    doc = {"metric": name, "config_hash": cfg_hash, "value": value,
           "std_error": std_error, "n": n}
    if extra:
        doc.update(extra)
    return doc
