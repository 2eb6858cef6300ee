"""Optimization loop: Adam, epoch scheduling, metric logging, checkpoints.

Runs are deterministic given (config, seed): one master generator drives
batch order and objective sampling in a fixed sequence, and its state is
serialized into every checkpoint so a resumed run is bit-identical to an
uninterrupted one.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import objectives as obj
from . import tensor as T
from .config import TrainConfig, resolve_datasets, resolve_layout, resolve_likelihood
from .data import batches, semi_split
from .model import M2Model, ModelConfig, ReVAEModel, predict
from .tensor import Tensor

CHECKPOINT_MAGIC = b"RVAE"
CHECKPOINT_VERSION = 1


class NonFiniteLoss(ArithmeticError):
    """Training hit a NaN/Inf loss; carries batch id and component breakdown."""


class VersionMismatch(ValueError):
    """Checkpoint was written by an incompatible format version."""


class CorruptFile(ValueError):
    """Checkpoint bytes do not parse back into a model."""


@dataclass
class AdamState:
    lr: float
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(params: dict, lr: float) -> "AdamState":
        return AdamState(lr=lr,
                         m={k: np.zeros_like(p.values) for k, p in params.items()},
                         v={k: np.zeros_like(p.values) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """Bias-corrected Adam update, in place on the parameter tensors."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.values.shape:
            raise T.ShapeMismatch(f"{name}: grad {g.shape} vs param {p.values.shape}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: (None if g is None else g * scale) for k, g in grads.items()}


# -- checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    version: int
    config: dict                  # resolved TrainConfig fields
    model_config: dict            # ModelConfig serialization
    params: dict                  # name -> np.ndarray
    adam: Optional[dict]          # {"lr", "step", "m": {...}, "v": {...}}
    rng_state: Optional[dict]
    epoch: int
    history: list = field(default_factory=list)
    label_prior: Optional[list] = None
    model_kind: str = "revae"
    m2_z_style: int = 0

    def build_model(self):
        cfg = ModelConfig.from_json(self.model_config)
        if self.model_kind == "m2":
            model = M2Model(cfg, z_style=self.m2_z_style)
        else:
            model = ReVAEModel(cfg)
        for name, val in self.params.items():
            p = model.params.get(name)
            if p is None or p.values.shape != val.shape:
                raise CorruptFile(f"parameter '{name}' does not fit the model")
            p.values = val.copy()
        if self.label_prior is not None:
            model.set_label_prior(np.array(self.label_prior))
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Fixed binary layout: magic, version, JSON header, float64 blobs."""
    header = {
        "config": ckpt.config,
        "model_config": ckpt.model_config,
        "param_manifest": [(k, list(v.shape)) for k, v in ckpt.params.items()],
        "adam_meta": None if ckpt.adam is None else {
            "lr": ckpt.adam["lr"], "step": ckpt.adam["step"]},
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "label_prior": ckpt.label_prior,
        "model_kind": ckpt.model_kind,
        "m2_z_style": ckpt.m2_z_style,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack(">I", ckpt.version))
        f.write(struct.pack(">I", len(blob)))
        f.write(blob)
        order = list(ckpt.params)
        for name in order:
            _write_blob(f, ckpt.params[name])
        if ckpt.adam is not None:
            for name in order:
                _write_blob(f, ckpt.adam["m"][name])
            for name in order:
                _write_blob(f, ckpt.adam["v"][name])


def _write_blob(f, arr: np.ndarray) -> None:
    raw = np.ascontiguousarray(arr, dtype=np.float64).tobytes()
    f.write(struct.pack(">Q", len(raw)))
    f.write(raw)


def _read_blob(f, shape, path) -> np.ndarray:
    head = f.read(8)
    if len(head) != 8:
        raise CorruptFile(f"{path}: missing blob length")
    (n,) = struct.unpack(">Q", head)
    raw = f.read(n)
    if len(raw) != n:
        raise CorruptFile(f"{path}: blob truncated ({len(raw)}/{n})")
    arr = np.frombuffer(raw, dtype=np.float64).copy()
    want = int(np.prod(shape)) if shape else 1
    if arr.size != want:
        raise CorruptFile(f"{path}: blob size {arr.size} != shape {shape}")
    return arr.reshape(shape)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CorruptFile(f"{path}: bad magic {magic!r}")
        head = f.read(8)
        if len(head) != 8:
            raise CorruptFile(f"{path}: missing header")
        version, blob_len = struct.unpack(">II", head)
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(
                f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
        blob = f.read(blob_len)
        if len(blob) != blob_len:
            raise CorruptFile(f"{path}: header truncated")
        try:
            header = json.loads(blob)
        except json.JSONDecodeError as e:
            raise CorruptFile(f"{path}: header JSON ({e})")
        params = {}
        for name, shape in header["param_manifest"]:
            params[name] = _read_blob(f, tuple(shape), path)
        adam = None
        if header["adam_meta"] is not None:
            m = {name: _read_blob(f, tuple(shape), path)
                 for name, shape in header["param_manifest"]}
            v = {name: _read_blob(f, tuple(shape), path)
                 for name, shape in header["param_manifest"]}
            adam = {"lr": header["adam_meta"]["lr"],
                    "step": header["adam_meta"]["step"], "m": m, "v": v}
    return Checkpoint(version=version, config=header["config"],
                      model_config=header["model_config"], params=params,
                      adam=adam, rng_state=header["rng_state"],
                      epoch=header["epoch"], history=header["history"],
                      label_prior=header["label_prior"],
                      model_kind=header["model_kind"],
                      m2_z_style=header["m2_z_style"])


# -- fit -----------------------------------------------------------------------------

def build_model(cfg: TrainConfig, train_dataset):
    layout = resolve_layout(cfg, train_dataset)
    likelihood = resolve_likelihood(cfg)
    mc = ModelConfig(image_shape=train_dataset.image_shape, layout=layout,
                     likelihood=likelihood, hidden=cfg.hidden)
    if cfg.objective == "m2":
        return M2Model(mc, z_style=cfg.m2_z_style, seed=cfg.seed)
    return ReVAEModel(mc, seed=cfg.seed)


def _step_loss(kind, model, sup, unsup, hp, rng):
    if kind == "revae":
        return obj.dataset_loss(model, sup, unsup, hp, rng)
    total, info = None, {"sup": None, "unsup": None}
    if sup is not None:
        if kind == "m3":
            est = obj.m3_loss(model, sup[0], sup[1], hp, rng)
        elif kind == "m2":
            est = obj.m2_loss(model, sup[0], sup[1], hp, rng)
        else:
            est = obj.diva_supervised_loss(model, sup[0], sup[1], hp, rng)
        total, info["sup"] = est.surrogate, est
    if unsup is not None:
        if kind == "m3":
            est = obj.m3_loss(model, unsup, None, hp, rng)
        elif kind == "m2":
            est = obj.m2_loss(model, unsup, None, hp, rng)
        else:
            est = obj.diva_unsupervised_loss(model, unsup, hp, rng)
        total = est.surrogate if total is None else T.add(total, est.surrogate)
        info["unsup"] = est
    if total is None:
        raise obj.BothBatchesEmpty("no data in either sub-batch")
    info["bound"] = sum(e.value for e in (info["sup"], info["unsup"])
                        if e is not None)
    return T.neg(total), info


def _to_checkpoint(cfg, model, state, rng, epoch, history) -> Checkpoint:
    # Checkpoints must be byte-identical across reruns, so wall-clock times
    # stay in metrics.jsonl only.
    history = [{k: v for k, v in rec.items() if k != "wall_time"}
               for rec in history]
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        config=cfg.to_json(),
        model_config=model.cfg.to_json(),
        params={k: p.values.copy() for k, p in model.params.items()},
        adam={"lr": state.lr, "step": state.step,
              "m": {k: v.copy() for k, v in state.m.items()},
              "v": {k: v.copy() for k, v in state.v.items()}},
        rng_state=rng.bit_generator.state,
        epoch=epoch,
        history=list(history),
        label_prior=model.label_prior.tolist(),
        model_kind="m2" if isinstance(model, M2Model) else "revae",
        m2_z_style=getattr(model, "z_style", 0),
    )


def evaluate_accuracy(model, dataset, k: int, seed: int) -> float:
    """Held-out accuracy: thresholded marginals or top-1 class choice."""
    rng = np.random.default_rng(seed)
    x = Tensor(dataset.flat_images())
    out = predict(model, x, k, rng)
    if dataset.is_multiclass:
        _, pred = out
        return float((pred == dataset.labels).mean())
    return float(((out >= 0.5) == (dataset.labels == 1.0)).mean())


def fit(cfg: TrainConfig, out_dir=None, resume: Optional[Checkpoint] = None,
        log=None):
    """Train per config; returns (final checkpoint, best checkpoint, history).

    Writes {final.ckpt, best.ckpt, metrics.jsonl, config.resolved.json} when
    out_dir is given. Raises NonFiniteLoss with the offending batch id and
    component breakdown if optimization diverges.
    """
    train, test = resolve_datasets(cfg)
    likelihood = resolve_likelihood(cfg)
    if likelihood == "bernoulli":
        train = train.binarized()
        test = test.binarized() if test is not None else None
    split = semi_split(train, cfg.f, cfg.seed)
    hp = cfg.hyper()

    if resume is not None:
        model = resume.build_model()
        state = AdamState(lr=resume.adam["lr"],
                          m={k: v.copy() for k, v in resume.adam["m"].items()},
                          v={k: v.copy() for k, v in resume.adam["v"].items()},
                          step=resume.adam["step"])
        rng = np.random.default_rng(0)
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
        history = list(resume.history)
    else:
        model = build_model(cfg, train)
        if split.labeled.size:
            model.set_label_prior(train.subset(split.labeled).label_frequencies())
        state = AdamState.init(model.params, cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        start_epoch = 0
        history = []

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.resolved.json", "w") as f:
            json.dump({**cfg.to_json(),
                       "layout": model.cfg.layout.to_json(),
                       "likelihood": likelihood}, f, indent=2, sort_keys=True)

    best_acc, best_ckpt = -1.0, None
    for rec in history:
        if rec["accuracy"] is not None and rec["accuracy"] > best_acc:
            best_acc = rec["accuracy"]

    metrics_path = out_dir / "metrics.jsonl" if out_dir is not None else None
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        bound_sum, bound_batches = 0.0, 0
        for batch_id, (sup, unsup) in enumerate(
                batches(train, split, cfg.batch_size, rng)):
            sup_t = None if sup is None else (Tensor(sup[0]), sup[1])
            unsup_t = None if unsup is None else Tensor(unsup)
            with T.Tape() as tape:
                loss, info = _step_loss(cfg.objective, model, sup_t, unsup_t,
                                        hp, rng)
                if not np.isfinite(loss.item()):
                    raise NonFiniteLoss(_diverged_message(epoch, batch_id, info))
                grads_map = tape.backward(loss)
            grads = {k: grads_map.of(p) for k, p in model.params.items()}
            grads = clip_global_norm(grads, cfg.clip_norm)
            adam_step(model.params, grads, state)
            bound_sum += info["bound"]
            bound_batches += 1
        accuracy = (evaluate_accuracy(model, test, cfg.eval_k,
                                      cfg.seed * 1_000_003 + epoch)
                    if test is not None else None)
        record = {
            "epoch": epoch,
            "bound": bound_sum / max(bound_batches, 1),
            "accuracy": accuracy,
            "wall_time": time.perf_counter() - t0,
        }
        history.append(record)
        if log is not None:
            log(record)
        if metrics_path is not None:
            with open(metrics_path, "a") as f:
                f.write(json.dumps(record) + "\n")
        if accuracy is not None and accuracy > best_acc:
            best_acc = accuracy
            best_ckpt = _to_checkpoint(cfg, model, state, rng, epoch + 1, history)
            if out_dir is not None:
                save_checkpoint(best_ckpt, out_dir / "best.ckpt")

    final = _to_checkpoint(cfg, model, state, rng, cfg.epochs, history)
    if best_ckpt is None:
        best_ckpt = final
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.ckpt")
        if not (out_dir / "best.ckpt").exists():
            save_checkpoint(best_ckpt, out_dir / "best.ckpt")
    return final, best_ckpt, history


def _diverged_message(epoch, batch_id, info) -> str:
    parts = [f"non-finite loss at epoch {epoch}, batch {batch_id}"]
    for side in ("sup", "unsup"):
        est = info.get(side)
        if est is not None:
            parts.append(f"{side} components: "
                         + ", ".join(f"{k}={v:.4g}"
                                     for k, v in est.components.items()))
    return "; ".join(parts)
