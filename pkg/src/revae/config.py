"""Train configuration: JSON schema, strict validation, dataset resolution."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset, SyntheticSpec, dataset_from_manifest, load_idx
from .model import LatentLayout
from .objectives import HyperParams

OBJECTIVES = ("revae", "m3", "m2", "diva")

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class ConfigError(ValueError):
    """Invalid train configuration; message carries the offending field path."""


@dataclass
class TrainConfig:
    objective: str = "revae"
    dataset: dict = field(default_factory=lambda: {
        "kind": "synthetic", "n": 5000, "n_test": 1000, "seed": 1})
    layout: Optional[dict] = None          # derived from the dataset when None
    likelihood: Optional[str] = None       # default: laplace synth, bernoulli idx
    hidden: int = 400
    m_notc: int = 16
    f: float = 0.2
    seed: int = 0
    epochs: int = 50
    batch_size: int = 64
    lr: float = 2e-4
    clip_norm: float = 100.0
    eval_k: int = 64
    m2_z_style: int = 16
    alpha: float = 1.0
    beta: float = 1.0
    k_sup: int = 8
    k_unsup: int = 8
    exact_marginal_y: bool = False
    classifier_weight: float = 1.0

    def hyper(self) -> HyperParams:
        return HyperParams(alpha=self.alpha, beta=self.beta, k_sup=self.k_sup,
                           k_unsup=self.k_unsup,
                           exact_marginal_y=self.exact_marginal_y,
                           classifier_weight=self.classifier_weight)

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        return validate_config(obj)


_FIELD_CHECKS = {
    "objective": (str, lambda v: v in OBJECTIVES, f"must be one of {OBJECTIVES}"),
    "hidden": (int, lambda v: v >= 1, "must be >= 1"),
    "m_notc": (int, lambda v: v >= 0, "must be >= 0"),
    "f": ((int, float), lambda v: 0.0 <= v <= 1.0, "must be in [0, 1]"),
    "seed": (int, lambda v: v >= 0, "must be >= 0"),
    "epochs": (int, lambda v: v >= 1, "must be >= 1"),
    "batch_size": (int, lambda v: v >= 1, "must be >= 1"),
    "lr": ((int, float), lambda v: v > 0, "must be > 0"),
    "clip_norm": ((int, float), lambda v: v > 0, "must be > 0"),
    "eval_k": (int, lambda v: v >= 1, "must be >= 1"),
    "m2_z_style": (int, lambda v: v >= 1, "must be >= 1"),
    "alpha": ((int, float), lambda v: v >= 0, "must be >= 0"),
    "beta": ((int, float), lambda v: v >= 0, "must be >= 0"),
    "k_sup": (int, lambda v: v >= 1, "must be >= 1"),
    "k_unsup": (int, lambda v: v >= 1, "must be >= 1"),
    "exact_marginal_y": (bool, lambda v: True, ""),
    "classifier_weight": ((int, float), lambda v: v >= 0, "must be >= 0"),
}


def validate_config(obj: dict) -> TrainConfig:
    """Strict validation: unknown fields rejected, errors carry field paths."""
    if not isinstance(obj, dict):
        raise ConfigError("config: must be a JSON object")
    known = set(TrainConfig().__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    merged = TrainConfig().to_json()
    merged.update(obj)
    for name, (types, check, msg) in _FIELD_CHECKS.items():
        v = merged[name]
        if isinstance(v, bool) and types is not bool and name != "exact_marginal_y":
            raise ConfigError(f"{name}: unexpected boolean")
        if not isinstance(v, types):
            raise ConfigError(f"{name}: expected {types}")
        if not check(v):
            raise ConfigError(f"{name}: {msg}")
    ds = merged["dataset"]
    if not isinstance(ds, dict) or "kind" not in ds:
        raise ConfigError("dataset.kind: required")
    if ds["kind"] not in ("synthetic", "idx"):
        raise ConfigError(f"dataset.kind: unknown kind '{ds['kind']}'")
    if ds["kind"] == "synthetic":
        for key in ("n", "n_test"):
            if key in ds and (not isinstance(ds[key], int) or ds[key] < 1):
                raise ConfigError(f"dataset.{key}: must be a positive integer")
    if merged["likelihood"] not in (None, "bernoulli", "laplace"):
        raise ConfigError("likelihood: must be 'bernoulli' or 'laplace'")
    if merged["layout"] is not None:
        try:
            LatentLayout.from_json(merged["layout"])
        except Exception as e:
            raise ConfigError(f"layout: {e}")
    return TrainConfig(**merged)


def load_config(path) -> TrainConfig:
    with open(path) as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON ({e})")
    return validate_config(obj)


def data_dir() -> Path:
    return Path(os.environ.get("REVAE_DATA_DIR", "data"))


def resolve_datasets(cfg: TrainConfig):
    """(train, test) datasets for a config; test may be None for idx sets
    missing the test files."""
    ds = cfg.dataset
    if ds["kind"] == "synthetic":
        spec = SyntheticSpec.from_json(ds["spec"]) if "spec" in ds else SyntheticSpec()
        seed = ds.get("seed", 1)
        train = dataset_from_manifest(
            {"kind": "synthetic", "spec": spec.to_json(),
             "n": ds.get("n", 5000), "seed": seed})
        test = dataset_from_manifest(
            {"kind": "synthetic", "spec": spec.to_json(),
             "n": ds.get("n_test", 1000), "seed": seed + 1})
        return train, test
    root = Path(ds.get("dir") or data_dir())
    train = load_idx(root / ds.get("train_images", MNIST_FILES["train"][0]),
                     root / ds.get("train_labels", MNIST_FILES["train"][1]))
    test_img = root / ds.get("test_images", MNIST_FILES["test"][0])
    test_lab = root / ds.get("test_labels", MNIST_FILES["test"][1])
    test = (load_idx(test_img, test_lab)
            if test_img.exists() and test_lab.exists() else None)
    if "subsample" in ds:
        k = int(ds["subsample"])
        rng = np.random.default_rng(ds.get("subsample_seed", 0))
        train = train.subset(np.sort(rng.permutation(train.n)[:k]))
    return train, test


def resolve_layout(cfg: TrainConfig, train: Dataset) -> LatentLayout:
    if cfg.layout is not None:
        return LatentLayout.from_json(cfg.layout)
    if train.is_multiclass:
        return LatentLayout(["class"], [train.num_classes], cfg.m_notc,
                            num_classes=train.num_classes)
    return LatentLayout(list(train.attr_names), [1] * len(train.attr_names),
                        cfg.m_notc)


def resolve_likelihood(cfg: TrainConfig) -> str:
    if cfg.likelihood is not None:
        return cfg.likelihood
    return "bernoulli" if cfg.dataset["kind"] == "idx" else "laplace"
