"""Datasets: IDX loading, a synthetic multi-attribute image set, and splits.

The synthetic generator renders each binary attribute into its own fixed
pixel region (regions are disjoint by construction), which gives exact
ground truth for disentanglement metrics: an attribute's effect on the
image is confined to a known set of pixels.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class BadMagic(ValueError):
    """File does not start with the expected IDX magic number."""


class CountMismatch(ValueError):
    """Image and label files disagree on the number of records."""


class TruncatedFile(ValueError):
    """File ends before the payload announced in its header."""


class InfeasibleCoverage(ValueError):
    """A label value never occurs, or the labeled subset is too small to
    contain every label value."""


@dataclass
class Dataset:
    images: np.ndarray            # [N, H, W] floats in [0, 1]
    labels: np.ndarray            # [N, L] binary or [N] class indices
    attr_names: list
    num_classes: Optional[int] = None

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatch(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return self.images.shape[1:]

    @property
    def is_multiclass(self) -> bool:
        return self.num_classes is not None

    def flat_images(self) -> np.ndarray:
        return self.images.reshape(self.n, -1)

    def binarized(self, threshold: float = 0.5) -> "Dataset":
        return Dataset((self.images > threshold).astype(np.float64),
                       self.labels, self.attr_names, self.num_classes)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx],
                       self.attr_names, self.num_classes)

    def label_frequencies(self) -> np.ndarray:
        """Empirical per-label rates (or class frequencies)."""
        if self.is_multiclass:
            return np.bincount(self.labels.astype(int),
                               minlength=self.num_classes) / self.n
        return self.labels.mean(axis=0)


# -- IDX ------------------------------------------------------------------------

def _read_exact(f, n: int, path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFile(f"{path}: wanted {n} bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Read big-endian IDX image/label pairs; pixels scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagic(f"{images_path}: magic {magic:#010x}")
        raw = _read_exact(f, count * rows * cols, images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagic(f"{labels_path}: magic {magic:#010x}")
        lraw = _read_exact(f, lcount, labels_path)
    if lcount != count:
        raise CountMismatch(f"{count} images vs {lcount} labels")
    labels = np.frombuffer(lraw, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 0
    return Dataset(images.astype(np.float64) / 255.0, labels,
                   [f"class{i}" for i in range(num_classes)], num_classes)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a class-labeled dataset back out as IDX (u8 pixels)."""
    imgs = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8)
    n, h, w = imgs.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(imgs.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# -- synthetic generator -----------------------------------------------------------

def _box(r0, r1, c0, c1):
    """Inclusive row/col bounds -> boolean mask factory."""
    def build(size):
        mask = np.zeros((size, size), dtype=bool)
        mask[r0:r1 + 1, c0:c1 + 1] = True
        return mask
    return build


def _corner_dots(size):
    mask = np.zeros((size, size), dtype=bool)
    for r0, c0 in ((7, 7), (7, 18), (18, 7), (18, 18)):
        mask[r0:r0 + 3, c0:c0 + 3] = True
    return mask


# Attribute name -> mask builder. Regions are pairwise disjoint on a 28x28
# canvas; this is what gives the diversity/confusion metrics ground truth.
RENDERERS = {
    "top_bar": _box(2, 5, 2, 25),
    "bottom_bar": _box(22, 25, 2, 25),
    "left_bar": _box(7, 20, 2, 5),
    "right_bar": _box(7, 20, 22, 25),
    "center_patch": _box(10, 16, 10, 16),
    "corner_dots": _corner_dots,
}


@dataclass
class SyntheticSpec:
    attributes: list = field(default_factory=lambda: list(RENDERERS))
    size: int = 28
    background: tuple = (0.04, 0.12)     # per-image base level range
    intensity: tuple = (0.75, 0.95)      # per-attribute active level range
    pixel_noise: float = 0.02
    attr_probs: Optional[list] = None    # default: independent 0.5

    def __post_init__(self):
        unknown = [a for a in self.attributes if a not in RENDERERS]
        if unknown:
            raise ValueError(f"no renderer for attributes {unknown}")

    @property
    def L(self) -> int:
        return len(self.attributes)

    def region_mask(self, attr: str) -> np.ndarray:
        return RENDERERS[attr](self.size)

    def to_json(self) -> dict:
        return {
            "attributes": list(self.attributes),
            "size": self.size,
            "background": list(self.background),
            "intensity": list(self.intensity),
            "pixel_noise": self.pixel_noise,
            "attr_probs": None if self.attr_probs is None else list(self.attr_probs),
        }

    @staticmethod
    def from_json(obj: dict) -> "SyntheticSpec":
        return SyntheticSpec(obj["attributes"], obj["size"],
                             tuple(obj["background"]), tuple(obj["intensity"]),
                             obj["pixel_noise"], obj.get("attr_probs"))


def make_synthetic(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> Dataset:
    """Render n images with independently sampled attributes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    probs = np.full(spec.L, 0.5) if spec.attr_probs is None else np.asarray(spec.attr_probs)
    labels = (rng.random((n, spec.L)) < probs).astype(np.float64)
    masks = np.stack([spec.region_mask(a) for a in spec.attributes])
    lo_b, hi_b = spec.background
    lo_i, hi_i = spec.intensity
    base = rng.uniform(lo_b, hi_b, size=(n, 1, 1))
    images = np.broadcast_to(base, (n, spec.size, spec.size)).copy()
    levels = rng.uniform(lo_i, hi_i, size=(n, spec.L))
    for i in range(spec.L):
        on = labels[:, i] == 1.0
        images[on] = np.where(masks[i], levels[on, i][:, None, None], images[on])
    images += rng.normal(0.0, spec.pixel_noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    return Dataset(images, labels, list(spec.attributes))


def synthetic_manifest(spec: SyntheticSpec, n: int, seed: int) -> dict:
    """JSON document from which the dataset regenerates bit-exactly."""
    return {"kind": "synthetic", "spec": spec.to_json(), "n": n, "seed": seed}


def dataset_from_manifest(manifest: dict) -> Dataset:
    if manifest["kind"] != "synthetic":
        raise ValueError(f"unknown manifest kind '{manifest['kind']}'")
    spec = SyntheticSpec.from_json(manifest["spec"])
    rng = np.random.default_rng(manifest["seed"])
    return make_synthetic(spec, manifest["n"], rng)


# -- semi-supervised split -----------------------------------------------------------

@dataclass
class SemiSplit:
    labeled: np.ndarray
    unlabeled: np.ndarray
    f: float
    seed: int

    @property
    def n(self) -> int:
        return self.labeled.size + self.unlabeled.size


def _label_values(dataset: Dataset, idx: np.ndarray) -> set:
    """Set of (label, value) pairs present among the given indices."""
    if dataset.is_multiclass:
        return {(0, int(v)) for v in np.unique(dataset.labels[idx])}
    present = set()
    sub = dataset.labels[idx]
    for i in range(sub.shape[1]):
        for v in np.unique(sub[:, i]):
            present.add((i, int(v)))
    return present


def _required_values(dataset: Dataset) -> set:
    if dataset.is_multiclass:
        return {(0, c) for c in range(dataset.num_classes)}
    return {(i, v) for i in range(dataset.labels.shape[1]) for v in (0, 1)}


def semi_split(dataset: Dataset, f: float, seed: int) -> SemiSplit:
    """Uniform labeled subset of size round(f*N) with label-value coverage.

    When the labeled set is non-empty, every label value that exists in the
    data must appear in it at least once; otherwise parts of the model would
    never receive supervised gradient. Repairs are deterministic swaps.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"supervision rate f={f} outside [0, 1]")
    n = dataset.n
    n_labeled = int(round(f * n))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    labeled = np.sort(perm[:n_labeled])
    unlabeled = np.sort(perm[n_labeled:])
    if n_labeled == 0 or f == 0.0:
        return SemiSplit(np.array([], dtype=np.int64), np.sort(perm), f, seed)

    required = _required_values(dataset)
    available = _label_values(dataset, np.arange(n))
    missing_everywhere = required - available
    if missing_everywhere:
        raise InfeasibleCoverage(
            f"label values absent from the data: {sorted(missing_everywhere)}")
    min_needed = (dataset.num_classes if dataset.is_multiclass else 2)
    if n_labeled < min_needed:
        raise InfeasibleCoverage(
            f"labeled set of {n_labeled} cannot cover {min_needed} label values")

    labeled = _repair_coverage(dataset, labeled, unlabeled, required)
    unlabeled = np.sort(np.setdiff1d(np.arange(n), labeled))
    return SemiSplit(np.sort(labeled), unlabeled, f, seed)


def _value_matrix(dataset: Dataset, idx: np.ndarray) -> dict:
    """(label, value) -> indices among idx carrying that value."""
    out = {}
    labels = dataset.labels[idx]
    if dataset.is_multiclass:
        for c in np.unique(labels):
            out[(0, int(c))] = idx[labels == c]
    else:
        for i in range(labels.shape[1]):
            for v in (0, 1):
                sel = idx[labels[:, i] == v]
                if sel.size:
                    out[(i, v)] = sel
    return out


def _repair_coverage(dataset, labeled, unlabeled, required):
    labeled = list(labeled)
    covered = _label_values(dataset, np.array(labeled))
    missing = sorted(required - covered)
    if not missing:
        return np.array(labeled, dtype=np.int64)
    pool = _value_matrix(dataset, np.asarray(unlabeled))
    for key in missing:
        covered = _label_values(dataset, np.array(labeled))
        if key in covered:
            continue
        donors = pool.get(key)
        if donors is None or donors.size == 0:
            raise InfeasibleCoverage(f"no sample outside S carries {key}")
        donor = int(donors[0])
        # Remove a labeled sample whose values all occur at least twice.
        removable = None
        for cand in labeled:
            vals = ({(0, int(dataset.labels[cand]))} if dataset.is_multiclass
                    else {(i, int(dataset.labels[cand, i]))
                          for i in range(dataset.labels.shape[1])})
            counts_ok = True
            for v in vals:
                cnt = sum(
                    1 for s in labeled
                    if (dataset.is_multiclass and (0, int(dataset.labels[s])) == v)
                    or (not dataset.is_multiclass
                        and int(dataset.labels[s, v[0]]) == v[1]))
                if cnt < 2:
                    counts_ok = False
                    break
            if counts_ok:
                removable = cand
                break
        if removable is None:
            raise InfeasibleCoverage(f"cannot repair coverage for {key}")
        labeled.remove(removable)
        labeled.append(donor)
    return np.array(sorted(labeled), dtype=np.int64)


def batches(dataset: Dataset, split: SemiSplit, batch_size: int,
            rng: np.random.Generator) -> Iterator:
    """One epoch of proportionally interleaved labeled/unlabeled batches.

    Yields (labeled (x, y) or None, unlabeled x or None) numpy pairs; both
    streams are shuffled per epoch and exhausted exactly once.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    ns, nu = split.labeled.size, split.unlabeled.size
    n = ns + nu
    nb = max(1, -(-n // batch_size))
    s_order = split.labeled[rng.permutation(ns)] if ns else np.array([], dtype=int)
    u_order = split.unlabeled[rng.permutation(nu)] if nu else np.array([], dtype=int)
    flat = dataset.flat_images()
    s_edges = np.floor(np.linspace(0, ns, nb + 1)).astype(int)
    u_edges = np.floor(np.linspace(0, nu, nb + 1)).astype(int)
    for b in range(nb):
        s_idx = s_order[s_edges[b]:s_edges[b + 1]]
        u_idx = u_order[u_edges[b]:u_edges[b + 1]]
        sup = ((flat[s_idx], dataset.labels[s_idx]) if s_idx.size else None)
        unsup = flat[u_idx] if u_idx.size else None
        if sup is None and unsup is None:
            continue
        yield sup, unsup
