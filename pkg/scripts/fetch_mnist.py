"""Fetch a real MNIST subset and write standard IDX files.

The npm package ``mnist`` ships 10,000 genuine MNIST digits (28x28, roughly
a thousand per class) as JSON. That is plenty for desk-scale runs and is
reachable through the package-manager mirror even when the usual dataset
hosts are not. This script packs it, converts to the canonical IDX layout
(big-endian, u8 pixels), and writes a stratified train/test split:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage:
    python3 scripts/fetch_mnist.py [--out DATA_DIR] [--tarball PATH]

With --tarball, an already-downloaded mnist-*.tgz is used instead of npm.
"""

import argparse
import json
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from revae.data import Dataset, save_idx  # noqa: E402

TEST_FRACTION = 0.2
SPLIT_SEED = 20240101


def obtain_tarball(workdir: Path) -> Path:
    print("fetching the 'mnist' npm package...")
    subprocess.run(["npm", "pack", "mnist"], cwd=workdir, check=True,
                   capture_output=True)
    tarballs = sorted(workdir.glob("mnist-*.tgz"))
    if not tarballs:
        raise FileNotFoundError("npm pack produced no tarball")
    return tarballs[0]


def load_digits(tarball: Path):
    images, labels = [], []
    with tarfile.open(tarball, "r:gz") as tf:
        for digit in range(10):
            member = tf.getmember(f"package/src/digits/{digit}.json")
            data = json.load(tf.extractfile(member))["data"]
            arr = np.asarray(data, dtype=np.float64).reshape(-1, 28, 28)
            images.append(arr)
            labels.append(np.full(arr.shape[0], digit, dtype=np.int64))
    return np.concatenate(images), np.concatenate(labels)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data")
    parser.add_argument("--tarball", default=None)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        tarball = Path(args.tarball) if args.tarball else obtain_tarball(Path(tmp))
        images, labels = load_digits(tarball)
    print(f"loaded {images.shape[0]} digits")

    rng = np.random.default_rng(SPLIT_SEED)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = np.flatnonzero(labels == digit)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(idx.size * (1 - TEST_FRACTION)))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))

    names = [f"class{i}" for i in range(10)]
    train = Dataset(images[train_idx], labels[train_idx], names, 10)
    test = Dataset(images[test_idx], labels[test_idx], names, 10)
    save_idx(train, out / "train-images-idx3-ubyte",
             out / "train-labels-idx1-ubyte")
    save_idx(test, out / "t10k-images-idx3-ubyte",
             out / "t10k-labels-idx1-ubyte")
    print(f"wrote {train.n} train / {test.n} test digits to {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
