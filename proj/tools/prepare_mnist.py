#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the `mnist` npm package.

The package ships 10,000 MNIST digits as JSON (pixel/255 rounded to three
decimals). Pixels are recovered exactly by rounding back to the 0-255 scale.
The digits are shuffled with a fixed seed and split into train/test sets that
are written with the standard IDX file names, so the loader treats them like
the official distribution.

    python3 tools/prepare_mnist.py --out data/mnist [--tarball mnist-1.1.0.tgz]
"""

import argparse
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

import numpy as np


def fetch_tarball(workdir: pathlib.Path) -> pathlib.Path:
    out = subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir,
                         check=True, capture_output=True, text=True)
    return workdir / out.stdout.strip().splitlines()[-1]


def load_digits(tarball: pathlib.Path):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = np.asarray(json.load(member)["data"], dtype=np.float64)
            pixels = np.rint(flat.reshape(-1, 784) * 255.0).astype(np.uint8)
            images.append(pixels)
            labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx_images(path: pathlib.Path, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())


def write_idx_labels(path: pathlib.Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--tarball", help="local mnist npm tarball")
    parser.add_argument("--test-size", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=20180417)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tarball = pathlib.Path(args.tarball) if args.tarball else fetch_tarball(pathlib.Path(tmp))
        images, labels = load_digits(tarball)

    order = np.random.default_rng(args.seed).permutation(len(images))
    images, labels = images[order], labels[order]
    n_test = args.test_size
    write_idx_images(out / "train-images-idx3-ubyte", images[n_test:])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[n_test:])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[:n_test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[:n_test])
    print(f"wrote {len(images) - n_test} train / {n_test} test digits to {out}")


if __name__ == "__main__":
    main()
