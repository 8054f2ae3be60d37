#!/usr/bin/env python3
"""Convert the digit samples shipped in the npm ``mnist`` package to IDX files.

The package stores 10,000 MNIST digits as per-class JSON arrays of 28x28
floats in [0, 1]. This script interleaves them with a fixed seed and writes a
train/test split in the standard big-endian IDX layout.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/prepare_mnist.py package/src/digits data/mnist
"""

import argparse
import json
import pathlib
import struct

import numpy as np


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, h, w))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=pathlib.Path)
    parser.add_argument("out_dir", type=pathlib.Path)
    parser.add_argument("--train", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=20190901)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        arr = np.asarray(raw, dtype=np.float64).reshape(-1, 28, 28)
        images.append(np.rint(np.clip(arr, 0.0, 1.0) * 255.0))
        labels.append(np.full(arr.shape[0], digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    t = args.train
    write_idx_images(args.out_dir / "train-images-idx3-ubyte", images[:t])
    write_idx_labels(args.out_dir / "train-labels-idx1-ubyte", labels[:t])
    write_idx_images(args.out_dir / "t10k-images-idx3-ubyte", images[t:])
    write_idx_labels(args.out_dir / "t10k-labels-idx1-ubyte", labels[t:])
    print(f"wrote {t} train / {len(labels) - t} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
