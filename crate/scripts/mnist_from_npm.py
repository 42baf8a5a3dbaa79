#!/usr/bin/env python3
"""Build a pair of MNIST-format IDX datasets from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 10,000
MNIST training digits as per-class JSON arrays of pixel/255 values rounded to
three decimals, which are recovered here as exact 8-bit intensities. Each
class is split in half: the first half becomes the training file and the
second half the test file. Both files are then shuffled with a fixed seed.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(out_dir, prefix, samples):
    with gzip.GzipFile(out_dir / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(bytes(pixels))
    with gzip.GzipFile(out_dir / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    src, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        images = []
        for i in range(0, len(flat), 784):
            pixels = [round(v * 255) for v in flat[i:i + 784]]
            assert all(0 <= p <= 255 for p in pixels)
            images.append((pixels, digit))
        half = len(images) // 2
        train += images[:half]
        test += images[half:]
    rng = random.Random(20111)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(out_dir, "train", train)
    write_idx(out_dir, "t10k", test)
    print(f"train={len(train)} test={len(test)} -> {out_dir}")


if __name__ == "__main__":
    main()
