#!/usr/bin/env python3
"""Convert the 10,000-digit MNIST subset shipped in the npm `mnist` package
into canonical IDX files (train/test split, classes interleaved).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_subset_to_idx.py package/src/digits out_dir

Every fifth instance of each class goes to the test split. Records are
ordered round-robin over classes so that any prefix is class-balanced.
"""
import json
import struct
import sys
from pathlib import Path


def write_idx(out_dir: Path, stem: str, images, labels):
    with open(out_dir / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(out_dir / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    src, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        per_class.append([
            [int(round(v * 255.0)) for v in flat[i:i + 784]]
            for i in range(0, len(flat), 784)
        ])

    splits = {"train": ([], []), "t10k": ([], [])}
    longest = max(len(c) for c in per_class)
    for j in range(longest):
        for digit, instances in enumerate(per_class):
            if j < len(instances):
                images, labels = splits["t10k" if j % 5 == 4 else "train"]
                images.append(instances[j])
                labels.append(digit)

    for stem, (images, labels) in splits.items():
        write_idx(out_dir, stem, images, labels)
        print(f"{stem}: {len(images)} digits")


if __name__ == "__main__":
    main()
