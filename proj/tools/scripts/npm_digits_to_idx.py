#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package (v1.1.0)
into IDX files readable by `kvae`.

Each digits/<k>.json holds {"data": [...]} with 784 floats in [0, 1] per
image. Pixels are quantised back to bytes with round(v * 255). Images are
interleaved by class (0,1,...,9,0,1,...) so any prefix is roughly balanced.

usage: npm_digits_to_idx.py <package>/src/digits <out_dir>
"""
import json
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    per_class = []
    for k in range(10):
        data = json.loads((src / f"{k}.json").read_text())["data"]
        if len(data) % 784:
            print(f"{k}.json: length {len(data)} not a multiple of 784", file=sys.stderr)
            return 1
        per_class.append([data[i:i + 784] for i in range(0, len(data), 784)])

    images, labels = [], []
    for i in range(max(len(c) for c in per_class)):
        for k, c in enumerate(per_class):
            if i < len(c):
                images.append(bytes(min(255, max(0, round(v * 255))) for v in c[i]))
                labels.append(k)

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for im in images:
            f.write(im)
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
