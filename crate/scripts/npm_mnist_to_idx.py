#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/npm_mnist_to_idx.py package/src/digits data/mnist
"""
import json
import struct
import sys
from pathlib import Path


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    images, labels = bytearray(), bytearray()
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        images += bytes(min(255, max(0, round(v * 255))) for v in data)
        labels += bytes([digit]) * (len(data) // 784)
    count = len(labels)
    (dst / "npm-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, count, 28, 28) + images)
    (dst / "npm-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, count) + labels)
    print(f"wrote {count} images to {dst}")


if __name__ == "__main__":
    main()
