#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package (10,000 MNIST samples,
MIT-licensed packaging) into a standard IDX image/label pair.

Usage:
    npm pack mnist            # produces mnist-<version>.tgz
    python3 scripts/mnist_from_npm.py mnist-1.1.0.tgz data/mnist

Pixels in the package are stored as round(byte / 255, 3); the byte value is
recovered exactly with round(v * 255).
"""

import argparse
import json
import struct
import tarfile
from pathlib import Path


def read_digits(tgz: Path):
    samples = []
    with tarfile.open(tgz, "r:gz") as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            values = json.load(tar.extractfile(member))["data"]
            if len(values) % 784 != 0:
                raise ValueError(f"digit {digit}: {len(values)} values is not a multiple of 784")
            for start in range(0, len(values), 784):
                pixels = bytes(min(255, max(0, round(v * 255))) for v in values[start:start + 784])
                samples.append((pixels, digit))
    return samples


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("tarball", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    samples = read_digits(args.tarball)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(args.out_dir / "labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
