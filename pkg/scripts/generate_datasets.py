#!/usr/bin/env python
"""Write the six benchmark-shaped synthetic datasets as libsvm files.

Usage: python scripts/generate_datasets.py [outdir]
"""

import sys
from pathlib import Path

from ppelm.datasets import BENCHMARK_SHAPES, generate_synthetic


def main() -> int:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data")
    outdir.mkdir(parents=True, exist_ok=True)
    for name in sorted(BENCHMARK_SHAPES):
        path = generate_synthetic(name, outdir / f"{name}.libsvm")
        instances, features, classes = BENCHMARK_SHAPES[name]
        print(f"{path}: {instances} x {features}, {classes} classes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
