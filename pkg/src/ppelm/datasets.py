"""Loading and preparing benchmark tables in libsvm/svmlight text format.

Each line is "label index:value index:value ...", indices 1-based. Absent
indices densify to 0.0. Labels are remapped to 1..K in order of first
appearance, so "+1/-1" files and "2/4" files both come out as {1, 2}.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyFile, ParseError

# (instances, features, classes) of the published tables this package is
# benchmarked against; generate_synthetic() mints stand-ins with these shapes
BENCHMARK_SHAPES = {
    "australian": (690, 14, 2),
    "colon-cancer": (62, 2000, 2),
    "diabetes": (768, 8, 2),
    "duke": (44, 7129, 2),
    "heart": (270, 13, 2),
    "ionosphere": (351, 34, 2),
}


class NormalizeMode(Enum):
    NONE = "none"
    MINMAX = "minmax"

    @classmethod
    def parse(cls, name) -> "NormalizeMode":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigError(
                f"unknown normalize mode {name!r}; expected 'none' or 'minmax'"
            ) from None


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def instances(self) -> int:
        return self.X.shape[0]

    @property
    def features(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> int:
        return int(self.y.max())


def load_libsvm(path, n_features: int = None, name: str = None) -> Dataset:
    """Parse a sparse text file into a dense table.

    The feature count is the largest index seen unless n_features says
    otherwise (for files whose trailing columns happen to be all zero).
    """
    path = Path(path)
    rows = []
    labels = []
    max_index = 0
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            tokens = text.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise ParseError(line_no, f"label {tokens[0]!r} is not a number")
            entries = {}
            for tok in tokens[1:]:
                idx_str, sep, val_str = tok.partition(":")
                if not sep:
                    raise ParseError(line_no, f"expected index:value, got {tok!r}")
                try:
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise ParseError(line_no, f"bad index:value pair {tok!r}")
                if idx < 1:
                    raise ParseError(line_no, f"feature index {idx} must be >= 1")
                if idx in entries:
                    raise ParseError(line_no, f"duplicate feature index {idx}")
                entries[idx] = val
                max_index = max(max_index, idx)
            rows.append(entries)
            labels.append(label)
    if not rows:
        raise EmptyFile(f"{path}: no instances")
    n = max_index if n_features is None else int(n_features)
    if n < max_index:
        raise ParseError(0, f"n_features={n} but the file uses index {max_index}")
    if n < 1:
        raise EmptyFile(f"{path}: no feature columns")
    X = np.zeros((len(rows), n), dtype=np.float64)
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            X[i, idx - 1] = val
    seen = {}
    y = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in seen:
            seen[lab] = len(seen) + 1
        y[i] = seen[lab]
    return Dataset(name or path.stem, X, y,
                   meta={"source_path": str(path), "label_map": seen})


def normalize_columns(X, mode) -> np.ndarray:
    """Column-wise map to [-1, 1]; constant columns go to 0."""
    mode = NormalizeMode.parse(mode)
    X = np.asarray(X, dtype=np.float64)
    if mode is NormalizeMode.NONE:
        return X
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    flat = span == 0
    span = np.where(flat, 1.0, span)
    out = 2.0 * (X - lo) / span - 1.0
    out[:, flat] = 0.0
    return out


def normalize(ds: Dataset, mode) -> Dataset:
    mode = NormalizeMode.parse(mode)
    meta = dict(ds.meta, normalize=mode.value)
    return Dataset(ds.name, normalize_columns(ds.X, mode), ds.y, meta)


def generate_synthetic(name: str, path, seed: int = None) -> Path:
    """Write a synthetic stand-in with the published (N, n, K) shape.

    Two noisy class clusters, every feature written explicitly so the file's
    max index equals the feature count. Deterministic per (name, seed).
    """
    if name not in BENCHMARK_SHAPES:
        raise ConfigError(
            f"unknown benchmark name {name!r}; expected one of "
            f"{sorted(BENCHMARK_SHAPES)}"
        )
    instances, features, classes = BENCHMARK_SHAPES[name]
    if seed is None:
        seed = sum(name.encode())
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.5, 0.5, size=(classes, features))
    y = rng.integers(0, classes, size=instances)
    y[:classes] = np.arange(classes)  # every class present
    X = centers[y] + rng.uniform(-0.5, 0.5, size=(instances, features))
    X = np.clip(X, -1.0, 1.0)
    labels = ("+1", "-1") if classes == 2 else tuple(str(c + 1) for c in range(classes))
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for i in range(instances):
            cells = " ".join(f"{j + 1}:{X[i, j]:.6f}" for j in range(features))
            fh.write(f"{labels[y[i]]} {cells}\n")
    return path
