"""Single-hidden-layer network with random, fixed hidden weights.

Training never touches the hidden layer: weights and biases are drawn once
from a seed, the hidden activation matrix H is formed, and the output
weights are the minimum-norm least-squares solution beta = pinv(H) @ T for
one-hot +-1 targets T. A (seed, data, hidden, activation) tuple therefore
fully determines the model.

Two training paths exist. ``train`` is the ordinary float pipeline.
``train_fixed_point`` quantizes inputs and weights into the shared ring and
computes pre-activations in exact integer arithmetic; it is the plaintext
twin of the multi-party protocol and produces the identical hidden matrix.
"""

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import fieldcodec as fc
from .errors import ConvergenceFailure, DimensionMismatch

MODEL_FORMAT = "ppelm-model"
MODEL_VERSION = 1


class Activation(Enum):
    SIGN = "sign"
    SIGMOID = "sigmoid"

    @classmethod
    def parse(cls, name: str) -> "Activation":
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown activation {name!r}; expected 'sign' or 'sigmoid'") from None


@dataclass
class HiddenLayerParams:
    """Random hidden layer: weights (hidden x features), biases (hidden,)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: Activation
    seed: int

    @property
    def hidden(self) -> int:
        return self.weights.shape[0]

    @property
    def features(self) -> int:
        return self.weights.shape[1]


def init_hidden(seed: int, hidden: int, features: int, activation: Activation) -> HiddenLayerParams:
    """Draw hidden weights and biases i.i.d. uniform on [-1, 1] from the seed."""
    if hidden < 1:
        raise ValueError("hidden node count must be at least 1")
    if features < 1:
        raise ValueError("feature count must be at least 1")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-1.0, 1.0, size=(hidden, features))
    biases = rng.uniform(-1.0, 1.0, size=hidden)
    return HiddenLayerParams(weights, biases, activation, int(seed))


def preactivation(X, params: HiddenLayerParams) -> np.ndarray:
    """Row i, node j holds x_i . w_j + b_j."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.features:
        raise DimensionMismatch(
            f"expected {params.features} feature columns, got shape {X.shape}"
        )
    return X @ params.weights.T + params.biases


def activate(pre, activation: Activation) -> np.ndarray:
    pre = np.asarray(pre, dtype=np.float64)
    if activation is Activation.SIGN:
        # sign(0) = +1 so every entry is exactly +-1
        return np.where(pre >= 0.0, 1.0, -1.0)
    out = np.empty_like(pre)
    nonneg = pre >= 0.0
    out[nonneg] = 1.0 / (1.0 + np.exp(-pre[nonneg]))
    grow = np.exp(pre[~nonneg])
    out[~nonneg] = grow / (1.0 + grow)
    return out


def pseudo_inverse(H) -> np.ndarray:
    """Moore-Penrose inverse via SVD.

    Singular values at or below eps * max(N, L) * s_max are treated as zero,
    so rank-deficient and wide matrices get the minimum-norm solution.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {H.shape}")
    try:
        u, s, vt = np.linalg.svd(H, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD did not converge for shape {H.shape}") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((H.shape[1], H.shape[0]))
    cutoff = np.finfo(np.float64).eps * max(H.shape) * s[0]
    inv = np.zeros_like(s)
    np.divide(1.0, s, out=inv, where=s > cutoff)
    return (vt.T * inv) @ u.T


def one_hot_targets(labels, class_count: int | None = None) -> np.ndarray:
    """N x K target matrix with +1 in the label column and -1 elsewhere."""
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or y.size == 0:
        raise DimensionMismatch("labels must be a non-empty vector")
    if np.any(y < 1):
        raise ValueError("labels must be 1-based class indices")
    k = int(class_count) if class_count else int(y.max())
    if np.any(y > k):
        raise ValueError(f"label exceeds class count {k}")
    targets = -np.ones((y.size, k))
    targets[np.arange(y.size), y - 1] = 1.0
    return targets


@dataclass
class ElmModel:
    params: HiddenLayerParams
    beta: np.ndarray  # (hidden, classes)

    def decision_scores(self, X) -> np.ndarray:
        return activate(preactivation(X, self.params), self.params.activation) @ self.beta

    def predict(self, X) -> np.ndarray:
        """Labels 1..K; argmax over class columns, ties to the lower index."""
        return np.argmax(self.decision_scores(X), axis=1) + 1


def predict(model: ElmModel, X) -> np.ndarray:
    return model.predict(X)


def train(X, y, seed: int, hidden: int, activation: Activation,
          class_count: int | None = None) -> ElmModel:
    """Plain float training: beta = pinv(H) @ one_hot(y)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionMismatch(f"expected an N x n feature matrix, got shape {X.shape}")
    params = init_hidden(seed, hidden, X.shape[1], activation)
    H = activate(preactivation(X, params), activation)
    beta = pseudo_inverse(H) @ one_hot_targets(y, class_count)
    return ElmModel(params, beta)


def ring_bias(params: HiddenLayerParams, cfg: fc.FieldConfig) -> np.ndarray:
    """Biases encoded at product scale, where quantized dot products live."""
    return fc.encode_array(params.biases, cfg.product_scale())


def ring_preactivation(X, params: HiddenLayerParams, cfg: fc.FieldConfig) -> np.ndarray:
    """Joined-data pre-activation as ring residues at product scale.

    Inputs and weights are quantized at scale s, multiplied exactly in
    integers (products live at scale 2s), and the bias joins at scale 2s.
    Because every term is quantized independently of any column grouping,
    this equals the ring-sum of per-party partials for every partition.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.features:
        raise DimensionMismatch(
            f"expected {params.features} feature columns, got shape {X.shape}"
        )
    xq = fc.quantize(X, cfg)
    wq = fc.quantize(params.weights, cfg)
    total = fc.exact_matmul(xq, wq.T) + fc.to_signed(ring_bias(params, cfg), cfg.product_scale())
    fc.check_signed_range(total, cfg.product_scale())
    return fc.ring_reduce(total, cfg)


def fixed_point_hidden_matrix(X, params: HiddenLayerParams, cfg: fc.FieldConfig) -> np.ndarray:
    ring = ring_preactivation(X, params, cfg)
    return activate(fc.decode_array(ring, cfg.product_scale()), params.activation)


def train_fixed_point(X, y, seed: int, hidden: int, activation: Activation,
                      cfg: fc.FieldConfig, class_count: int | None = None) -> ElmModel:
    """Plaintext training through the same fixed-point arithmetic the protocol uses."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionMismatch(f"expected an N x n feature matrix, got shape {X.shape}")
    params = init_hidden(seed, hidden, X.shape[1], activation)
    H = fixed_point_hidden_matrix(X, params, cfg)
    beta = pseudo_inverse(H) @ one_hot_targets(y, class_count)
    return ElmModel(params, beta)


def accuracy(predicted, labels) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise DimensionMismatch("prediction and label vectors differ in length")
    return float(np.mean(predicted == labels))


def save_model(model: ElmModel, path) -> None:
    """Stable JSON serialization; weights regrow from the seed on load."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "seed": model.params.seed,
        "hidden": model.params.hidden,
        "features": model.params.features,
        "activation": model.params.activation.value,
        "beta": model.beta.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_model(path) -> ElmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')}")
    params = init_hidden(doc["seed"], doc["hidden"], doc["features"],
                         Activation.parse(doc["activation"]))
    beta = np.asarray(doc["beta"], dtype=np.float64)
    if beta.ndim != 2 or beta.shape[0] != doc["hidden"]:
        raise ValueError(f"{path}: beta shape {beta.shape} does not match hidden={doc['hidden']}")
    return ElmModel(params, beta)
