"""Privacy-preserving extreme learning machine over vertically split features.

k parties each hold a column slice of the feature matrix. Hidden-layer
pre-activations are accumulated through a masked ring-sum over a shared
modular ring, so the coordinator recovers the exact joined hidden matrix
without any party revealing its raw columns. The resulting model is
bit-identical to plaintext training run in the same fixed-point arithmetic.
"""

from .fieldcodec import FieldConfig, decode, decode_array, encode, encode_array
from .elm import (
    Activation,
    ElmModel,
    HiddenLayerParams,
    accuracy,
    init_hidden,
    load_model,
    predict,
    pseudo_inverse,
    save_model,
    train,
    train_fixed_point,
)
from .partition import PartitionPlan, PartyShare, make_plan, split_data, split_weights
from .protocol import compute_partial, secure_hidden_matrix, secure_train, sma_scalar
from .datasets import Dataset, NormalizeMode, load_libsvm, normalize

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "Dataset",
    "ElmModel",
    "FieldConfig",
    "HiddenLayerParams",
    "NormalizeMode",
    "PartitionPlan",
    "PartyShare",
    "accuracy",
    "compute_partial",
    "decode",
    "decode_array",
    "encode",
    "encode_array",
    "init_hidden",
    "load_libsvm",
    "load_model",
    "make_plan",
    "normalize",
    "predict",
    "pseudo_inverse",
    "save_model",
    "secure_hidden_matrix",
    "secure_train",
    "sma_scalar",
    "split_data",
    "split_weights",
    "train",
    "train_fixed_point",
]
