"""Fixed-point encoding of reals into a modular ring, and exact ring arithmetic.

All multi-party arithmetic in this package runs over integers modulo a shared
modulus F. A real r enters the ring as round(r * 2**scale_bits) mod F, with
negative values embedded two's-complement style in the upper half of [0, F).
Integer addition mod F is exact and associative, which is what lets the
masked ring-sum agree bit for bit with the joined plaintext computation no
matter how the feature columns are split.

Ring values are plain Python ints (scalars) or numpy int64 arrays (matrices)
holding residues in [0, F). The default modulus 2**61 - 1 is prime, fits
int64 with headroom for one un-reduced addition, and leaves 40 bits above
the default scale for accumulated dot products.

Rounding is half-away-from-zero so that positive and negative values quantize
symmetrically.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import RangeOverflow

DEFAULT_MODULUS = (1 << 61) - 1
DEFAULT_SCALE_BITS = 20

# a + b for a, b in [0, F) must not wrap int64
_MAX_MODULUS_BITS = 62


@dataclass(frozen=True)
class FieldConfig:
    """Ring parameters shared by every participant of a run.

    modulus: size F of the ring; must fit 62 bits so int64 addition of two
        residues cannot overflow.
    scale_bits: fractional bits s of the fixed-point encoding; reals are
        carried as round(r * 2**s).
    """

    modulus: int = DEFAULT_MODULUS
    scale_bits: int = DEFAULT_SCALE_BITS

    def __post_init__(self):
        if self.modulus < 3:
            raise ValueError(f"modulus must be at least 3, got {self.modulus}")
        if self.modulus.bit_length() > _MAX_MODULUS_BITS:
            raise ValueError(
                f"modulus must fit {_MAX_MODULUS_BITS} bits, got {self.modulus.bit_length()}"
            )
        if self.scale_bits < 0:
            raise ValueError("scale_bits must be non-negative")
        if self.scale_bits and self.modulus <= (1 << (self.scale_bits + 1)):
            raise ValueError(
                f"modulus {self.modulus} leaves no signed headroom above scale 2**{self.scale_bits}"
            )

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    def at_scale(self, scale_bits: int) -> "FieldConfig":
        """Same ring, different fixed-point scale."""
        return FieldConfig(self.modulus, scale_bits)

    def product_scale(self) -> "FieldConfig":
        """Scale at which products of two encoded values live (2s bits)."""
        return self.at_scale(2 * self.scale_bits)

    def to_json(self) -> dict:
        return {"modulus": self.modulus, "scale_bits": self.scale_bits}

    @classmethod
    def from_json(cls, obj: dict) -> "FieldConfig":
        return cls(int(obj["modulus"]), int(obj["scale_bits"]))


def check_signed_range(magnitudes, cfg: FieldConfig) -> None:
    """Raise RangeOverflow unless every signed value satisfies 2|v| < modulus."""
    if np.any(2 * np.abs(magnitudes) >= cfg.modulus):
        raise RangeOverflow(
            f"value outside signed range of ring (|r| * 2**{cfg.scale_bits} must stay below {cfg.modulus}/2)"
        )


def quantize(values, cfg: FieldConfig) -> np.ndarray:
    """Signed fixed-point integers round(r * 2**s), not reduced into the ring.

    This is the form used for exact integer dot products; reduce with
    ring_reduce afterwards. Rounds half away from zero.
    """
    a = np.asarray(values, dtype=np.float64)
    q = np.sign(a) * np.floor(np.abs(a) * cfg.scale + 0.5)
    check_signed_range(q, cfg)
    return q.astype(np.int64)


def encode(value: float, cfg: FieldConfig) -> int:
    """Encode one real into [0, F). Raises RangeOverflow outside +-F/2**(s+1)."""
    r = float(value)
    q = int(math.floor(abs(r) * cfg.scale + 0.5))
    if r < 0:
        q = -q
    if 2 * abs(q) >= cfg.modulus:
        raise RangeOverflow(f"{value!r} does not fit the signed range at scale 2**{cfg.scale_bits}")
    return q % cfg.modulus


def encode_array(values, cfg: FieldConfig) -> np.ndarray:
    """Vectorized encode; returns int64 residues in [0, F)."""
    return quantize(values, cfg) % cfg.modulus


def to_signed(value, cfg: FieldConfig):
    """Map residues to their signed representative: [0, ceil(F/2)) stays, the rest shifts by -F."""
    if isinstance(value, np.ndarray):
        v = value.astype(np.int64, copy=False) if value.dtype != object else value
        return np.where(2 * v >= cfg.modulus, v - cfg.modulus, v)
    v = int(value)
    return v - cfg.modulus if 2 * v >= cfg.modulus else v


def decode(value: int, cfg: FieldConfig) -> float:
    """Inverse of encode up to the 2**-s quantization step."""
    return to_signed(value, cfg) / cfg.scale


def decode_array(values, cfg: FieldConfig) -> np.ndarray:
    return np.asarray(to_signed(values, cfg), dtype=np.float64) / cfg.scale


def ring_add(a, b, cfg: FieldConfig):
    return (a + b) % cfg.modulus


def ring_sub(a, b, cfg: FieldConfig):
    return (a - b) % cfg.modulus


def ring_neg(a, cfg: FieldConfig):
    return (cfg.modulus - a) % cfg.modulus


def ring_reduce(values, cfg: FieldConfig) -> np.ndarray:
    """Reduce signed integers (int64 or python-int object arrays) into [0, F) int64."""
    reduced = np.asarray(values) % cfg.modulus
    return reduced.astype(np.int64)


def check_ring(values, cfg: FieldConfig) -> None:
    v = np.asarray(values)
    if v.size and (np.any(v < 0) or np.any(v >= cfg.modulus)):
        raise ValueError("ring values must lie in [0, modulus)")


def ring_rng(*entropy) -> np.random.Generator:
    """Seedable generator for masks and additive shares.

    Philox is counter based and freely seedable; a deployment that needs
    stronger guarantees can swap in an OS-entropy source here.
    """
    seq = np.random.SeedSequence(list(entropy) if entropy else None)
    return np.random.Generator(np.random.Philox(seq))


def ring_uniform(cfg: FieldConfig, rng: np.random.Generator, size=None):
    """Uniform residues over the whole ring [0, F)."""
    if size is None:
        return int(rng.integers(0, cfg.modulus))
    return rng.integers(0, cfg.modulus, size=size, dtype=np.int64)


def exact_matmul(a, b):
    """Integer matrix product that never silently wraps.

    Uses int64 when a worst-case bound on the accumulated magnitude fits,
    otherwise falls back to arbitrary-precision Python integers.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"incompatible shapes for matmul: {a.shape} x {b.shape}")
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    amax = int(np.max(np.abs(a)))
    bmax = int(np.max(np.abs(b)))
    bound = amax * bmax * a.shape[1]
    if bound < (1 << 62):
        return a.astype(np.int64, copy=False) @ b.astype(np.int64, copy=False)
    return a.astype(object) @ b.astype(object)
