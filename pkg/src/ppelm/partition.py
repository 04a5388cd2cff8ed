"""Vertical splits of feature columns, weight columns, and bias shares.

A plan assigns contiguous half-open column ranges to parties, widest first:
with n features and k parties the first n mod k parties take ceil(n/k)
columns and the rest take floor(n/k). A plan is therefore fully determined
by (n, k), which is also how it travels on the wire.

Biases are not sliced; they are additively shared in the ring so that no
single party holds the true bias vector. Shares live at product scale
(2 * scale_bits), the scale of quantized dot products.
"""

from dataclasses import dataclass

import numpy as np

from . import fieldcodec as fc
from .elm import HiddenLayerParams
from .errors import DimensionMismatch, InvalidPartyCount


@dataclass(frozen=True)
class PartitionPlan:
    """Contiguous column ranges, one per party, covering all features."""

    feature_count: int
    sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes:
            raise ValueError("plan needs at least one party")
        if any(s < 1 for s in self.sizes):
            raise ValueError("every party must hold at least one column")
        if sum(self.sizes) != self.feature_count:
            raise ValueError(
                f"sizes {self.sizes} do not cover {self.feature_count} columns"
            )

    @property
    def parties(self) -> int:
        return len(self.sizes)

    @property
    def ranges(self) -> tuple:
        """Half-open (start, stop) column ranges in party order."""
        out, start = [], 0
        for s in self.sizes:
            out.append((start, start + s))
            start += s
        return tuple(out)

    def range_for(self, party_id: int) -> tuple:
        return self.ranges[party_id]

    def to_json(self) -> dict:
        return {"feature_count": self.feature_count, "sizes": list(self.sizes)}

    @classmethod
    def from_json(cls, obj: dict) -> "PartitionPlan":
        return cls(int(obj["feature_count"]), tuple(obj["sizes"]))


def make_plan(feature_count: int, parties: int) -> PartitionPlan:
    """Canonical plan: first (n mod k) parties take the extra column."""
    if parties < 2 or parties > feature_count:
        raise InvalidPartyCount(
            f"party count must be in [2, {feature_count}], got {parties}"
        )
    base, extra = divmod(feature_count, parties)
    sizes = (base + 1,) * extra + (base,) * (parties - extra)
    return PartitionPlan(feature_count, sizes)


@dataclass(frozen=True)
class WeightShare:
    """Party's column slice of W plus its additive bias share (ring, product scale)."""

    party_id: int
    w_slice: np.ndarray
    bias_share: np.ndarray


@dataclass(frozen=True)
class PartyShare:
    """Everything one party holds: its private columns and its weight share."""

    party_id: int
    x_slice: np.ndarray
    w_slice: np.ndarray
    bias_share: np.ndarray


def split_weights(params: HiddenLayerParams, plan: PartitionPlan,
                  cfg: fc.FieldConfig, rng: np.random.Generator) -> list:
    """Slice W by plan columns and share b additively in the ring.

    The first k-1 shares are uniform over [0, F); the last is whatever makes
    the ring-sum come out to the encoded bias, so reconstruction is exact.
    """
    if params.features != plan.feature_count:
        raise DimensionMismatch(
            f"plan covers {plan.feature_count} columns, weights have {params.features}"
        )
    encoded = fc.encode_array(params.biases, cfg.product_scale())
    shares = [fc.ring_uniform(cfg, rng, size=params.hidden) for _ in range(plan.parties - 1)]
    total = np.zeros(params.hidden, dtype=np.int64)
    for s in shares:
        total = (total + s) % cfg.modulus
    shares.append((encoded - total) % cfg.modulus)
    return [
        WeightShare(i, params.weights[:, a:b], shares[i])
        for i, (a, b) in enumerate(plan.ranges)
    ]


def split_data(X, plan: PartitionPlan) -> list:
    """Column slices of X in party order; hstack of the result is X again."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != plan.feature_count:
        raise DimensionMismatch(
            f"plan covers {plan.feature_count} columns, data has shape {X.shape}"
        )
    return [X[:, a:b] for a, b in plan.ranges]


def build_party_shares(X, params: HiddenLayerParams, plan: PartitionPlan,
                       cfg: fc.FieldConfig, rng: np.random.Generator) -> list:
    """Bundle data slices and weight shares into per-party holdings."""
    xs = split_data(X, plan)
    ws = split_weights(params, plan, cfg, rng)
    return [
        PartyShare(i, xs[i], ws[i].w_slice, ws[i].bias_share)
        for i in range(plan.parties)
    ]
