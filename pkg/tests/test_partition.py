import numpy as np
import pytest

from ppelm import fieldcodec as fc
from ppelm.elm import Activation, init_hidden
from ppelm.errors import DimensionMismatch, InvalidPartyCount
from ppelm.partition import (
    PartitionPlan,
    build_party_shares,
    make_plan,
    split_data,
    split_weights,
)


def test_plan_examples():
    assert make_plan(14, 3).sizes == (5, 5, 4)
    assert make_plan(13, 4).sizes == (4, 3, 3, 3)
    assert make_plan(8, 8).sizes == (1,) * 8
    assert make_plan(7129, 2).sizes == (3565, 3564)


def test_plan_ranges_are_contiguous():
    plan = make_plan(14, 3)
    assert plan.ranges == ((0, 5), (5, 10), (10, 14))
    assert plan.range_for(2) == (10, 14)


@pytest.mark.parametrize("n,k", [(5, 1), (5, 6), (3, 0), (10, -2)])
def test_plan_rejects_bad_party_counts(n, k):
    with pytest.raises(InvalidPartyCount):
        make_plan(n, k)


def test_plan_rule_holds_for_every_small_configuration():
    for n in range(2, 65):
        for k in range(2, n + 1):
            plan = make_plan(n, k)
            sizes = plan.sizes
            assert len(sizes) == k
            assert sum(sizes) == n
            assert set(sizes) <= {n // k, -(-n // k)}
            # widest slices come first, then the narrower ones
            assert list(sizes) == sorted(sizes, reverse=True)
            assert sizes.count(n // k + 1) == (n % k)


def test_plan_json_round_trip():
    plan = make_plan(33, 5)
    again = PartitionPlan.from_json(plan.to_json())
    assert again == plan


def test_plan_validates_sizes():
    with pytest.raises(ValueError):
        PartitionPlan(10, (5, 4))
    with pytest.raises(ValueError):
        PartitionPlan(10, (5, 5, 0))
    with pytest.raises(ValueError):
        PartitionPlan(3, ())


def test_split_data_reassembles():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(6, 14))
    plan = make_plan(14, 4)
    parts = split_data(X, plan)
    assert [p.shape[1] for p in parts] == [4, 4, 3, 3]
    assert np.array_equal(np.hstack(parts), X)


def test_split_data_rejects_wrong_width():
    with pytest.raises(DimensionMismatch):
        split_data(np.zeros((4, 9)), make_plan(14, 3))


def test_split_weights_covers_columns_and_reconstructs_bias():
    cfg = fc.FieldConfig()
    params = init_hidden(11, 20, 13, Activation.SIGN)
    plan = make_plan(13, 4)
    shares = split_weights(params, plan, cfg, fc.ring_rng(99))
    assert np.array_equal(np.hstack([s.w_slice for s in shares]), params.weights)
    total = np.zeros(20, dtype=np.int64)
    for s in shares:
        assert s.bias_share.min() >= 0
        assert s.bias_share.max() < cfg.modulus
        total = (total + s.bias_share) % cfg.modulus
    assert np.array_equal(total, fc.encode_array(params.biases, cfg.product_scale()))


def test_split_weights_shares_differ_between_draws():
    cfg = fc.FieldConfig()
    params = init_hidden(11, 8, 10, Activation.SIGN)
    plan = make_plan(10, 3)
    a = split_weights(params, plan, cfg, fc.ring_rng(1))
    b = split_weights(params, plan, cfg, fc.ring_rng(2))
    assert not np.array_equal(a[0].bias_share, b[0].bias_share)
    # but both reconstruct the identical encoded bias
    ra = np.zeros(8, dtype=np.int64)
    rb = np.zeros(8, dtype=np.int64)
    for s in a:
        ra = (ra + s.bias_share) % cfg.modulus
    for s in b:
        rb = (rb + s.bias_share) % cfg.modulus
    assert np.array_equal(ra, rb)


def test_split_weights_rejects_mismatched_plan():
    cfg = fc.FieldConfig()
    params = init_hidden(11, 8, 10, Activation.SIGN)
    with pytest.raises(DimensionMismatch):
        split_weights(params, make_plan(12, 3), cfg, fc.ring_rng(1))


def test_build_party_shares_bundles_consistently():
    cfg = fc.FieldConfig()
    rng = np.random.default_rng(8)
    X = rng.uniform(-1, 1, size=(15, 9))
    params = init_hidden(2, 6, 9, Activation.SIGN)
    plan = make_plan(9, 3)
    shares = build_party_shares(X, params, plan, cfg, fc.ring_rng(5))
    for i, share in enumerate(shares):
        a, b = plan.range_for(i)
        assert share.party_id == i
        assert np.array_equal(share.x_slice, X[:, a:b])
        assert np.array_equal(share.w_slice, params.weights[:, a:b])
