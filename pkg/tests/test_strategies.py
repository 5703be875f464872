"""Bidding policies: fixed, buffer-driven, value-of-service, and dispatch."""

import numpy as np
import pytest
from conftest import oracle_expected_loss

from spectrum_auction.env import (
    RateTable,
    SUState,
    SuKernels,
    TrafficModel,
    ValidationError,
    expected_loss_table,
)
from spectrum_auction.learning import BestResponseLearner
from spectrum_auction.strategies import (
    FixedPolicy,
    LearningPolicy,
    MyopicPolicy,
    Observation,
    SourceAwarePolicy,
    default_fixed_bid,
    fixed_bid,
    middle_level,
    myopic_bid,
    source_aware_bid,
)

from test_env import reference_channel

SLOT = 0.01


def loss_rows(quanta=(1, 2, 3), mu=250.0, capacity=10):
    table = expected_loss_table(
        capacity, RateTable.per_slot(quanta, SLOT), TrafficModel(mu, SLOT)
    )
    return table.tolist()


def obs(buffer, levels):
    return Observation(SUState(buffer, tuple(levels)), tuple(l >= 1 for l in levels))


def test_middle_level():
    assert middle_level(3) == 2
    assert middle_level(1) == 1
    assert middle_level(2) == 1


def test_fixed_policy_masks_and_ignores_state():
    pol = FixedPolicy([1.0, 1.0])
    assert pol.bids(obs(0, (1, 2))) == [1.0, 1.0]
    assert pol.bids(obs(10, (3, 1))) == [1.0, 1.0]
    assert pol.bids(obs(5, (0, 2))) == [0.0, 1.0]
    assert FixedPolicy([0.0, 0.0]).bids(obs(9, (1, 1))) == [0.0, 0.0]
    with pytest.raises(ValidationError):
        FixedPolicy([-1.0])


def test_source_aware_empty_buffer_bids_nothing():
    rows = loss_rows()
    assert source_aware_bid(0, (2, 1), rows, 2) == [0.0, 0.0]


def test_source_aware_reference_value():
    """Full buffer prices a middle-quality slot of service."""
    rows = loss_rows()
    traffic = TrafficModel(250.0, SLOT)
    rates = RateTable.per_slot((1, 2, 3), SLOT)
    expected = 2.5 - oracle_expected_loss(10, 10, 2, rates, traffic)
    got = source_aware_bid(10, (3, 1), rows, 2)
    assert got[0] == pytest.approx(expected, abs=1e-9)
    assert got[0] == got[1]  # same amount on every free channel


def test_source_aware_monotone_in_buffer():
    rows = loss_rows()
    bids = [source_aware_bid(v, (1,), rows, 2)[0] for v in range(11)]
    assert all(b2 >= b1 for b1, b2 in zip(bids, bids[1:]))


def test_myopic_empty_buffer_bids_nothing():
    assert myopic_bid(SUState(0, (1, 3)), loss_rows()) == [0.0, 0.0]


def test_myopic_reference_value():
    rows = loss_rows()
    traffic = TrafficModel(250.0, SLOT)
    rates = RateTable.per_slot((1, 2, 3), SLOT)
    got = myopic_bid(SUState(10, (3, 0)), rows)
    expected = 2.5 - oracle_expected_loss(10, 10, 3, rates, traffic)
    assert got[0] == pytest.approx(expected, abs=1e-9)
    assert got[0] == pytest.approx(2.0868, abs=1e-3)
    assert got[1] == 0.0


def test_myopic_symmetry_and_monotonicity():
    rows = loss_rows()
    same = myopic_bid(SUState(7, (2, 2)), rows)
    assert same[0] == same[1]
    for v in range(11):
        by_level = [myopic_bid(SUState(v, (lev,)), rows)[0] for lev in (1, 2, 3)]
        assert by_level == sorted(by_level)
    for lev in (1, 2, 3):
        by_fill = [myopic_bid(SUState(v, (lev,)), rows)[0] for v in range(11)]
        assert by_fill == sorted(by_fill)


def test_policies_emit_nonnegative_masked_bids():
    rng = np.random.default_rng(4)
    rows = loss_rows()
    kernels = SuKernels.build(
        [reference_channel()] * 2,
        TrafficModel(250.0, SLOT),
        RateTable.per_slot((1, 2, 3), SLOT),
        10,
    )
    policies = [
        FixedPolicy([0.3, 0.3]),
        SourceAwarePolicy(rows),
        MyopicPolicy(rows),
        LearningPolicy(BestResponseLearner(kernels, alpha=0.8)),
    ]
    for _ in range(200):
        v = int(rng.integers(0, 11))
        levels = tuple(int(x) for x in rng.integers(0, 4, size=2))
        o = obs(v, levels)
        for pol in policies:
            out = pol.bids(o)
            assert len(out) == 2
            for b, lev in zip(out, levels):
                assert b >= 0.0
                if lev == 0:
                    assert b == 0.0


def test_learning_policy_with_zero_table_equals_myopic_exactly():
    rows = loss_rows()
    kernels = SuKernels.build(
        [reference_channel()] * 2,
        TrafficModel(250.0, SLOT),
        RateTable.per_slot((1, 2, 3), SLOT),
        10,
    )
    fresh = LearningPolicy(BestResponseLearner(kernels, alpha=0.8))
    myo = MyopicPolicy(rows)
    rng = np.random.default_rng(8)
    for _ in range(300):
        v = int(rng.integers(0, 11))
        levels = tuple(int(x) for x in rng.integers(0, 4, size=2))
        o = obs(v, levels)
        assert fresh.bids(o) == myo.bids(o)


def test_learning_policy_with_zero_discount_equals_myopic_exactly():
    rows = loss_rows()
    kernels = SuKernels.build(
        [reference_channel()] * 2,
        TrafficModel(250.0, SLOT),
        RateTable.per_slot((1, 2, 3), SLOT),
        10,
    )
    pol = LearningPolicy(BestResponseLearner(kernels, alpha=0.0))
    myo = MyopicPolicy(rows)
    rng = np.random.default_rng(9)
    for step in range(300):
        v = int(rng.integers(0, 11))
        levels = tuple(int(x) for x in rng.integers(0, 4, size=2))
        o = obs(v, levels)
        bids = pol.bids(o)
        assert bids == myo.bids(o)
        # keep the learner updating so the table departs from zero
        assigned = 1 if levels[0] >= 1 else 0
        pol.record_outcome(o, bids, assigned, -float(rng.uniform(0, 1)) if assigned else 0.0,
                           -float(rng.uniform(0, 3)))


def test_default_fixed_bid_matches_recipe():
    rows = loss_rows()
    assert default_fixed_bid(np.array(rows)) == max(0.0, rows[5][0] - rows[5][2])


def test_fixed_bid_function_masks():
    assert fixed_bid([2.0, 3.0, 4.0], (0, 2, 1)) == [0.0, 3.0, 4.0]
