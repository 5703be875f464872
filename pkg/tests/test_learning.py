"""Opponent classification, transition counting, value updates, and the
learned preference bids, each checked against slow explicit oracles."""

import json

import numpy as np
import pytest
from conftest import oracle_future_value, random_kernels

from spectrum_auction.env import RateTable, SUState, SuKernels, TrafficModel, ValidationError
from spectrum_auction.learning import (
    BestResponseLearner,
    OpponentClassifier,
    TransitionCounts,
    ValueTable,
    compute_preference_bids,
    compute_stage_q,
    learning_rate,
)
from spectrum_auction.strategies import myopic_bid

from test_env import reference_channel

SLOT = 0.01


# ------------------------------------------------------------ schedule


def test_learning_rate_values():
    assert learning_rate(0) == 0.5
    assert learning_rate(8) == pytest.approx(0.1)
    for m in range(1000):
        assert 0.0 < learning_rate(m) < 1.0
    # square-summable: partial sums of squares stay under pi^2/6
    assert sum(learning_rate(m) ** 2 for m in range(100_000)) < 0.65


# ---------------------------------------------------------- classifier


def test_classifier_winner_uses_payment():
    cl = OpponentClassifier(gamma_max=10.0, n_classes=5)
    assert cl.classify(assigned=1, tax=-3.2, own_bids=[1.0], availability=[True]) == 2
    assert cl.last_class == 2


def test_classifier_loser_uses_cheapest_own_attempt():
    cl = OpponentClassifier(gamma_max=10.0, n_classes=5)
    h = cl.classify(assigned=0, tax=0.0, own_bids=[7.0, 2.0], availability=[False, True])
    assert h == 2  # min over free channels is 2.0, inside [2, 4)


def test_classifier_idle_slot_keeps_previous_class():
    cl = OpponentClassifier(gamma_max=10.0, n_classes=5)
    cl.classify(assigned=1, tax=-9.0, own_bids=[9.0], availability=[True])
    before = cl.last_class
    h = cl.classify(assigned=0, tax=0.0, own_bids=[0.0], availability=[False])
    assert h == before == 5


def test_classifier_clamps_into_top_class():
    cl = OpponentClassifier(gamma_max=2.0, n_classes=4)
    assert cl.classify(assigned=1, tax=-2.0, own_bids=[2.0], availability=[True]) == 4
    assert cl.classify(assigned=1, tax=-99.0, own_bids=[2.0], availability=[True]) == 4
    assert cl.classify(assigned=1, tax=0.0, own_bids=[2.0], availability=[True]) == 1


def test_classifier_total_on_random_outcomes():
    rng = np.random.default_rng(6)
    cl = OpponentClassifier(gamma_max=float(rng.uniform(0.5, 5.0)), n_classes=int(rng.integers(1, 7)))
    for _ in range(2000):
        n = int(rng.integers(1, 4))
        avail = [bool(rng.integers(0, 2)) for _ in range(n)]
        assigned = 0
        if any(avail) and rng.random() < 0.5:
            assigned = 1 + avail.index(True)
        tax = -float(rng.uniform(0, 8)) if assigned else 0.0
        bids = [float(rng.uniform(0, 8)) if a else 0.0 for a in avail]
        h = cl.classify(assigned, tax, bids, avail)
        assert 1 <= h <= cl.n_classes


def test_classifier_validation():
    with pytest.raises(ValidationError):
        OpponentClassifier(gamma_max=0.0, n_classes=5)
    with pytest.raises(ValidationError):
        OpponentClassifier(gamma_max=1.0, n_classes=0)


def test_classifier_thresholds_equally_spaced():
    cl = OpponentClassifier(gamma_max=10.0, n_classes=5)
    assert cl.thresholds == (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)


# -------------------------------------------------------------- counts


def test_counts_single_increment():
    tc = TransitionCounts(n_classes=4, n_channels=2)
    tc.record(h_prev=2, h_new=3, assigned=1)
    assert tc.counts[2, 1, 1] == 1
    assert tc.total == 1


def test_counts_accumulate_and_replay():
    rng = np.random.default_rng(12)
    events = [
        (int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(0, 3)))
        for _ in range(500)
    ]
    tc1 = TransitionCounts(4, 2)
    tc2 = TransitionCounts(4, 2)
    for e in events:
        tc1.record(*e)
    for e in events:
        tc2.record(*e)
    assert tc1.total == 500
    assert np.array_equal(tc1.counts, tc2.counts)


def test_transition_estimate_frequencies():
    tc = TransitionCounts(5, 1)
    for _ in range(2):
        tc.record(3, 1, 0)
        tc.record(3, 5, 0)
    assert np.allclose(tc.distribution(3, 0), [0.5, 0, 0, 0, 0.5])
    assert np.allclose(tc.distribution(2, 0), [0.2] * 5)  # untouched column
    tc.record(1, 4, 1)
    assert np.allclose(tc.distribution(1, 1), [0, 0, 0, 1.0, 0])
    for h in range(1, 6):
        for g in range(2):
            assert abs(tc.distribution(h, g).sum() - 1.0) < 1e-12


# ------------------------------------------------------------- V table


def test_value_update_convex_combination():
    vt = ValueTable(capacity=2, profile_size=3, n_classes=2)
    key = (1, 2, 1)
    vt.values[1, 2, 0] = 1.0
    vt.update(key, 3.0, schedule=lambda m: 0.5)
    assert vt.get(key) == 2.0


def test_value_update_zero_rate_keeps_value():
    vt = ValueTable(2, 3, 2)
    vt.values[0, 0, 1] = 4.0
    vt.update((0, 0, 2), 100.0, schedule=lambda m: 0.0)
    assert vt.get((0, 0, 2)) == 4.0


def test_value_update_unit_rate_overwrites():
    vt = ValueTable(2, 3, 2)
    vt.update((2, 1, 1), -7.5, schedule=lambda m: 1.0)
    assert vt.get((2, 1, 1)) == -7.5
    assert vt.visits[2, 1, 0] == 1


def test_value_update_touches_single_entry_and_replays():
    rng = np.random.default_rng(3)
    vt = ValueTable(2, 4, 3)
    updates = [
        ((int(rng.integers(0, 3)), int(rng.integers(0, 4)), int(rng.integers(1, 4))),
         float(rng.normal()))
        for _ in range(300)
    ]
    for key, q in updates:
        before = vt.values.copy()
        vt.update(key, q)
        changed = np.argwhere(vt.values != before)
        assert len(changed) <= 1
    vt2 = ValueTable(2, 4, 3)
    for key, q in updates:
        vt2.update(key, q)
    assert np.array_equal(vt.values, vt2.values)
    assert np.array_equal(vt.visits, vt2.visits)
    assert vt.size == 3 * 4 * 3


# ------------------------------------------------------- learned values


def test_stage_q_degenerate_cases():
    rng = np.random.default_rng(1)
    kernels = random_kernels(rng)
    vt = ValueTable(kernels.capacity, kernels.profile_size, 2)
    state = SUState(1, (1,))
    opp = np.array([0.5, 0.5])
    assert compute_stage_q(state, -2.5, 1, vt, kernels, opp, alpha=0.8) == -2.5  # zero table
    vt.values[:] = rng.normal(size=vt.values.shape)
    assert compute_stage_q(state, -2.5, 1, vt, kernels, opp, alpha=0.0) == -2.5


def test_stage_q_matches_double_sum_oracle():
    rng = np.random.default_rng(14)
    for _ in range(100):
        capacity = int(rng.integers(1, 3))
        k = int(rng.integers(1, 3))
        kernels = random_kernels(rng, capacity=capacity, k=k, n=1)
        h_count = int(rng.integers(1, 4))
        vt = ValueTable(capacity, kernels.profile_size, h_count)
        vt.values[:] = rng.normal(scale=3.0, size=vt.values.shape)
        lev = int(rng.integers(0, k + 1))
        state = SUState(int(rng.integers(0, capacity + 1)), (lev,))
        assigned = int(rng.integers(0, 2)) if lev else 0
        opp = rng.dirichlet(np.ones(h_count))
        reward = -float(rng.uniform(0, 5))
        alpha = float(rng.uniform(0, 1))
        got = compute_stage_q(state, reward, assigned, vt, kernels, opp, alpha)
        want = reward + alpha * oracle_future_value(state, assigned, kernels, opp, vt.values)
        assert got == pytest.approx(want, abs=1e-9)


def test_preference_bids_zero_table_and_zero_discount_match_myopic():
    kernels = SuKernels.build(
        [reference_channel()] * 2,
        TrafficModel(250.0, SLOT),
        RateTable.per_slot((1, 2, 3), SLOT),
        10,
    )
    rows = kernels.loss_table.tolist()
    counts = TransitionCounts(3, 2)
    vt = ValueTable(10, kernels.profile_size, 3)
    rng = np.random.default_rng(15)
    for _ in range(200):
        state = SUState(int(rng.integers(0, 11)), tuple(int(x) for x in rng.integers(0, 4, size=2)))
        myo = myopic_bid(state, rows)
        assert compute_preference_bids(state, 1, vt, kernels, counts, alpha=0.8) == myo
        assert compute_preference_bids(state, 1, vt, kernels, counts, alpha=0.0) == myo


def test_preference_bids_match_double_sum_oracle():
    rng = np.random.default_rng(16)
    for _ in range(100):
        capacity = int(rng.integers(1, 3))
        k = int(rng.integers(1, 3))
        kernels = random_kernels(rng, capacity=capacity, k=k, n=1)
        h_count = int(rng.integers(1, 4))
        vt = ValueTable(capacity, kernels.profile_size, h_count)
        vt.values[:] = rng.normal(scale=3.0, size=vt.values.shape)
        counts = TransitionCounts(h_count, 1)
        for _ in range(int(rng.integers(0, 30))):
            counts.record(
                int(rng.integers(1, h_count + 1)),
                int(rng.integers(1, h_count + 1)),
                int(rng.integers(0, 2)),
            )
        lev = int(rng.integers(0, k + 1))
        state = SUState(int(rng.integers(0, capacity + 1)), (lev,))
        h = int(rng.integers(1, h_count + 1))
        alpha = float(rng.uniform(0, 1))
        got = compute_preference_bids(state, h, vt, kernels, counts, alpha)
        rows = kernels.loss_table.tolist()
        if lev == 0:
            assert got == [0.0]
            continue
        ft_j = oracle_future_value(state, 1, kernels, counts.distribution(h, 1), vt.values)
        ft_0 = oracle_future_value(state, 0, kernels, counts.distribution(h, 0), vt.values)
        want = (rows[state.buffer][0] - rows[state.buffer][lev]) + alpha * (ft_j - ft_0)
        assert got[0] == pytest.approx(max(0.0, want), abs=1e-9)


# -------------------------------------------------------------- learner


def make_learner(alpha=0.8, n_classes=3):
    kernels = SuKernels.build(
        [reference_channel()] * 2,
        TrafficModel(250.0, SLOT),
        RateTable.per_slot((1, 2, 3), SLOT),
        10,
    )
    return BestResponseLearner(kernels, alpha=alpha, n_classes=n_classes)


def drive(learner, steps, seed):
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(steps):
        state = SUState(int(rng.integers(0, 11)), tuple(int(x) for x in rng.integers(0, 4, size=2)))
        avail = tuple(lev >= 1 for lev in state.levels)
        bids = learner.preference_bids(state)
        assigned = 0
        if any(avail):
            free = [j + 1 for j, a in enumerate(avail) if a]
            assigned = int(rng.choice([0] + free))
        tax = -float(rng.uniform(0, 1)) if assigned else 0.0
        reward = -float(rng.uniform(0, 4)) + tax
        learner.observe(state, avail, bids, assigned, tax, reward)
        trace.append(bids)
    return trace


def test_learner_gamma_calibration_default():
    learner = make_learner()
    lt = learner.kernels.loss_table
    assert learner.classifier.gamma_max == pytest.approx(float(lt[10, 0] - lt[10, 3]))


def test_learner_updates_one_entry_per_slot():
    learner = make_learner()
    before = learner.values.values.copy()
    drive(learner, 1, seed=3)
    assert (learner.values.values != before).sum() <= 1
    assert learner.values.visits.sum() == 1


def test_learner_replay_reproduces_tables_bit_exactly():
    a = make_learner()
    b = make_learner()
    drive(a, 400, seed=7)
    drive(b, 400, seed=7)
    assert np.array_equal(a.values.values, b.values.values)
    assert np.array_equal(a.values.visits, b.values.visits)
    assert np.array_equal(a.counts.counts, b.counts.counts)
    assert a.classifier.last_class == b.classifier.last_class


def test_snapshot_round_trip_bit_exact():
    learner = make_learner()
    drive(learner, 300, seed=21)
    text = learner.snapshot()
    doc = json.loads(text)
    assert doc["format"] == "best-response-learner" and doc["version"] == 1
    clone = BestResponseLearner.restore(text, learner.kernels)
    assert np.array_equal(clone.values.values, learner.values.values)
    assert np.array_equal(clone.values.visits, learner.values.visits)
    assert np.array_equal(clone.counts.counts, learner.counts.counts)
    assert clone.classifier.last_class == learner.classifier.last_class
    assert clone._prev_class == learner._prev_class
    assert clone._prev_assigned == learner._prev_assigned
    # the clone continues exactly in step with the original
    assert drive(clone, 50, seed=33) == drive(learner, 50, seed=33)


def test_snapshot_rejects_wrong_dims_and_version():
    learner = make_learner()
    text = learner.snapshot()
    other = SuKernels.build(
        [reference_channel()],
        TrafficModel(250.0, SLOT),
        RateTable.per_slot((1, 2, 3), SLOT),
        10,
    )
    with pytest.raises(ValidationError):
        BestResponseLearner.restore(text, other)
    doc = json.loads(text)
    doc["version"] = 99
    with pytest.raises(ValidationError):
        BestResponseLearner.restore(json.dumps(doc), learner.kernels)


def test_learner_rejects_bad_discount():
    with pytest.raises(ValidationError):
        make_learner(alpha=1.0)
