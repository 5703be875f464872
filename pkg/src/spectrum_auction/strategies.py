"""Bidding policies.

Four families compete in the built-in experiments: a state-blind constant
bidder, a buffer-driven bidder, a value-of-service bidder that prices each
channel by the expected overflow it would avert this slot, and an adaptive
bidder that adds a learned estimate of future value (see ``learning``).

All policies emit nonnegative bids and bid zero on occupied channels.  A
channel is seen as free exactly when its level in the user's own state is
at least 1.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .env import SUState, ValidationError

__all__ = [
    "Observation",
    "BiddingPolicy",
    "FixedPolicy",
    "SourceAwarePolicy",
    "MyopicPolicy",
    "LearningPolicy",
    "fixed_bid",
    "source_aware_bid",
    "myopic_bid",
    "middle_level",
    "default_fixed_bid",
    "POLICY_NAMES",
]

POLICY_NAMES = ("fixed", "source_aware", "myopic", "learning")


class Observation(NamedTuple):
    """What one user sees when it has to bid: its own state, the announced
    channel availability, and its own share of the previous auction round."""

    state: SUState
    availability: tuple[bool, ...]
    last_bids: tuple[float, ...] | None = None
    last_assigned: int | None = None
    last_tax: float | None = None


def middle_level(n_levels: int) -> int:
    """Reference quality level for the buffer-driven policy (1-based)."""
    return (n_levels + 1) // 2


def _as_rows(loss_table) -> list[list[float]]:
    if isinstance(loss_table, np.ndarray):
        return loss_table.tolist()
    return [list(row) for row in loss_table]


def fixed_bid(amounts: Sequence[float], levels: Sequence[int]) -> list[float]:
    """Constant bids, masked onto the currently free channels."""
    return [float(a) if lev >= 1 else 0.0 for a, lev in zip(amounts, levels)]


def source_aware_bid(
    buffer: int, levels: Sequence[int], loss_rows: Sequence[Sequence[float]], mid: int
) -> list[float]:
    """One buffer-driven amount on every free channel.

    The amount is the expected overflow averted by a slot of service at the
    middle quality level, so it grows with the backlog but ignores which
    channel is actually on offer.
    """
    amount = loss_rows[buffer][0] - loss_rows[buffer][mid]
    if amount < 0.0:
        amount = 0.0
    return [amount if lev >= 1 else 0.0 for lev in levels]


def myopic_bid(state: SUState, loss_rows: Sequence[Sequence[float]]) -> list[float]:
    """Per-channel value of service for the current slot only.

    Each free channel is priced at the expected overflow averted by serving
    at that channel's current quality, which is the truthful one-shot value
    of winning it.
    """
    row = loss_rows[state.buffer]
    base = row[0]
    return [max(0.0, base - row[lev]) if lev >= 1 else 0.0 for lev in state.levels]


def default_fixed_bid(loss_table) -> float:
    """Calibrated constant for the state-blind policy: half the largest
    one-shot service value.

    Interior to the value-of-service bid range, so a constant bidder wins
    some contested slots and loses others instead of degenerating to an
    always-win or always-lose matchup.
    """
    rows = _as_rows(loss_table)
    capacity = len(rows) - 1
    top = len(rows[0]) - 1
    return max(0.0, 0.5 * (rows[capacity][0] - rows[capacity][top]))


class BiddingPolicy:
    """One user's bid generator.

    ``bids`` maps the visible observation to a per-channel bid vector.
    ``record_outcome`` feeds the auction result back after the slot settles;
    only the learning policy uses it.
    """

    name = "base"

    def bids(self, obs: Observation) -> list[float]:
        raise NotImplementedError

    def record_outcome(
        self,
        obs: Observation,
        bids: Sequence[float],
        assigned: int,
        tax: float,
        reward: float,
    ) -> None:
        pass


class FixedPolicy(BiddingPolicy):
    name = "fixed"

    def __init__(self, amounts: Sequence[float]):
        self.amounts = [float(a) for a in amounts]
        if any(a < 0 for a in self.amounts):
            raise ValidationError(["fixed bid amounts must be nonnegative"])

    def bids(self, obs: Observation) -> list[float]:
        return fixed_bid(self.amounts, obs.state.levels)


class SourceAwarePolicy(BiddingPolicy):
    name = "source_aware"

    def __init__(self, loss_table, mid: int | None = None):
        self._rows = _as_rows(loss_table)
        self._mid = mid if mid is not None else middle_level(len(self._rows[0]) - 1)

    def bids(self, obs: Observation) -> list[float]:
        return source_aware_bid(obs.state.buffer, obs.state.levels, self._rows, self._mid)


class MyopicPolicy(BiddingPolicy):
    name = "myopic"

    def __init__(self, loss_table):
        self._rows = _as_rows(loss_table)

    def bids(self, obs: Observation) -> list[float]:
        return myopic_bid(obs.state, self._rows)


class LearningPolicy(BiddingPolicy):
    """Adaptive bidder; delegates valuation to a best-response learner.

    With ``epsilon`` > 0 a slot is occasionally replaced by uniform probe
    bids drawn from the learner's tax range (off by default).
    """

    name = "learning"

    def __init__(self, learner, epsilon: float = 0.0, rng: np.random.Generator | None = None):
        if epsilon and rng is None:
            raise ValidationError(["exploration requires a random stream"])
        self.learner = learner
        self.epsilon = float(epsilon)
        self._rng = rng

    def bids(self, obs: Observation) -> list[float]:
        if self.epsilon > 0.0 and self._rng.random() < self.epsilon:
            top = self.learner.classifier.gamma_max
            return [
                float(self._rng.uniform(0.0, top)) if lev >= 1 else 0.0
                for lev in obs.state.levels
            ]
        return self.learner.preference_bids(obs.state)

    def record_outcome(self, obs, bids, assigned, tax, reward) -> None:
        self.learner.observe(obs.state, obs.availability, bids, assigned, tax, reward)
