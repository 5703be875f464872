"""Best-response learning for the repeated channel auction.

A learning user cannot see its rivals' states or bids.  It compresses
everything it can observe about them, the payment it was charged, into a
small number of congestion classes, counts how those classes move between
slots under each of its own channel grants, and keeps a table of long-run
values indexed by (own state, congestion class).  Bids then price each free
channel at the one-slot service value plus the discounted change in
expected future value, with expectations taken under the learned models.

Learner state is serialisable to a versioned JSON snapshot for
checkpoint/resume and post-hoc inspection (format below).

Snapshot format, version 1::

    {
      "format": "best-response-learner",
      "version": 1,
      "alpha": float,
      "classifier": {"gamma_max": float, "n_classes": int, "last_class": int},
      "counts": int[H][H][N+1],        # counts[new-1][prev-1][grant]
      "values": float[B+1][P][H],      # P = (K+1)^N channel profiles
      "visits": int[B+1][P][H],
      "prev_class": int | null,
      "prev_assigned": int | null,
      "dims": {"capacity": B, "n_channels": N, "n_levels": K}
    }

Arrays are nested lists; floats round-trip exactly through JSON.
"""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np

from .env import SUState, SuKernels, ValidationError

__all__ = [
    "learning_rate",
    "OpponentClassifier",
    "TransitionCounts",
    "ValueTable",
    "expected_future_value",
    "compute_stage_q",
    "compute_preference_bids",
    "BestResponseLearner",
]

SNAPSHOT_FORMAT = "best-response-learner"
SNAPSHOT_VERSION = 1


def learning_rate(visit_count: int) -> float:
    """Step size for the m-th update of one table entry: 1 / (2 + m).

    Stays strictly inside (0, 1); the harmonic series of steps diverges
    while the series of squares converges, so averages settle.
    """
    return 1.0 / (2.0 + visit_count)


class OpponentClassifier:
    """Maps each slot's auction outcome to a congestion class in [1, H].

    The payment range [0, gamma_max] is split into H equal bins.  A winner
    is classified by the payment it was charged.  A loser with free channels
    on offer learns only that the field outbid its cheapest attempt, so its
    own lowest bid on a free channel stands in.  With nothing on offer there
    was no interaction and the previous class carries over.
    """

    def __init__(self, gamma_max: float, n_classes: int, last_class: int = 1):
        problems = []
        if gamma_max <= 0:
            problems.append(f"gamma_max must be positive, got {gamma_max!r}")
        if n_classes < 1:
            problems.append(f"n_classes must be at least 1, got {n_classes}")
        if not 1 <= last_class <= max(n_classes, 1):
            problems.append(f"last_class {last_class} outside [1, {n_classes}]")
        if problems:
            raise ValidationError(problems)
        self.gamma_max = float(gamma_max)
        self.n_classes = int(n_classes)
        self.last_class = int(last_class)

    @property
    def thresholds(self) -> tuple[float, ...]:
        w = self.gamma_max / self.n_classes
        return tuple(h * w for h in range(self.n_classes + 1))

    def class_of(self, magnitude: float) -> int:
        """Bin index of a payment-scale magnitude; values at or beyond
        gamma_max clamp into the top class."""
        if magnitude < 0.0:
            magnitude = 0.0
        h = int(magnitude * self.n_classes / self.gamma_max) + 1
        return h if h < self.n_classes else self.n_classes

    def classify(
        self,
        assigned: int,
        tax: float,
        own_bids: Sequence[float],
        availability: Sequence[bool],
    ) -> int:
        if assigned:
            h = self.class_of(abs(tax))
        elif any(availability):
            h = self.class_of(
                min(b for b, free in zip(own_bids, availability) if free)
            )
        else:
            h = self.last_class
        self.last_class = h
        return h


class TransitionCounts:
    """Observed congestion-class transitions, split by own channel grant.

    ``counts[new-1, prev-1, g]`` is how often class ``prev`` moved to class
    ``new`` while this user held grant ``g`` (0 = no channel).  Entries only
    ever increment.
    """

    def __init__(self, n_classes: int, n_channels: int):
        self.counts = np.zeros((n_classes, n_classes, n_channels + 1), dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def record(self, h_prev: int, h_new: int, assigned: int) -> None:
        self.counts[h_new - 1, h_prev - 1, assigned] += 1

    def distribution(self, h_cur: int, assigned: int) -> np.ndarray:
        """Relative-frequency estimate of the next class; uniform before the
        first observation in this column."""
        col = self.counts[:, h_cur - 1, assigned]
        total = col.sum()
        if total == 0:
            n = self.counts.shape[0]
            return np.full(n, 1.0 / n)
        return col / total


class ValueTable:
    """Long-run value estimates indexed by (buffer, channel profile, class).

    Starts at zero everywhere.  Each slot touches exactly one entry with a
    convex step whose size decays in that entry's own visit count.
    """

    def __init__(self, capacity: int, profile_size: int, n_classes: int):
        shape = (capacity + 1, profile_size, n_classes)
        self.values = np.zeros(shape)
        self.visits = np.zeros(shape, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.values.size

    def get(self, key: tuple[int, int, int]) -> float:
        v, p, h = key
        return float(self.values[v, p, h - 1])

    def update(
        self,
        key: tuple[int, int, int],
        q: float,
        schedule: Callable[[int], float] = learning_rate,
    ) -> None:
        v, p, h = key
        m = int(self.visits[v, p, h - 1])
        g = schedule(m)
        self.values[v, p, h - 1] = (1.0 - g) * self.values[v, p, h - 1] + g * q
        self.visits[v, p, h - 1] = m + 1


def expected_future_value(
    state: SUState,
    kernels: SuKernels,
    values: np.ndarray,
    opp_dist: np.ndarray,
    assigned: int,
    mc: np.ndarray | None = None,
) -> float:
    """Expectation of the value table over the next own state and class.

    ``mc`` may carry the precomputed contraction of the channel-profile
    transition row with the table (it depends on the state but not on the
    grant, so callers evaluating several grants reuse it).
    """
    if mc is None:
        mc = np.tensordot(kernels.profile_row(state.levels), values, axes=([0], [1]))
    lev = state.levels[assigned - 1] if assigned else 0
    bk = kernels.buffer_kernels[lev, state.buffer]
    return float(bk @ (mc @ opp_dist))


def compute_stage_q(
    state: SUState,
    realized_reward: float,
    assigned: int,
    value_table: ValueTable,
    kernels: SuKernels,
    opp_dist: np.ndarray | None,
    alpha: float,
    mc: np.ndarray | None = None,
) -> float:
    """Learning target for the visited entry: the realised slot reward plus
    the discounted model-based expectation of the current table."""
    if alpha == 0.0:
        return float(realized_reward)
    fut = expected_future_value(state, kernels, value_table.values, opp_dist, assigned, mc=mc)
    return float(realized_reward) + alpha * fut


def compute_preference_bids(
    state: SUState,
    opp_class: int,
    value_table: ValueTable,
    kernels: SuKernels,
    counts: TransitionCounts,
    alpha: float,
    loss_rows: Sequence[Sequence[float]] | None = None,
    mc: np.ndarray | None = None,
) -> list[float]:
    """Bid vector of the learning policy.

    Each free channel is priced at the immediate expected service value plus
    ``alpha`` times the difference in expected future value between winning
    that channel and winning nothing.  Negative preferences are submitted as
    zero.  With ``alpha`` zero this reduces exactly to the one-shot pricing
    of the value-of-service policy.
    """
    if loss_rows is None:
        loss_rows = kernels.loss_table.tolist()
    row = loss_rows[state.buffer]
    base = row[0]
    levels = state.levels
    if alpha == 0.0:
        return [max(0.0, base - row[lev]) if lev >= 1 else 0.0 for lev in levels]
    if mc is None:
        mc = np.tensordot(kernels.profile_row(levels), value_table.values, axes=([0], [1]))
    v = state.buffer
    bk = kernels.buffer_kernels
    idle = mc @ counts.distribution(opp_class, 0)
    ft0 = float(bk[0, v] @ idle)
    out: list[float] = []
    for j, lev in enumerate(levels, start=1):
        if lev < 1:
            out.append(0.0)
            continue
        ftj = float(bk[lev, v] @ (mc @ counts.distribution(opp_class, j)))
        u = (base - row[lev]) + alpha * (ftj - ft0)
        out.append(u if u > 0.0 else 0.0)
    return out


class BestResponseLearner:
    """Per-user learning loop tying the pieces together.

    Each slot: bid via ``preference_bids``; after the auction settles, call
    ``observe`` with the outcome.  ``observe`` classifies the field, records
    the class transition under the previous grant, computes the learning
    target from the realised reward and the pre-update table, and applies
    one convex step to the visited entry.
    """

    def __init__(
        self,
        kernels: SuKernels,
        alpha: float,
        n_classes: int = 5,
        gamma_max: float | None = None,
        schedule: Callable[[int], float] = learning_rate,
    ):
        if not 0.0 <= alpha < 1.0:
            raise ValidationError([f"discount must be in [0, 1), got {alpha!r}"])
        self.kernels = kernels
        self.alpha = float(alpha)
        self.schedule = schedule
        if gamma_max is None:
            lt = kernels.loss_table
            # the largest one-shot bid anyone with this source can submit,
            # which also bounds any payment the mechanism can charge it
            gamma_max = float(lt[kernels.capacity, 0] - lt[kernels.capacity, kernels.n_levels])
            if gamma_max <= 0.0:
                gamma_max = 1.0
        self.classifier = OpponentClassifier(gamma_max, n_classes)
        self.counts = TransitionCounts(n_classes, kernels.n_channels)
        self.values = ValueTable(kernels.capacity, kernels.profile_size, n_classes)
        self._loss_rows = kernels.loss_table.tolist()
        self._prev_class: int | None = None
        self._prev_assigned: int | None = None
        self._version = 0
        self._mc_tag: tuple | None = None
        self._mc: np.ndarray | None = None

    def _mc_for(self, state: SUState) -> np.ndarray:
        tag = (state, self._version)
        if tag != self._mc_tag:
            self._mc = np.tensordot(
                self.kernels.profile_row(state.levels), self.values.values, axes=([0], [1])
            )
            self._mc_tag = tag
        return self._mc

    def preference_bids(self, state: SUState) -> list[float]:
        mc = self._mc_for(state) if self.alpha > 0.0 else None
        return compute_preference_bids(
            state,
            self.classifier.last_class,
            self.values,
            self.kernels,
            self.counts,
            self.alpha,
            loss_rows=self._loss_rows,
            mc=mc,
        )

    def observe(
        self,
        state: SUState,
        availability: Sequence[bool],
        own_bids: Sequence[float],
        assigned: int,
        tax: float,
        reward: float,
    ) -> None:
        h = self.classifier.classify(assigned, tax, own_bids, availability)
        if self._prev_class is not None:
            self.counts.record(self._prev_class, h, self._prev_assigned)
        if self.alpha > 0.0:
            opp = self.counts.distribution(h, assigned)
            q = compute_stage_q(
                state, reward, assigned, self.values, self.kernels, opp, self.alpha,
                mc=self._mc_for(state),
            )
        else:
            q = float(reward)
        key = (state.buffer, self.kernels.profile_index(state.levels), h)
        self.values.update(key, q, self.schedule)
        self._version += 1
        self._prev_class = h
        self._prev_assigned = assigned

    def snapshot(self) -> str:
        """Serialise the learned state (not the environment model) to JSON."""
        doc = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "alpha": self.alpha,
            "classifier": {
                "gamma_max": self.classifier.gamma_max,
                "n_classes": self.classifier.n_classes,
                "last_class": self.classifier.last_class,
            },
            "counts": self.counts.counts.tolist(),
            "values": self.values.values.tolist(),
            "visits": self.values.visits.tolist(),
            "prev_class": self._prev_class,
            "prev_assigned": self._prev_assigned,
            "dims": {
                "capacity": self.kernels.capacity,
                "n_channels": self.kernels.n_channels,
                "n_levels": self.kernels.n_levels,
            },
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def restore(
        cls,
        text: str,
        kernels: SuKernels,
        schedule: Callable[[int], float] = learning_rate,
    ) -> "BestResponseLearner":
        """Rebuild a learner from a snapshot; the scenario (and hence the
        kernels) must match the one the snapshot was taken in."""
        doc = json.loads(text)
        problems = []
        if doc.get("format") != SNAPSHOT_FORMAT:
            problems.append(f"unknown snapshot format {doc.get('format')!r}")
        if doc.get("version") != SNAPSHOT_VERSION:
            problems.append(f"unsupported snapshot version {doc.get('version')!r}")
        dims = doc.get("dims", {})
        expected = {
            "capacity": kernels.capacity,
            "n_channels": kernels.n_channels,
            "n_levels": kernels.n_levels,
        }
        if dims != expected:
            problems.append(f"snapshot dims {dims} do not match kernels {expected}")
        if problems:
            raise ValidationError(problems)
        cl = doc["classifier"]
        learner = cls(
            kernels,
            alpha=doc["alpha"],
            n_classes=cl["n_classes"],
            gamma_max=cl["gamma_max"],
            schedule=schedule,
        )
        learner.classifier.last_class = int(cl["last_class"])
        learner.counts.counts = np.array(doc["counts"], dtype=np.int64)
        learner.values.values = np.array(doc["values"], dtype=float)
        learner.values.visits = np.array(doc["visits"], dtype=np.int64)
        learner._prev_class = doc["prev_class"]
        learner._prev_assigned = doc["prev_assigned"]
        return learner
