"""Stochastic environment models for the spectrum-market simulator.

Channel occupancy, per-user channel quality, packet arrivals, and finite
transmit buffers.  Every model comes in two forms: a seeded sampler that
drives simulations, and an exact probability kernel used for model-based
bidding and for test oracles.

Channel state encoding: level 0 means the channel is held by its licensed
owner and unusable; level k >= 1 means the channel is free and the user
would see SNR ``snr_levels[k-1]`` on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

_DIST_TOL = 1e-12

__all__ = [
    "ValidationError",
    "DimensionError",
    "SUState",
    "ChannelModel",
    "TrafficModel",
    "RateTable",
    "SuKernels",
    "channel_transition_matrix",
    "stationary_distribution",
    "step_channel",
    "joint_channel_prob",
    "arrival_pmf",
    "sample_arrivals",
    "served_remainder",
    "buffer_next",
    "packet_loss",
    "buffer_kernel",
    "expected_loss",
    "expected_loss_table",
    "state_transition_prob",
]


class ValidationError(ValueError):
    """One or more model invariants are violated.  Carries every problem found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DimensionError(ValueError):
    """Inputs that must agree in length or shape do not."""


class SUState(NamedTuple):
    """Decision state of one user at the start of a slot.

    ``buffer`` is the buffered packet count, ``levels`` the state of every
    channel as this user sees it (0 = occupied, k >= 1 = free at SNR index k).
    """

    buffer: int
    levels: tuple[int, ...]


def _check_prob(name: str, p: float, problems: list[str]) -> None:
    if not 0.0 <= p <= 1.0:
        problems.append(f"{name} must lie in [0, 1], got {p!r}")


def _check_dist(name: str, values: Sequence[float], problems: list[str]) -> None:
    if any(v < 0.0 for v in values):
        problems.append(f"{name} has negative entries")
    if abs(sum(values) - 1.0) > _DIST_TOL:
        problems.append(f"{name} must sum to 1 within {_DIST_TOL}, got {sum(values)!r}")


@dataclass(frozen=True)
class ChannelModel:
    """Joint occupancy/quality chain of one channel as seen by one user.

    ``p_nf`` is the per-slot probability that an occupied channel is released,
    ``p_fn`` that a free channel is reclaimed by its licensed owner.
    ``entry_dist[k-1]`` gives the quality level on the slot a channel turns
    free; ``cond_trans[l-1][k-1]`` the quality transition while it stays free.
    """

    p_nf: float
    p_fn: float
    snr_levels: tuple[float, ...]
    entry_dist: tuple[float, ...]
    cond_trans: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "snr_levels", tuple(float(x) for x in self.snr_levels))
        object.__setattr__(self, "entry_dist", tuple(float(x) for x in self.entry_dist))
        object.__setattr__(
            self, "cond_trans", tuple(tuple(float(x) for x in row) for row in self.cond_trans)
        )
        problems = self.problems()
        if problems:
            raise ValidationError(problems)

    @property
    def n_levels(self) -> int:
        return len(self.snr_levels)

    def problems(self) -> list[str]:
        problems: list[str] = []
        _check_prob("p_nf", self.p_nf, problems)
        _check_prob("p_fn", self.p_fn, problems)
        k = len(self.snr_levels)
        if k < 1:
            problems.append("snr_levels must hold at least one level")
        if any(b <= a for a, b in zip(self.snr_levels, self.snr_levels[1:])):
            problems.append("snr_levels must be strictly increasing")
        if len(self.entry_dist) != k:
            problems.append(f"entry_dist must have {k} entries, got {len(self.entry_dist)}")
        else:
            _check_dist("entry_dist", self.entry_dist, problems)
        if len(self.cond_trans) != k:
            problems.append(f"cond_trans must have {k} rows, got {len(self.cond_trans)}")
        else:
            for l, row in enumerate(self.cond_trans):
                if len(row) != k:
                    problems.append(f"cond_trans row {l} must have {k} entries")
                else:
                    _check_dist(f"cond_trans row {l}", row, problems)
        return problems


def channel_transition_matrix(model: ChannelModel) -> np.ndarray:
    """(K+1)x(K+1) row-stochastic transition matrix over channel levels.

    Row 0 is the occupied state: it frees up with probability p_nf, landing
    on quality k with entry_dist weight.  Rows l >= 1 fall back to occupied
    with probability p_fn, otherwise the quality chain advances.
    """
    k = model.n_levels
    mat = np.zeros((k + 1, k + 1))
    mat[0, 0] = 1.0 - model.p_nf
    for kk in range(1, k + 1):
        mat[0, kk] = model.p_nf * model.entry_dist[kk - 1]
    for l in range(1, k + 1):
        mat[l, 0] = model.p_fn
        for kk in range(1, k + 1):
            mat[l, kk] = (1.0 - model.p_fn) * model.cond_trans[l - 1][kk - 1]
    return mat


def stationary_distribution(matrix: np.ndarray) -> np.ndarray:
    """Stationary row vector of a row-stochastic matrix (pi @ P = pi)."""
    n = matrix.shape[0]
    a = np.vstack([matrix.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def step_channel(level: int, matrix: np.ndarray, rng: np.random.Generator) -> int:
    """Draw the next channel level from the row of the current one."""
    row = matrix[level]
    u = rng.random()
    cum = np.cumsum(row)
    nxt = int(np.searchsorted(cum, u, side="right"))
    return min(nxt, matrix.shape[0] - 1)


def joint_channel_prob(
    next_levels: Sequence[int],
    cur_levels: Sequence[int],
    matrices: Sequence[np.ndarray],
) -> float:
    """Probability of a joint level transition; channels evolve independently."""
    if not (len(next_levels) == len(cur_levels) == len(matrices)):
        raise DimensionError(
            f"level/matrix lengths differ: {len(next_levels)}, {len(cur_levels)}, {len(matrices)}"
        )
    p = 1.0
    for nxt, cur, mat in zip(next_levels, cur_levels, matrices):
        p *= float(mat[cur, nxt])
        if p == 0.0:
            return 0.0
    return p


@dataclass(frozen=True)
class TrafficModel:
    """Poisson packet arrivals at ``mu`` packets/second over ``slot_len``-second slots.

    ``tail_cap`` truncates pmf sums; it defaults to a point where the omitted
    mass is below 1e-9.
    """

    mu: float
    slot_len: float
    tail_cap: int | None = None

    def __post_init__(self):
        problems: list[str] = []
        if self.mu < 0:
            problems.append(f"mu must be nonnegative, got {self.mu!r}")
        if self.slot_len <= 0:
            problems.append(f"slot_len must be positive, got {self.slot_len!r}")
        if problems:
            raise ValidationError(problems)
        if self.tail_cap is None:
            m = self.mu * self.slot_len
            cap = int(math.ceil(m + 10.0 * math.sqrt(m))) + 10
            object.__setattr__(self, "tail_cap", cap)
        if self.tail_cap < 1:
            raise ValidationError([f"tail_cap must be at least 1, got {self.tail_cap!r}"])
        if self._omitted_mass() > 1e-9:
            raise ValidationError(
                [f"tail_cap={self.tail_cap} leaves more than 1e-9 arrival mass uncovered"]
            )

    @property
    def mean_arrivals(self) -> float:
        return self.mu * self.slot_len

    def _omitted_mass(self) -> float:
        m = self.mean_arrivals
        if m == 0.0:
            return 0.0
        total = 0.0
        p = math.exp(-m)
        for n in range(self.tail_cap + 1):
            total += p
            p *= m / (n + 1)
        return max(0.0, 1.0 - total)


def arrival_pmf(traffic: TrafficModel, n: int) -> float:
    """Probability of exactly ``n`` packet arrivals in one slot."""
    if n < 0:
        raise ValueError(f"arrival count must be nonnegative, got {n}")
    m = traffic.mean_arrivals
    if m == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(n * math.log(m) - m - math.lgamma(n + 1))


def sample_arrivals(traffic: TrafficModel, rng: np.random.Generator) -> int:
    """Draw one slot's arrival count."""
    return int(rng.poisson(traffic.mean_arrivals))


@dataclass(frozen=True)
class RateTable:
    """Transmission rate per channel level in packets/second.

    Level 0 (occupied channel) carries nothing.  Rates must not decrease
    with quality.  Service within a slot is a whole number of packets:
    floor(rate * slot_len).
    """

    rate_per_level: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "rate_per_level", tuple(float(x) for x in self.rate_per_level)
        )
        problems: list[str] = []
        if not self.rate_per_level:
            problems.append("rate_per_level is empty")
        elif self.rate_per_level[0] != 0.0:
            problems.append("rate_per_level[0] must be 0 (occupied channel carries nothing)")
        if any(b < a for a, b in zip(self.rate_per_level, self.rate_per_level[1:])):
            problems.append("rate_per_level must be non-decreasing")
        if any(r < 0 for r in self.rate_per_level):
            problems.append("rates must be nonnegative")
        if problems:
            raise ValidationError(problems)

    @property
    def n_levels(self) -> int:
        return len(self.rate_per_level) - 1

    @classmethod
    def per_slot(cls, packets_per_slot: Sequence[float], slot_len: float) -> "RateTable":
        """Build from whole-packet service amounts per slot (level 0 implied)."""
        return cls((0.0,) + tuple(p / slot_len for p in packets_per_slot))

    def service_quantum(self, level: int, slot_len: float) -> int:
        """Packets removable from the buffer in one slot at this level."""
        # the epsilon keeps rate*slot_len products like 100 * 0.01 on the integer
        return int(math.floor(self.rate_per_level[level] * slot_len + 1e-9))


def served_remainder(v: int, level: int, rates: RateTable, slot_len: float) -> int:
    """Packets left after one slot of service, before new arrivals."""
    q = rates.service_quantum(level, slot_len)
    return v - q if v > q else 0


def buffer_next(
    v: int, capacity: int, level: int, rates: RateTable, slot_len: float, arrivals: int
) -> int:
    """Next-slot buffer occupancy: serve, add arrivals, cap at capacity."""
    if arrivals < 0:
        raise ValueError(f"arrivals must be nonnegative, got {arrivals}")
    rem = served_remainder(v, level, rates, slot_len)
    nxt = rem + arrivals
    return nxt if nxt < capacity else capacity


def packet_loss(
    v: int, capacity: int, level: int, rates: RateTable, slot_len: float, arrivals: int
) -> int:
    """Packets pushed out of the buffer this slot."""
    if arrivals < 0:
        raise ValueError(f"arrivals must be nonnegative, got {arrivals}")
    rem = served_remainder(v, level, rates, slot_len)
    over = rem + arrivals - capacity
    return over if over > 0 else 0


def buffer_kernel(
    v: int, capacity: int, level: int, rates: RateTable, traffic: TrafficModel
) -> np.ndarray:
    """Exact distribution of the next buffer occupancy.

    The top state absorbs the full analytic arrival tail, so the returned
    vector sums to 1 up to float rounding.
    """
    rem = served_remainder(v, level, rates, traffic.slot_len)
    out = np.zeros(capacity + 1)
    if rem >= capacity:
        out[capacity] = 1.0
        return out
    m = traffic.mean_arrivals
    if m == 0.0:
        out[rem] = 1.0
        return out
    p = math.exp(-m)
    acc = 0.0
    for nxt in range(rem, capacity):
        out[nxt] = p
        acc += p
        p *= m / (nxt - rem + 1)
    out[capacity] = max(0.0, 1.0 - acc)
    return out


def expected_loss(
    v: int, capacity: int, level: int, rates: RateTable, traffic: TrafficModel
) -> float:
    """Expected packets lost this slot, taken over the arrival distribution.

    Bids must be chosen before the slot's arrivals materialise, so policies
    price channels by this expectation rather than the realised loss.
    """
    rem = served_remainder(v, level, rates, traffic.slot_len)
    headroom = capacity - rem
    m = traffic.mean_arrivals
    if m == 0.0:
        return 0.0
    total = 0.0
    p = math.exp(-m)
    for a in range(traffic.tail_cap + 1):
        if a > headroom:
            total += p * (a - headroom)
        p *= m / (a + 1)
    return total


def expected_loss_table(
    capacity: int, rates: RateTable, traffic: TrafficModel
) -> np.ndarray:
    """(capacity+1) x (K+1) table of expected_loss over buffer fill and level."""
    k = rates.n_levels
    out = np.empty((capacity + 1, k + 1))
    for v in range(capacity + 1):
        for lev in range(k + 1):
            out[v, lev] = expected_loss(v, capacity, lev, rates, traffic)
    return out


def state_transition_prob(
    state: SUState,
    assigned: int,
    next_state: SUState,
    channel_matrices: Sequence[np.ndarray],
    capacity: int,
    rates: RateTable,
    traffic: TrafficModel,
) -> float:
    """Probability of one user's state transition given its channel grant.

    ``assigned`` is 0 for no grant, otherwise the 1-based channel index.
    Factorises into the buffer kernel at the granted channel's current level
    times the joint channel-level transition.
    """
    if len(state.levels) != len(next_state.levels):
        raise DimensionError(
            f"state dimensions differ: {len(state.levels)} vs {len(next_state.levels)}"
        )
    if len(state.levels) != len(channel_matrices):
        raise DimensionError(
            f"{len(channel_matrices)} channel matrices for {len(state.levels)} channels"
        )
    level = state.levels[assigned - 1] if assigned else 0
    buf = buffer_kernel(state.buffer, capacity, level, rates, traffic)[next_state.buffer]
    if buf == 0.0:
        return 0.0
    return float(buf) * joint_channel_prob(next_state.levels, state.levels, channel_matrices)


@dataclass
class SuKernels:
    """Per-user transition machinery, precomputed once per scenario.

    Bundles the channel matrices, every buffer kernel row, the expected-loss
    table and the per-level service quanta so that policies and learners can
    evaluate expectations without touching the samplers.
    """

    capacity: int
    traffic: TrafficModel
    rates: RateTable
    channel_matrices: list[np.ndarray]
    buffer_kernels: np.ndarray  # (K+1, B+1, B+1), indexed [level, v, v']
    loss_table: np.ndarray  # (B+1, K+1)
    quanta: tuple[int, ...]

    @classmethod
    def build(
        cls,
        channels: Sequence[ChannelModel],
        traffic: TrafficModel,
        rates: RateTable,
        capacity: int,
    ) -> "SuKernels":
        problems: list[str] = []
        if capacity < 1:
            problems.append(f"buffer capacity must be at least 1, got {capacity}")
        if not channels:
            problems.append("at least one channel is required")
        ks = {ch.n_levels for ch in channels}
        if len(ks) > 1:
            problems.append(f"channels disagree on the number of levels: {sorted(ks)}")
        k = channels[0].n_levels if channels else 0
        if rates.n_levels != k:
            problems.append(
                f"rate table covers {rates.n_levels} levels but channels have {k}"
            )
        if problems:
            raise ValidationError(problems)
        matrices = [channel_transition_matrix(ch) for ch in channels]
        bk = np.empty((k + 1, capacity + 1, capacity + 1))
        for lev in range(k + 1):
            for v in range(capacity + 1):
                bk[lev, v] = buffer_kernel(v, capacity, lev, rates, traffic)
        loss = expected_loss_table(capacity, rates, traffic)
        quanta = tuple(rates.service_quantum(lev, traffic.slot_len) for lev in range(k + 1))
        return cls(capacity, traffic, rates, matrices, bk, loss, quanta)

    @property
    def n_channels(self) -> int:
        return len(self.channel_matrices)

    @property
    def n_levels(self) -> int:
        return self.channel_matrices[0].shape[0] - 1

    @property
    def profile_size(self) -> int:
        return (self.n_levels + 1) ** self.n_channels

    def profile_index(self, levels: Sequence[int]) -> int:
        """Mixed-radix index of a channel-level profile, channel 0 most significant."""
        idx = 0
        base = self.n_levels + 1
        for lev in levels:
            idx = idx * base + lev
        return idx

    def profile_row(self, levels: Sequence[int]) -> np.ndarray:
        """Transition distribution from ``levels`` over all next profiles."""
        row = self.channel_matrices[0][levels[0]]
        for j in range(1, len(levels)):
            row = np.kron(row, self.channel_matrices[j][levels[j]])
        return row
