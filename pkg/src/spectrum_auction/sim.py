"""Slot-by-slot engine for the repeated spectrum auction game.

Each slot: channels transition and the free set is announced, every user
bids through its policy, the moderator assigns channels and charges
payments, winners transmit, the next slot's arrivals land (fixing this
slot's overflow loss), and learning users fold the outcome back into their
models.  A full per-slot metrics log and trailing-window summaries come
out the other end.

Randomness is split from one master seed into independent streams per
channel, per user-channel quality chain, per user arrival process, per
user policy, and one stream for auction tie-breaking, so exchanging one
user's policy never perturbs anyone else's environment draws.
"""

from __future__ import annotations

import dataclasses
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .auction import BidMatrix, run_auction
from .env import (
    ChannelModel,
    RateTable,
    SUState,
    SuKernels,
    TrafficModel,
    ValidationError,
    channel_transition_matrix,
    stationary_distribution,
)
from .learning import BestResponseLearner
from .strategies import (
    POLICY_NAMES,
    FixedPolicy,
    LearningPolicy,
    MyopicPolicy,
    Observation,
    SourceAwarePolicy,
    default_fixed_bid,
)

__all__ = [
    "SuConfig",
    "ScenarioConfig",
    "RunLog",
    "SummaryStats",
    "Simulation",
    "run_scenario",
    "summarize",
    "builtin_scenarios",
]

DEFAULT_SLOT_LEN = 0.01
DEFAULT_MU = 250.0  # 2 Mbit/s of 1000-byte packets
DEFAULT_CAPACITY = 10
DEFAULT_SNR_LEVELS = (18.0, 23.0, 26.0)
DEFAULT_ENTRY_DIST = (0.4, 0.4, 0.2)
DEFAULT_COND_ROW = (0.4, 0.4, 0.2)
# whole packets served per slot at each quality; keeps the default two-user
# system near unit load, where the policy comparisons are informative
DEFAULT_PACKETS_PER_SLOT = (2.0, 4.0, 5.0)
DEFAULT_ALPHA = 0.8
DEFAULT_CLASSES = 5
DEFAULT_WINDOW = 1000
DEFAULT_HORIZON = 20000


@dataclass
class SuConfig:
    """One user's source model, link model, buffer, and bidding policy."""

    policy: str
    traffic: TrafficModel
    rates: RateTable
    capacity: int = DEFAULT_CAPACITY
    alpha: float = DEFAULT_ALPHA
    fixed_bid: float | None = None
    n_classes: int = DEFAULT_CLASSES
    gamma_max: float | None = None
    epsilon: float = 0.0


@dataclass
class ScenarioConfig:
    """Complete description of one experiment."""

    name: str
    channels: list[ChannelModel]
    sus: list[SuConfig]
    slot_len: float = DEFAULT_SLOT_LEN
    horizon: int = DEFAULT_HORIZON
    window: int = DEFAULT_WINDOW
    seed: int = 0

    def problems(self) -> list[str]:
        problems: list[str] = []
        if not self.channels:
            problems.append("at least one channel is required")
        if not self.sus:
            problems.append("at least one user is required")
        if self.slot_len <= 0:
            problems.append(f"slot_len must be positive, got {self.slot_len!r}")
        if self.window < 1:
            problems.append(f"window must be at least 1, got {self.window}")
        if self.horizon < self.window:
            problems.append(
                f"horizon ({self.horizon}) must cover the window ({self.window})"
            )
        if not isinstance(self.seed, int):
            problems.append(f"seed must be an integer, got {self.seed!r}")
        ks = {ch.n_levels for ch in self.channels}
        if len(ks) > 1:
            problems.append(f"channels disagree on the number of levels: {sorted(ks)}")
        k = self.channels[0].n_levels if self.channels else 0
        for i, su in enumerate(self.sus):
            tag = f"su {i + 1}"
            if su.policy not in POLICY_NAMES:
                problems.append(
                    f"{tag}: unknown policy {su.policy!r}; choose one of {', '.join(POLICY_NAMES)}"
                )
            if not 0.0 <= su.alpha < 1.0:
                problems.append(f"{tag}: discount must be in [0, 1), got {su.alpha!r}")
            if su.capacity < 1:
                problems.append(f"{tag}: buffer capacity must be at least 1")
            if su.rates.n_levels != k:
                problems.append(
                    f"{tag}: rate table covers {su.rates.n_levels} levels, channels have {k}"
                )
            if abs(su.traffic.slot_len - self.slot_len) > 1e-15:
                problems.append(
                    f"{tag}: traffic slot_len {su.traffic.slot_len!r} differs from scenario "
                    f"slot_len {self.slot_len!r}"
                )
            if su.fixed_bid is not None and su.fixed_bid < 0:
                problems.append(f"{tag}: fixed_bid must be nonnegative")
            if su.n_classes < 1:
                problems.append(f"{tag}: n_classes must be at least 1")
            if su.gamma_max is not None and su.gamma_max <= 0:
                problems.append(f"{tag}: gamma_max must be positive")
            if not 0.0 <= su.epsilon <= 1.0:
                problems.append(f"{tag}: epsilon must be in [0, 1]")
        return problems

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValidationError(problems)


class RunLog:
    """Per-slot, per-user metrics, one row per (slot, user).

    Columns (log schema version 1): slot, su, buffer (slot-start fill),
    arrivals (landing at the end of the slot), served, lost, tax, cost,
    assigned (0 = none, else 1-based channel), avail (bitmask string,
    channel 1 first), then one bid column per channel.
    """

    SCHEMA_VERSION = 1

    def __init__(self, n_channels: int, n_users: int):
        self.n_channels = n_channels
        self.n_users = n_users
        self.rows: list[tuple] = []

    @property
    def n_slots(self) -> int:
        return len(self.rows) // self.n_users

    def header(self) -> list[str]:
        fixed = [
            "slot", "su", "buffer", "arrivals", "served", "lost",
            "tax", "cost", "assigned", "avail",
        ]
        return fixed + [f"bid_{j + 1}" for j in range(self.n_channels)]

    def write_csv(self, fh) -> None:
        fh.write(",".join(self.header()) + "\n")
        for row in self.rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
            fh.write("\n")


@dataclass(frozen=True)
class SummaryStats:
    """Trailing-window averages for one user.

    ``avg_tax`` is the mean payment magnitude per slot, so
    avg_cost == lost/window + avg_tax holds exactly up to float rounding.
    """

    su: int
    window: int
    arrivals: int
    lost: int
    loss_rate_pct: float
    avg_tax: float
    avg_cost: float
    avg_reward: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(log: RunLog, window: int) -> list[SummaryStats]:
    """Averages over the trailing ``window`` slots of a run log."""
    n_slots = log.n_slots
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")
    if window > n_slots:
        raise ValueError(f"window ({window}) exceeds the {n_slots} recorded slots")
    m = log.n_users
    arrivals = [0] * m
    lost = [0] * m
    tax_abs = [0.0] * m
    cost = [0.0] * m
    for row in log.rows[(n_slots - window) * m:]:
        i = row[1]
        arrivals[i] += row[3]
        lost[i] += row[5]
        tax_abs[i] -= row[6]
        cost[i] += row[7]
    out = []
    for i in range(m):
        out.append(
            SummaryStats(
                su=i,
                window=window,
                arrivals=arrivals[i],
                lost=lost[i],
                loss_rate_pct=100.0 * lost[i] / arrivals[i] if arrivals[i] else 0.0,
                avg_tax=tax_abs[i] / window,
                avg_cost=cost[i] / window,
                avg_reward=-cost[i] / window,
            )
        )
    return out


def _draw(cum: list[float], u: float) -> int:
    i = bisect_right(cum, u)
    return i if i < len(cum) else len(cum) - 1


def _cumulative(weights) -> list[float]:
    out = []
    acc = 0.0
    for w in weights:
        acc += w
        out.append(acc)
    return out


class Simulation:
    """Mutable world state for one seeded run of one scenario."""

    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        n = len(config.channels)
        m = len(config.sus)
        self.n_channels = n
        self.n_users = m
        horizon = config.horizon

        # one child stream per randomness source, in a fixed documented order:
        # channel occupancy (N), user-channel quality (M*N), arrivals (M),
        # policies (M), auction tie-breaking (1)
        children = np.random.SeedSequence(config.seed).spawn(n + m * n + m + m + 1)
        self._avail_u: list[list[float]] = []
        self._gain: list[float] = []
        self._stay: list[float] = []
        self._entry_cum: list[list[float]] = []
        self._cond_cum: list[list[list[float]]] = []
        self._stat_avail: list[float] = []
        self._stat_cond_cum: list[list[float]] = []
        for j, ch in enumerate(config.channels):
            gen = np.random.default_rng(children[j])
            self._avail_u.append(gen.random(horizon + 1).tolist())
            self._gain.append(ch.p_nf)
            self._stay.append(1.0 - ch.p_fn)
            self._entry_cum.append(_cumulative(ch.entry_dist))
            self._cond_cum.append([_cumulative(row) for row in ch.cond_trans])
            pi = stationary_distribution(channel_transition_matrix(ch))
            avail_mass = float(pi[1:].sum())
            self._stat_avail.append(avail_mass)
            if avail_mass > 0:
                self._stat_cond_cum.append(_cumulative(pi[1:] / avail_mass))
            else:
                self._stat_cond_cum.append(_cumulative(ch.entry_dist))

        self._cond_u: list[list[list[float]]] = []
        for i in range(m):
            per_su = []
            for j in range(n):
                gen = np.random.default_rng(children[n + i * n + j])
                per_su.append(gen.random(horizon + 1).tolist())
            self._cond_u.append(per_su)

        self._arrivals: list[list[int]] = []
        for i, su in enumerate(config.sus):
            gen = np.random.default_rng(children[n + m * n + i])
            self._arrivals.append(
                gen.poisson(su.traffic.mean_arrivals, horizon).astype(int).tolist()
            )

        self.kernels = [
            SuKernels.build(config.channels, su.traffic, su.rates, su.capacity)
            for su in config.sus
        ]
        self.policies = []
        for i, su in enumerate(config.sus):
            rng = np.random.default_rng(children[n + m * n + m + i])
            self.policies.append(self._build_policy(su, self.kernels[i], rng))
        self._tie = np.random.default_rng(children[-1])

        self._quanta = [list(k.quanta) for k in self.kernels]
        self._caps = [su.capacity for su in config.sus]

        # initial conditions: empty buffers, channels at their stationary law
        self.buffers = [0] * m
        self.avail = [self._avail_u[j][0] < self._stat_avail[j] for j in range(n)]
        self.levels = []
        for i in range(m):
            row = []
            for j in range(n):
                if self.avail[j]:
                    row.append(1 + _draw(self._stat_cond_cum[j], self._cond_u[i][j][0]))
                else:
                    row.append(0)
            self.levels.append(row)
        self._last: list[tuple] = [(None, None, None)] * m
        self.t = 0
        self.log = RunLog(n, m)

    def _build_policy(self, su: SuConfig, kernels: SuKernels, rng: np.random.Generator):
        if su.policy == "fixed":
            amount = su.fixed_bid
            if amount is None:
                amount = default_fixed_bid(kernels.loss_table)
            return FixedPolicy([amount] * self.n_channels)
        if su.policy == "source_aware":
            return SourceAwarePolicy(kernels.loss_table)
        if su.policy == "myopic":
            return MyopicPolicy(kernels.loss_table)
        learner = BestResponseLearner(
            kernels, alpha=su.alpha, n_classes=su.n_classes, gamma_max=su.gamma_max
        )
        return LearningPolicy(learner, epsilon=su.epsilon, rng=rng)

    def step(self) -> list[tuple]:
        """Advance one slot; returns the per-user rows just logged."""
        t = self.t
        if t >= self.config.horizon:
            raise RuntimeError("stepped past the configured horizon")
        tu = t + 1  # index 0 of every uniform stream seeds the initial state
        n = self.n_channels
        m = self.n_users

        avail = self.avail
        new_avail = [
            self._avail_u[j][tu] < (self._stay[j] if avail[j] else self._gain[j])
            for j in range(n)
        ]
        for i in range(m):
            lev = self.levels[i]
            cond_u = self._cond_u[i]
            for j in range(n):
                if new_avail[j]:
                    u = cond_u[j][tu]
                    if lev[j] >= 1:
                        lev[j] = 1 + _draw(self._cond_cum[j][lev[j] - 1], u)
                    else:
                        lev[j] = 1 + _draw(self._entry_cum[j], u)
                else:
                    lev[j] = 0
        self.avail = new_avail
        avail_t = tuple(new_avail)
        avail_str = "".join("1" if a else "0" for a in new_avail)

        observations = []
        bid_rows = []
        for i in range(m):
            obs = Observation(
                SUState(self.buffers[i], tuple(self.levels[i])), avail_t, *self._last[i]
            )
            observations.append(obs)
            bid_rows.append(self.policies[i].bids(obs))

        outcome = run_auction(BidMatrix(bid_rows, avail_t), tie_rng=self._tie)
        assigned = outcome.allocation.assigned

        slot_rows = []
        for i in range(m):
            v = self.buffers[i]
            ch = assigned[i]
            quantum = self._quanta[i][self.levels[i][ch - 1]] if ch else 0
            served = quantum if quantum < v else v
            rem = v - served
            a = self._arrivals[i][t]
            over = rem + a - self._caps[i]
            if over > 0:
                lost = over
                v_next = self._caps[i]
            else:
                lost = 0
                v_next = rem + a
            tax = outcome.taxes[i]
            cost = lost - tax
            bids = bid_rows[i]
            self.policies[i].record_outcome(observations[i], bids, ch, tax, -cost)
            self._last[i] = (tuple(bids), ch, tax)
            row = (t, i, v, a, served, lost, tax, cost, ch, avail_str, *bids)
            self.log.rows.append(row)
            slot_rows.append(row)
            self.buffers[i] = v_next
        self.t += 1
        return slot_rows

    def run(self) -> RunLog:
        step = self.step
        for _ in range(self.config.horizon):
            step()
        return self.log


def run_scenario(
    config: ScenarioConfig,
    *,
    horizon: int | None = None,
    window: int | None = None,
    seed: int | None = None,
) -> tuple[RunLog, list[SummaryStats]]:
    """Run one seeded scenario and summarise its trailing window."""
    overrides = {}
    if horizon is not None:
        overrides["horizon"] = horizon
    if window is not None:
        overrides["window"] = window
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
    sim = Simulation(config)
    log = sim.run()
    return log, summarize(log, config.window)


def _default_channel(p_nf: float, p_fn: float) -> ChannelModel:
    k = len(DEFAULT_SNR_LEVELS)
    return ChannelModel(
        p_nf=p_nf,
        p_fn=p_fn,
        snr_levels=DEFAULT_SNR_LEVELS,
        entry_dist=DEFAULT_ENTRY_DIST,
        cond_trans=(DEFAULT_COND_ROW,) * k,
    )


def _default_su(policy: str) -> SuConfig:
    return SuConfig(
        policy=policy,
        traffic=TrafficModel(DEFAULT_MU, DEFAULT_SLOT_LEN),
        rates=RateTable.per_slot(DEFAULT_PACKETS_PER_SLOT, DEFAULT_SLOT_LEN),
    )


def builtin_scenarios() -> dict[str, ScenarioConfig]:
    """Catalogue of the shipped experiments.

    two_su_s1..s5: two users on two half-free channels, running through the
    five policy matchups (fixed/fixed, fixed/myopic, source-aware/myopic,
    myopic/myopic, learning/myopic).

    five_su_s1..s2: five users on three mostly-free channels; all myopic,
    then user 5 switching to the learner.

    scarcity_s1..s3: two users, two channels whose availability runs from
    abundant to scarce; the learning/myopic matchup, with an all-myopic
    twin under the _baseline suffix.
    """
    out: dict[str, ScenarioConfig] = {}
    matchups = [
        ("fixed", "fixed"),
        ("fixed", "myopic"),
        ("source_aware", "myopic"),
        ("myopic", "myopic"),
        ("learning", "myopic"),
    ]
    for k, (p1, p2) in enumerate(matchups, start=1):
        name = f"two_su_s{k}"
        out[name] = ScenarioConfig(
            name=name,
            channels=[_default_channel(0.5, 0.5) for _ in range(2)],
            sus=[_default_su(p1), _default_su(p2)],
        )
    for k, policies in enumerate((["myopic"] * 5, ["myopic"] * 4 + ["learning"]), start=1):
        name = f"five_su_s{k}"
        out[name] = ScenarioConfig(
            name=name,
            channels=[_default_channel(0.7, 0.3) for _ in range(3)],
            sus=[_default_su(p) for p in policies],
        )
    scarcity = [(0.8, 0.2), (0.5, 0.5), (0.4, 0.6)]
    for k, (p_nf, p_fn) in enumerate(scarcity, start=1):
        for suffix, pair in (("", ("learning", "myopic")), ("_baseline", ("myopic", "myopic"))):
            name = f"scarcity_s{k}{suffix}"
            out[name] = ScenarioConfig(
                name=name,
                channels=[_default_channel(p_nf, p_fn) for _ in range(2)],
                sus=[_default_su(pair[0]), _default_su(pair[1])],
            )
    return out
