"""Per-slot channel assignment mechanism.

The moderator collects one bid per user per channel, computes an exact
welfare-maximizing assignment of the free channels (at most one channel per
user, every free channel granted whenever enough users bid), and charges
each winner the externality it imposes on the rest of the field.  Payments
are never positive.

Small instances are solved by exhaustive enumeration with deterministic
lexicographic tie-breaking; larger ones fall back to an exact rectangular
assignment solver.  An independent brute-force oracle backs the test suite.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .env import ValidationError

log = logging.getLogger(__name__)

# above this many injective maps the rectangular solver takes over
_ENUM_CAP = 2000
_TIE_REL = 1e-12
# slack for internal sanity checks only; reported taxes are exact
_CHECK_TOL = 1e-9

__all__ = [
    "BidMatrix",
    "Allocation",
    "AuctionOutcome",
    "MechanismError",
    "InstanceSizeError",
    "solve_assignment",
    "compute_taxes",
    "run_auction",
    "brute_force_assignment",
]


class MechanismError(RuntimeError):
    """An auction outcome violated a mechanism invariant."""


class InstanceSizeError(ValueError):
    """Instance exceeds the exhaustive-search bounds."""


@dataclass
class BidMatrix:
    """Submitted bids: one row per user, one column per channel.

    Negative entries are clamped to zero (with a warning); bids on occupied
    channels are kept in the matrix but ignored by the mechanism.
    """

    values: list[list[float]]
    availability: tuple[bool, ...]

    def __post_init__(self):
        rows = [[float(b) for b in row] for row in self.values]
        n = len(self.availability)
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ValidationError(
                    [f"bid row {i} has {len(row)} entries for {n} channels"]
                )
            for j, b in enumerate(row):
                if b < 0.0:
                    log.warning("negative bid %r from user %d on channel %d clamped to 0", b, i, j)
                    row[j] = 0.0
        self.values = rows
        self.availability = tuple(bool(a) for a in self.availability)

    @property
    def n_users(self) -> int:
        return len(self.values)

    @property
    def n_channels(self) -> int:
        return len(self.availability)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class Allocation:
    """Channel grants: per user, 0 for none or the 1-based channel index."""

    assigned: tuple[int, ...]
    n_channels: int

    def as_matrix(self) -> np.ndarray:
        out = np.zeros((len(self.assigned), self.n_channels), dtype=int)
        for i, ch in enumerate(self.assigned):
            if ch:
                out[i, ch - 1] = 1
        return out

    def winners(self) -> list[tuple[int, int]]:
        """(channel, user) pairs in ascending channel order, 0-based."""
        return sorted((ch - 1, i) for i, ch in enumerate(self.assigned) if ch)


@dataclass(frozen=True)
class AuctionOutcome:
    allocation: Allocation
    taxes: tuple[float, ...]
    welfare: float


def _available_indices(availability: Sequence[bool]) -> list[int]:
    return [j for j, a in enumerate(availability) if a]


def _perm_to_vector(perm: Sequence[int], avail_idx: Sequence[int], m: int) -> tuple[int, ...]:
    vec = [0] * m
    for k, su in enumerate(perm):
        vec[su] = avail_idx[k] + 1
    return tuple(vec)


def _enum_best_strict(
    rows: list[list[float]], avail_idx: list[int], m: int
) -> list[tuple[int, ...]]:
    """All welfare-maximal full assignments as per-user vectors.

    Welfare sums accumulate in ascending channel order everywhere in this
    module so that value-equal assignments compare exactly equal in floats.
    """
    n = len(avail_idx)
    if n == 1:
        j = avail_idx[0]
        best = max(row[j] for row in rows)
        return [
            _perm_to_vector((i,), avail_idx, m)
            for i in range(m)
            if rows[i][j] == best
        ]
    best = -math.inf
    for perm in itertools.permutations(range(m), n):
        w = 0.0
        for k in range(n):
            w += rows[perm[k]][avail_idx[k]]
        if w > best:
            best = w
    tol = _TIE_REL * max(1.0, abs(best))
    out = []
    for perm in itertools.permutations(range(m), n):
        w = 0.0
        for k in range(n):
            w += rows[perm[k]][avail_idx[k]]
        if w >= best - tol:
            out.append(_perm_to_vector(perm, avail_idx, m))
    return out


def _enum_best_relaxed(
    rows: list[list[float]], avail_idx: list[int], m: int
) -> list[tuple[int, ...]]:
    """Optimal assignments when users may stay idle (fewer users than channels)."""
    complete: list[tuple[float, tuple[int, ...]]] = []

    def extend(i: int, used: frozenset[int], vec: tuple[int, ...], w: float):
        if i == m:
            complete.append((w, vec))
            return
        extend(i + 1, used, vec + (0,), w)
        for j in avail_idx:
            if j not in used:
                extend(i + 1, used | {j}, vec + (j + 1,), w + rows[i][j])

    extend(0, frozenset(), (), 0.0)
    best = max(w for w, _ in complete)
    tol = _TIE_REL * max(1.0, abs(best))
    return [vec for w, vec in complete if w >= best - tol]


def _lsa_welfare(arr: np.ndarray, su_idx: list[int], avail_idx: list[int]) -> float:
    """Exact best welfare via rectangular assignment; channel-order summation."""
    sub = arr[np.ix_(su_idx, avail_idx)]
    r, c = linear_sum_assignment(sub, maximize=True)
    total = 0.0
    for cc, rr in sorted(zip(c.tolist(), r.tolist())):
        total += float(sub[rr, cc])
    return total


def _max_welfare(
    rows: list[list[float]], arr: np.ndarray | None, su_idx: list[int], avail_idx: list[int]
) -> float:
    """Best achievable welfare assigning channels to the given users.

    Covers every channel when enough users exist; otherwise the best partial
    matching (bids are nonnegative, so partial optima equal relaxed optima).
    """
    n = len(avail_idx)
    m = len(su_idx)
    if n == 0 or m == 0:
        return 0.0
    if m == 1:
        return max(rows[su_idx[0]][j] for j in avail_idx)
    if m >= n and math.perm(m, n) <= _ENUM_CAP:
        best = -math.inf
        for perm in itertools.permutations(su_idx, n):
            w = 0.0
            for k in range(n):
                w += rows[perm[k]][avail_idx[k]]
            if w > best:
                best = w
        return best
    if arr is None:
        arr = np.asarray(rows, dtype=float)
    return _lsa_welfare(arr, su_idx, avail_idx)


def _scipy_solve(rows: list[list[float]], avail_idx: list[int], m: int) -> tuple[int, ...]:
    """Exact solution above the enumeration cap, canonicalised to the
    lexicographically smallest optimal assignment vector."""
    arr = np.asarray(rows, dtype=float)
    w_opt = _lsa_welfare(arr, list(range(m)), avail_idx)
    tol = _TIE_REL * max(1.0, abs(w_opt))
    remaining = list(avail_idx)
    vec: list[int] = []
    fixed = 0.0
    for i in range(m):
        rest = list(range(i + 1, m))
        chosen: int | None = None
        if len(rest) >= len(remaining):
            sub = _max_welfare(rows, arr, rest, remaining)
            if fixed + sub >= w_opt - tol:
                chosen = 0
        if chosen is None:
            for j in remaining:
                rem2 = [c for c in remaining if c != j]
                if len(rest) < len(rem2):
                    continue
                sub = _max_welfare(rows, arr, rest, rem2)
                if fixed + rows[i][j] + sub >= w_opt - tol:
                    chosen = j + 1
                    fixed += rows[i][j]
                    remaining = rem2
                    break
        if chosen is None:
            # no candidate certified within tolerance; fall back to the raw optimum
            sub = arr[:, avail_idx]
            r, c = linear_sum_assignment(sub, maximize=True)
            out = [0] * m
            for rr, cc in zip(r.tolist(), c.tolist()):
                out[rr] = avail_idx[cc] + 1
            return tuple(out)
        vec.append(chosen)
    return tuple(vec)


def solve_assignment(
    bids: BidMatrix, tie_rng: np.random.Generator | None = None
) -> Allocation:
    """Welfare-maximizing grant of every free channel, one per user.

    Ties are broken toward the lexicographically smallest assignment vector
    (idle sorting before channel 1); when ``tie_rng`` is supplied the winner
    is drawn uniformly from the tied optima instead, which keeps long
    symmetric matchups statistically symmetric.
    """
    m = bids.n_users
    avail_idx = _available_indices(bids.availability)
    n = len(avail_idx)
    if n == 0:
        return Allocation((0,) * m, bids.n_channels)
    if m < n:
        log.warning(
            "%d users for %d free channels; coverage constraint relaxed", m, n
        )
        if (n + 1) ** m > 50_000:
            vec = _scipy_solve_partial(bids.values, avail_idx, m)
            return Allocation(vec, bids.n_channels)
        ties = _enum_best_relaxed(bids.values, avail_idx, m)
    elif math.perm(m, n) <= _ENUM_CAP:
        ties = _enum_best_strict(bids.values, avail_idx, m)
    else:
        vec = _scipy_solve(bids.values, avail_idx, m)
        return Allocation(vec, bids.n_channels)
    ties.sort()
    if tie_rng is not None and len(ties) > 1:
        pick = ties[int(tie_rng.integers(len(ties)))]
    else:
        pick = ties[0]
    return Allocation(pick, bids.n_channels)


def _scipy_solve_partial(
    rows: list[list[float]], avail_idx: list[int], m: int
) -> tuple[int, ...]:
    arr = np.asarray(rows, dtype=float)
    sub = arr[:, avail_idx]
    r, c = linear_sum_assignment(sub, maximize=True)
    out = [0] * m
    for rr, cc in zip(r.tolist(), c.tolist()):
        out[rr] = avail_idx[cc] + 1
    return tuple(out)


def compute_taxes(bids: BidMatrix, allocation: Allocation) -> tuple[float, ...]:
    """Externality payment per user for an optimal allocation.

    A winner pays the difference between what the others could have earned
    without it and what they earn beside it.  Users without a grant pay
    nothing.  The result is never positive.
    """
    m = bids.n_users
    avail_idx = _available_indices(bids.availability)
    taxes = [0.0] * m
    if not avail_idx:
        return tuple(taxes)
    assigned_pairs = sorted(
        (ch - 1, i) for i, ch in enumerate(allocation.assigned) if ch
    )
    arr = None
    for i, ch in enumerate(allocation.assigned):
        if not ch:
            continue
        others_joint = 0.0
        for j, k in assigned_pairs:
            if k != i:
                others_joint += bids.values[k][j]
        su_idx = [k for k in range(m) if k != i]
        others_opt = _max_welfare(bids.values, arr, su_idx, avail_idx)
        # the others-only optimum can never fall below their share of the
        # joint optimum; min() guards summation-order noise
        taxes[i] = min(0.0, others_joint - others_opt)
    return tuple(taxes)


def run_auction(
    bids: BidMatrix, tie_rng: np.random.Generator | None = None
) -> AuctionOutcome:
    """One full auction round: assignment, payments, welfare."""
    allocation = solve_assignment(bids, tie_rng=tie_rng)
    taxes = compute_taxes(bids, allocation)
    welfare = 0.0
    for j, i in sorted((ch - 1, i) for i, ch in enumerate(allocation.assigned) if ch):
        welfare += bids.values[i][j]
    _enforce_invariants(bids, allocation, taxes)
    return AuctionOutcome(allocation, taxes, welfare)


def _enforce_invariants(
    bids: BidMatrix, allocation: Allocation, taxes: tuple[float, ...]
) -> None:
    seen: set[int] = set()
    for i, ch in enumerate(allocation.assigned):
        if ch:
            if ch in seen:
                raise MechanismError(f"channel {ch} granted twice")
            seen.add(ch)
            if not bids.availability[ch - 1]:
                raise MechanismError(f"occupied channel {ch} granted to user {i}")
            if -taxes[i] > bids.values[i][ch - 1] + _CHECK_TOL:
                raise MechanismError(
                    f"user {i} pays {-taxes[i]!r} above its bid {bids.values[i][ch - 1]!r}"
                )
        else:
            if taxes[i] != 0.0:
                raise MechanismError(f"idle user {i} pays {taxes[i]!r}")
        if taxes[i] > 0.0:
            raise MechanismError(f"positive tax {taxes[i]!r} for user {i}")


def brute_force_assignment(bids: BidMatrix) -> Allocation:
    """Exhaustive oracle for the assignment step.

    Enumerates every injective map of free channels onto users (or users onto
    channels when users are scarce) and returns a welfare-maximal allocation.
    Only the welfare is pinned down; tie choices may differ from the solver.
    """
    m = bids.n_users
    avail_idx = _available_indices(bids.availability)
    n = len(avail_idx)
    if n > 6 or m > 8:
        raise InstanceSizeError(
            f"brute force handles at most 8 users x 6 free channels, got {m} x {n}"
        )
    if n == 0:
        return Allocation((0,) * m, bids.n_channels)
    arr = bids.as_array()
    if m >= n:
        perms = np.array(list(itertools.permutations(range(m), n)))
        cols = np.array(avail_idx)
        w = arr[perms, cols].sum(axis=1)
        best = float(w.max())
        tol = _TIE_REL * max(1.0, abs(best))
        vectors = [
            _perm_to_vector(perm, avail_idx, m)
            for perm in perms[w >= best - tol].tolist()
        ]
    else:
        # nonnegative bids: some optimum assigns every user, so scanning
        # injective user->channel maps suffices for the optimal welfare
        perms = np.array(list(itertools.permutations(avail_idx, m)))
        w = arr[np.arange(m), perms].sum(axis=1)
        best = float(w.max())
        tol = _TIE_REL * max(1.0, abs(best))
        vectors = [
            tuple(j + 1 for j in perm) for perm in perms[w >= best - tol].tolist()
        ]
    return Allocation(min(vectors), bids.n_channels)
