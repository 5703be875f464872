"""Shared oracles and builders for the test suite.

The oracles deliberately take the slow road: scipy pmfs, explicit double
sums over enumerated states, itertools products.  They never call the
vectorized paths they are used to check.
"""

import itertools

import numpy as np
from scipy import stats as sps

from spectrum_auction.env import (
    ChannelModel,
    RateTable,
    SUState,
    SuKernels,
    TrafficModel,
    served_remainder,
    state_transition_prob,
)


def oracle_expected_loss(v, capacity, level, rates, traffic):
    """Truncated mean overflow straight from the scipy pmf."""
    rem = served_remainder(v, level, rates, traffic.slot_len)
    d = capacity - rem
    a = np.arange(traffic.tail_cap + 1)
    pmf = sps.poisson.pmf(a, traffic.mean_arrivals)
    return float(np.sum(pmf * np.maximum(a - d, 0)))


def oracle_future_value(state, assigned, kernels, opp_dist, values_array):
    """Explicit double sum over every successor state and class."""
    total = 0.0
    b = kernels.capacity
    k = kernels.n_levels
    n = kernels.n_channels
    h_count = len(opp_dist)
    for v2 in range(b + 1):
        for levels2 in itertools.product(range(k + 1), repeat=n):
            p = state_transition_prob(
                state, assigned, SUState(v2, levels2),
                kernels.channel_matrices, b, kernels.rates, kernels.traffic,
            )
            if p == 0.0:
                continue
            pidx = kernels.profile_index(levels2)
            for h2 in range(1, h_count + 1):
                total += p * opp_dist[h2 - 1] * values_array[v2, pidx, h2 - 1]
    return total


def random_channel_model(rng, k):
    entry = rng.dirichlet(np.ones(k))
    cond = rng.dirichlet(np.ones(k), size=k)
    return ChannelModel(
        p_nf=float(rng.uniform(0.05, 0.95)),
        p_fn=float(rng.uniform(0.05, 0.95)),
        snr_levels=tuple(sorted(rng.uniform(0, 30, size=k).tolist())),
        entry_dist=tuple(entry.tolist()),
        cond_trans=tuple(tuple(row) for row in cond.tolist()),
    )


def random_kernels(rng, capacity=2, k=2, n=1, slot_len=0.01):
    channels = [random_channel_model(rng, k) for _ in range(n)]
    traffic = TrafficModel(float(rng.uniform(0, 300)), slot_len)
    quanta = np.sort(rng.integers(0, capacity + 2, size=k))
    rates = RateTable.per_slot(tuple(int(q) for q in quanta), slot_len)
    return SuKernels.build(channels, traffic, rates, capacity)
