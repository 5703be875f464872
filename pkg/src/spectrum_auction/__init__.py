"""Deterministic multi-agent simulator of repeated spectrum auctions.

Secondary users with Markov channels, Poisson traffic and finite buffers
bid each slot for the free channels; a central moderator assigns them
exactly and charges externality payments.  Policies range from constant
bidding to model-based best-response learning.
"""

from .auction import (
    Allocation,
    AuctionOutcome,
    BidMatrix,
    brute_force_assignment,
    compute_taxes,
    run_auction,
    solve_assignment,
)
from .env import (
    ChannelModel,
    DimensionError,
    RateTable,
    SUState,
    SuKernels,
    TrafficModel,
    ValidationError,
)
from .learning import BestResponseLearner
from .sim import (
    RunLog,
    ScenarioConfig,
    Simulation,
    SuConfig,
    SummaryStats,
    builtin_scenarios,
    run_scenario,
    summarize,
)
from .strategies import (
    BiddingPolicy,
    FixedPolicy,
    LearningPolicy,
    MyopicPolicy,
    Observation,
    SourceAwarePolicy,
)

__version__ = "0.1.0"
