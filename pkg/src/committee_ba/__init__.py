"""Committee-based randomized Byzantine agreement under an adaptive rushing
adversary: protocol state machine, common coin, adversaries and a
deterministic round simulator."""

from .common_coin import (
    CoinContribution,
    CoinGuarantee,
    CoinTrialSetup,
    aggregate_coin,
    estimate_coin_guarantee,
    exact_moment,
    pz_bound,
    sample_contribution,
)
from .protocol import CommitteeLayout, NodeState, PhaseMessage, ProtocolParams, committee_count, min_alpha
from .engine import TrialConfig, TrialResult, run_batch, run_trial
from .analysis import BatchSummary, reference_curves, summarize

__version__ = "0.1.0"

__all__ = [
    "BatchSummary",
    "CoinContribution",
    "CoinGuarantee",
    "CoinTrialSetup",
    "CommitteeLayout",
    "NodeState",
    "PhaseMessage",
    "ProtocolParams",
    "TrialConfig",
    "TrialResult",
    "aggregate_coin",
    "committee_count",
    "estimate_coin_guarantee",
    "exact_moment",
    "min_alpha",
    "pz_bound",
    "reference_curves",
    "run_batch",
    "run_trial",
    "sample_contribution",
    "summarize",
]
