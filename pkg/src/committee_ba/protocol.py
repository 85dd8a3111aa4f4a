"""Per-node state machine of the committee-based agreement protocol.

Each phase is two communication rounds. Round 1 broadcasts (val, decided)
and a node adopts b when at least n - t messages carry b. Round 2 broadcasts
again; n - t decided messages for b finish the node, t + 1 make it adopt b,
and otherwise it takes the phase committee's coin.

All transitions are pure: they take a NodeState and return a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .common_coin import CoinContribution, aggregate_coin, sample_contribution

FINISH_MODES = ("phase", "round")


def min_alpha(gamma: float) -> int:
    """Smallest integer alpha with alpha - 4*sqrt(alpha) >= gamma."""
    # alpha - 4 sqrt(alpha) - gamma >= 0  <=>  sqrt(alpha) >= 2 + sqrt(4 + gamma)
    alpha = math.ceil((2 + math.sqrt(4 + gamma)) ** 2 - 1e-9)
    while alpha - 4 * math.sqrt(alpha) < gamma:
        alpha += 1
    while alpha > 1 and (alpha - 1) - 4 * math.sqrt(alpha - 1) >= gamma:
        alpha -= 1
    return alpha


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol constants.

    ``finish_broadcast`` controls what a finished node does in the phase
    after it finished: ``"phase"`` (default) keeps broadcasting its decided
    value through both rounds of that phase, ``"round"`` stops after the
    round-1 broadcast, after which nodes that have not finished can be left
    short of the n - t decided messages they need and fall back to the coin.
    """

    n: int
    t: int
    alpha: float = 18.0
    gamma: float = 1.0
    log_base: float = 2.0
    las_vegas: bool = False
    finish_broadcast: str = "phase"

    def __post_init__(self):
        if self.n < 1 or self.t < 0:
            raise ValueError(f"invalid n={self.n}, t={self.t}")
        if self.n < 3 * self.t + 1:
            raise ValueError(f"resilience violated: n={self.n} < 3t+1={3 * self.t + 1}")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.log_base <= 1:
            raise ValueError("log_base must be > 1")
        if self.finish_broadcast not in FINISH_MODES:
            raise ValueError(f"finish_broadcast must be one of {FINISH_MODES}")

    @property
    def whp(self) -> bool:
        """Whether alpha is large enough for the high-probability guarantee."""
        return self.alpha - 4 * math.sqrt(self.alpha) >= self.gamma

    def log_n(self) -> float:
        return math.log(self.n, self.log_base) if self.n > 1 else 0.0


@dataclass(frozen=True)
class CommitteeLayout:
    """c committees over IDs 1..n; committee k holds IDs with ceil(ID/s) = k.

    The last committee also absorbs the ragged tail ceil(ID/s) > c.
    """

    n: int
    c: int
    s: int
    terms: Tuple[float, float] = (math.inf, math.inf)

    def __post_init__(self):
        if self.c < 1 or self.s < 1:
            raise ValueError("c and s must be >= 1")
        if self.c * self.s > self.n:
            raise ValueError("committees overrun the ID space")

    def assignment(self, node_id: int) -> int:
        return min(-(-node_id // self.s), self.c)

    def members(self, committee: int) -> range:
        lo = (committee - 1) * self.s + 1
        hi = self.n if committee == self.c else committee * self.s
        return range(lo, hi + 1)

    def committee_for(self, phase: int) -> int:
        """Committee of a (possibly wrapped) 1-based phase number."""
        return (phase - 1) % self.c + 1

    @property
    def regime(self) -> str:
        """Which term of the min() set c: 'quadratic' or 'linear'."""
        return "quadratic" if self.terms[0] <= self.terms[1] else "linear"


def committee_count(params: ProtocolParams) -> CommitteeLayout:
    """c = min(alpha*ceil(t^2/n)*log n, 3*alpha*t/log n), clamped to [1, n]."""
    n, t = params.n, params.t
    if t == 0:
        return CommitteeLayout(n=n, c=1, s=n, terms=(0.0, 0.0))
    log_n = params.log_n()
    term1 = params.alpha * math.ceil(t * t / n) * log_n
    term2 = 3 * params.alpha * t / log_n if log_n > 0 else math.inf
    # tolerate float noise like 172.80000000000001
    c = math.ceil(round(min(term1, term2), 9))
    c = max(1, min(c, n))
    return CommitteeLayout(n=n, c=c, s=n // c, terms=(term1, term2))


@dataclass(frozen=True)
class NodeState:
    """One honest node. ``phase`` is the committee index (wraps in Las Vegas
    mode); ``lap`` counts wraps. ``finished_at`` is the global phase in which
    the finish condition fired."""

    id: int
    val: int
    decided: bool = False
    finish: bool = False
    phase: int = 1
    lap: int = 0
    output: Optional[int] = None
    finished_at: Optional[int] = None

    @property
    def terminated(self) -> bool:
        return self.output is not None

    def global_phase(self, c: int) -> int:
        return self.lap * c + self.phase

    @property
    def lingering(self) -> bool:
        """Finished in an earlier phase; only re-broadcasts from here on."""
        return self.finish and not self.terminated


def initial_state(node_id: int, bit: int) -> NodeState:
    if bit not in (0, 1):
        raise ValueError("input must be a bit")
    return NodeState(id=node_id, val=bit)


@dataclass(frozen=True)
class PhaseMessage:
    phase: int
    round: int
    val: int
    decided: bool

    def __post_init__(self):
        if self.round not in (1, 2):
            raise ValueError("round must be 1 or 2")
        if self.val not in (0, 1):
            raise ValueError("val must be a bit")

    def encoded_bits(self, c: int, with_coin: bool = True) -> int:
        """Wire size: phase index, val, decided, and 2 bits for an optional
        piggybacked coin sign. The round is implied by the synchronous clock."""
        phase_bits = (self.phase - 1).bit_length()
        if phase_bits > max_phase_bits(c):
            raise ValueError(f"phase {self.phase} does not fit in {max_phase_bits(c)} bits")
        return max_phase_bits(c) + 2 + (2 if with_coin else 0)


def max_phase_bits(c: int) -> int:
    return (c - 1).bit_length()


def congest_bound(c: int) -> int:
    return max_phase_bits(c) + 4


@dataclass(frozen=True)
class Tally:
    """What a node learned from one round. ``vals[b]`` counts messages
    carrying b; ``decided_vals[b]`` counts those carrying (b, decided=True)."""

    vals: Tuple[int, int] = (0, 0)
    decided_vals: Tuple[int, int] = (0, 0)


def tally_messages(
    msgs: Iterable[Tuple[int, PhaseMessage]], phase: int, round_: int
) -> Tally:
    """Count well-formed messages for (phase, round). A sender appearing
    twice is dropped entirely; wrong phase/round counts as silence."""
    by_sender = {}
    dupes = set()
    for sender, m in msgs:
        if m is None or m.phase != phase or m.round != round_:
            continue
        if sender in by_sender:
            dupes.add(sender)
        by_sender[sender] = m
    vals = [0, 0]
    dvals = [0, 0]
    for sender, m in by_sender.items():
        if sender in dupes:
            continue
        vals[m.val] += 1
        if m.decided:
            dvals[m.val] += 1
    return Tally(vals=tuple(vals), decided_vals=tuple(dvals))


def round1_send(state: NodeState, params: ProtocolParams) -> Tuple[PhaseMessage, NodeState]:
    """Broadcast (phase, 1, val, decided). A node that finished in an earlier
    phase terminates right after this broadcast in ``"round"`` mode."""
    if state.terminated:
        raise ValueError(f"node {state.id} has terminated")
    msg = PhaseMessage(state.phase, 1, state.val, state.decided)
    if state.finish and params.finish_broadcast == "round":
        state = replace(state, output=state.val)
    return msg, state


def round2_send(state: NodeState, params: ProtocolParams) -> Tuple[PhaseMessage, NodeState]:
    if state.terminated:
        raise ValueError(f"node {state.id} has terminated")
    msg = PhaseMessage(state.phase, 2, state.val, state.decided)
    if state.lingering:
        state = replace(state, output=state.val)
    return msg, state


def coin_round_send(
    state: NodeState, layout: CommitteeLayout, rng: np.random.Generator
) -> Optional[CoinContribution]:
    if layout.assignment(state.id) != state.phase:
        return None
    return CoinContribution(state.id, sample_contribution(rng))


def apply_round1(state: NodeState, tally: Tally, params: ProtocolParams) -> NodeState:
    quorum = params.n - params.t
    for b in (0, 1):
        if tally.vals[b] >= quorum:
            if state.val == b and state.decided:
                return state
            return replace(state, val=b, decided=True)
    return replace(state, decided=False) if state.decided else state


def round1_receive(
    state: NodeState, msgs: Sequence[Tuple[int, PhaseMessage]], params: ProtocolParams
) -> NodeState:
    return apply_round1(state, tally_messages(msgs, state.phase, 1), params)


def round2_case(tally: Tally, params: ProtocolParams) -> Tuple[int, Optional[int]]:
    """Classify a round-2 tally: (1, b) finish, (2, b) adopt, (3, None) coin.

    If both bits clear t + 1 (only possible with equivocating senders) the
    larger count wins and a tie goes to 1.
    """
    n, t = params.n, params.t
    d0, d1 = tally.decided_vals
    for b, k in ((0, d0), (1, d1)):
        if k >= n - t:
            return 1, b
    if d0 >= t + 1 and d1 >= t + 1:
        return 2, 0 if d0 > d1 else 1
    for b, k in ((0, d0), (1, d1)):
        if k >= t + 1:
            return 2, b
    return 3, None


def round2_conflict(tally: Tally, params: ProtocolParams) -> bool:
    """Both bits reach t + 1 decided messages."""
    return min(tally.decided_vals) >= params.t + 1


def apply_round2(
    state: NodeState, tally: Tally, coin: int, params: ProtocolParams, global_phase: int
) -> NodeState:
    """``coin`` is the committee coin as this node sees it; used only when
    neither decided-threshold is met."""
    case, b = round2_case(tally, params)
    if case == 1:
        return replace(state, val=b, decided=True, finish=True, finished_at=global_phase)
    if case == 2:
        if state.val == b and state.decided:
            return state
        return replace(state, val=b, decided=True)
    if state.val == coin and not state.decided:
        return state
    return replace(state, val=coin, decided=False)


def round2_receive(
    state: NodeState,
    msgs: Sequence[Tuple[int, PhaseMessage]],
    layout: CommitteeLayout,
    coin_msgs: Iterable[CoinContribution],
    params: ProtocolParams,
) -> NodeState:
    tally = tally_messages(msgs, state.phase, 2)
    coin = aggregate_coin(coin_msgs, layout.members(state.phase))
    return apply_round2(state, tally, coin, params, state.global_phase(layout.c))


def advance_phase(state: NodeState, layout: CommitteeLayout, las_vegas: bool) -> NodeState:
    if state.terminated:
        return state
    nxt = state.phase + 1
    if nxt <= layout.c:
        return replace(state, phase=nxt)
    if las_vegas:
        return replace(state, phase=1, lap=state.lap + 1)
    return replace(state, output=state.val)
