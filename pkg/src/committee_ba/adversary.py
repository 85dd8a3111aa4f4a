"""Adaptive, full-information, rushing adversaries.

Each communication round the engine hands the strategy a RoundSnapshot with
every honest node's state and committed outgoing message (coin flips
included). The strategy answers with an AdversaryAction: nodes to corrupt
now, and what each corrupted node sends to each recipient. A corrupted node
without an entry in ``overrides`` is silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, Optional, Tuple

import numpy as np

from .common_coin import CoinContribution
from .protocol import CommitteeLayout, NodeState, PhaseMessage, ProtocolParams

SILENT = -1


class AdversaryContractError(RuntimeError):
    """A strategy asked for something the model does not allow."""


class ByzantineSend:
    """What one corrupted node sends this round, per recipient.

    Arrays are indexed by recipient ID (index 0 unused). ``val`` is -1 for
    silence; ``coin`` is 0 for no contribution.
    """

    __slots__ = ("val", "decided", "coin")

    def __init__(self, n: int):
        self.val = np.full(n + 1, SILENT, dtype=np.int8)
        self.decided = np.zeros(n + 1, dtype=bool)
        self.coin = np.zeros(n + 1, dtype=np.int8)

    @classmethod
    def broadcast(cls, n: int, val: int, decided: bool = False, coin: int = 0) -> "ByzantineSend":
        return cls(n).send(slice(1, None), val, decided, coin)

    @classmethod
    def from_messages(
        cls,
        n: int,
        phase: int,
        round_: int,
        messages: Mapping[int, Optional[PhaseMessage]],
        coins: Optional[Mapping[int, int]] = None,
    ) -> "ByzantineSend":
        """Build from explicit per-recipient messages. Messages for another
        phase or round are indistinguishable from silence and dropped."""
        out = cls(n)
        for r, m in messages.items():
            if m is None or m.phase != phase or m.round != round_:
                continue
            out.val[r] = m.val
            out.decided[r] = m.decided
        for r, sign in (coins or {}).items():
            if sign not in (-1, 0, 1):
                raise AdversaryContractError(f"coin value {sign} is not a sign")
            out.coin[r] = sign
        return out

    def send(self, recipients, val: int, decided: bool = False, coin: Optional[int] = None):
        self.val[recipients] = val
        self.decided[recipients] = decided
        if coin is not None:
            self.coin[recipients] = coin
        return self

    def contribute(self, recipients, sign: int):
        self.coin[recipients] = sign
        return self

    def message_to(self, recipient: int, phase: int, round_: int) -> Optional[PhaseMessage]:
        v = int(self.val[recipient])
        if v == SILENT:
            return None
        return PhaseMessage(phase, round_, v, bool(self.decided[recipient]))


@dataclass(frozen=True)
class AdversaryAction:
    new_corruptions: FrozenSet[int] = frozenset()
    overrides: Dict[int, ByzantineSend] = field(default_factory=dict)


@dataclass
class RoundSnapshot:
    """Everything visible to the adversary before it acts in a round.

    ``pending_*`` arrays are indexed by node ID and describe honest nodes'
    committed messages: ``pending_val`` is -1 where no message is pending
    (corrupted or terminated node), ``pending_coin`` is 0 where no coin
    contribution is pending.
    """

    phase: int
    global_phase: int
    round: int
    params: ProtocolParams
    layout: CommitteeLayout
    honest_states: Mapping[int, NodeState]
    pending_val: np.ndarray
    pending_decided: np.ndarray
    pending_coin: np.ndarray
    corrupted: FrozenSet[int]

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def budget_remaining(self) -> int:
        return self.params.t - len(self.corrupted)

    def pending_message(self, sender: int) -> Optional[PhaseMessage]:
        v = int(self.pending_val[sender])
        if v == SILENT:
            return None
        return PhaseMessage(self.phase, self.round, v, bool(self.pending_decided[sender]))

    def pending_contributions(self) -> Tuple[CoinContribution, ...]:
        ids = np.nonzero(self.pending_coin)[0]
        return tuple(CoinContribution(int(i), int(self.pending_coin[i])) for i in ids)

    def committee(self) -> range:
        return self.layout.members(self.phase)

    def honest_val_counts(self) -> Tuple[int, int]:
        pv = self.pending_val
        return int(np.sum(pv == 0)), int(np.sum(pv == 1))

    def honest_decided_counts(self) -> Tuple[int, int]:
        pv, pd = self.pending_val, self.pending_decided
        return int(np.sum((pv == 0) & pd)), int(np.sum((pv == 1) & pd))

    def live_honest(self) -> np.ndarray:
        return np.nonzero(self.pending_val != SILENT)[0]


class Strategy:
    """Base class; subclasses override ``act``. Parameters arrive as keyword
    arguments parsed from ``name:key=value,...``."""

    name = "null"
    param_names: Tuple[str, ...] = ()

    def __init__(self, **params):
        unknown = set(params) - set(self.param_names)
        if unknown:
            raise ValueError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        self.params = params

    def _int(self, key: str, default):
        v = self.params.get(key, default)
        return None if v is None else int(v)

    def act(self, snap: RoundSnapshot, rng: np.random.Generator) -> AdversaryAction:
        return AdversaryAction()

    def __repr__(self):
        args = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}:{args}" if args else self.name


class NullAdversary(Strategy):
    name = "null"


def _halves(n: int) -> Tuple[slice, slice]:
    return slice(1, n // 2 + 1), slice(n // 2 + 1, None)


def _cap(snap: RoundSnapshot, budget: Optional[int], spent: int) -> int:
    left = snap.budget_remaining
    if budget is not None:
        left = min(left, budget - spent)
    return max(left, 0)


class CrashAdversary(Strategy):
    """Crash faults only. In round 1 of every phase from ``start`` on, crash
    up to ``per_phase`` live honest nodes holding the honest majority value.
    With ``partial=1`` a crashing node's last message still reaches the
    lower half of the ID space."""

    name = "crash"
    param_names = ("per_phase", "budget", "start", "partial")

    def __init__(self, **params):
        super().__init__(**params)
        self.per_phase = self._int("per_phase", 1)
        self.budget = self._int("budget", None)
        self.start = self._int("start", 1)
        self.partial = bool(self._int("partial", 0))
        self.spent = 0

    def act(self, snap, rng):
        if snap.round != 1 or snap.global_phase < self.start:
            return AdversaryAction()
        k = min(self.per_phase, _cap(snap, self.budget, self.spent))
        if k <= 0:
            return AdversaryAction()
        zeros, ones = snap.honest_val_counts()
        majority = 1 if ones >= zeros else 0
        pool = np.nonzero(snap.pending_val == majority)[0]
        if len(pool) == 0:
            return AdversaryAction()
        victims = rng.choice(pool, size=min(k, len(pool)), replace=False)
        victims = frozenset(int(v) for v in victims)
        self.spent += len(victims)
        overrides = {}
        if self.partial:
            low, _ = _halves(snap.n)
            for v in victims:
                overrides[v] = ByzantineSend(snap.n).send(
                    low, int(snap.pending_val[v]), bool(snap.pending_decided[v])
                )
        return AdversaryAction(victims, overrides)


class SplitWorld(Strategy):
    """Corrupt ``k`` random nodes at phase ``at`` and equivocate: the lower
    half of the ID space is told 1, the upper half 0. In round 2, if some
    honest node decided in round 1, the lower half is additionally fed
    decided messages for that value while the upper half hears nothing, to
    spread nodes across the three round-2 cases."""

    name = "splitworld"
    param_names = ("k", "at")

    def __init__(self, **params):
        super().__init__(**params)
        self.k = self._int("k", None)
        self.at = self._int("at", 1)

    def act(self, snap, rng):
        n = snap.n
        new = frozenset()
        if snap.global_phase == self.at and snap.round == 1:
            k = snap.budget_remaining if self.k is None else min(self.k, snap.budget_remaining)
            pool = snap.live_honest()
            if k > 0 and len(pool):
                new = frozenset(int(v) for v in rng.choice(pool, size=min(k, len(pool)), replace=False))
        byz = snap.corrupted | new
        if not byz:
            return AdversaryAction()
        low, high = _halves(n)
        committee = snap.committee()
        d0, d1 = snap.honest_decided_counts()
        overrides = {}
        for b in sorted(byz):
            out = ByzantineSend(n)
            if snap.round == 2 and d0 + d1 > 0:
                out.send(low, 1 if d1 >= d0 else 0, True)
            else:
                out.send(low, 1).send(high, 0)
            if snap.round == 2 and b in committee:
                out.contribute(low, 1).contribute(high, -1)
            overrides[b] = out
        return AdversaryAction(new, overrides)


def _corrupt_toward(members, coins, x, m, done, pick_sign):
    """Greedily corrupt committee members until ``done(x, m)`` holds.

    ``coins`` maps honest member -> pending sign; ``x`` is the honest sum and
    ``m`` the Byzantine member count. Each step takes one honest member whose
    sign is ``pick_sign(x, m)`` over to the Byzantine side. Returns the picked
    members, or None if the available members cannot reach the goal.
    """
    by_sign = {1: [v for v in members if coins[v] == 1], -1: [v for v in members if coins[v] == -1]}
    picked = []
    while not done(x, m):
        sign = pick_sign(x, m)
        if not by_sign[sign]:
            return None
        v = by_sign[sign].pop()
        picked.append(v)
        x -= sign
        m += 1
    return picked


class CoinKiller(Strategy):
    """Spend corruptions on the current committee only, after seeing its
    flips, so that the coin comes out 1 for the lower half of the ID space
    and 0 for the upper half. Acts only when no honest decided value can
    carry the phase on its own (fewer than t + 1 honest decided messages).

    ``spend`` caps new corruptions per committee, ``budget`` caps the total.
    Corrupted nodes are otherwise silent.
    """

    name = "coinkiller"
    param_names = ("spend", "budget")

    def __init__(self, **params):
        super().__init__(**params)
        self.spend = self._int("spend", None)
        self.budget = self._int("budget", None)
        self.spent = 0

    def act(self, snap, rng):
        if snap.round != 2:
            return AdversaryAction()
        if max(snap.honest_decided_counts()) >= snap.params.t + 1:
            return AdversaryAction()
        committee = snap.committee()
        honest = [v for v in committee if snap.pending_coin[v] != 0]
        coins = {v: int(snap.pending_coin[v]) for v in honest}
        x = sum(coins.values())
        m = sum(1 for v in committee if v in snap.corrupted)

        # lower half needs x + m >= 0, upper half needs x - m < 0
        picked = _corrupt_toward(
            honest, coins, x, m,
            done=lambda x, m: -m <= x < m,
            pick_sign=lambda x, m: 1 if x >= m else -1,
        )
        if picked is None:
            return AdversaryAction()
        cap = _cap(snap, self.budget, self.spent)
        if self.spend is not None:
            cap = min(cap, self.spend)
        if len(picked) > cap:
            return AdversaryAction()
        new = frozenset(picked)
        self.spent += len(new)
        low, high = _halves(snap.n)
        overrides = {}
        for b in committee:
            if b in snap.corrupted or b in new:
                overrides[b] = ByzantineSend(snap.n).contribute(low, 1).contribute(high, -1)
        return AdversaryAction(new, overrides)


class AntiAssigned(Strategy):
    """Steer the coin away from the phase's assigned value.

    Phase 1, round 1: corrupt ``k`` (default t // 2) nodes holding the
    honest minority value. Every round 1: corrupted nodes echo the honest
    majority value to the lower half, so some honest nodes decide it. Round
    2: if an assigned value b exists but has fewer than t + 1 honest decided
    messages, the lower half is fed decided messages for b and committee
    members are corrupted until every recipient's coin reads 1 - b.
    """

    name = "antiassigned"
    param_names = ("k", "spend", "budget")

    def __init__(self, **params):
        super().__init__(**params)
        self.k = self._int("k", None)
        self.spend = self._int("spend", None)
        self.budget = self._int("budget", None)
        self.spent = 0

    def act(self, snap, rng):
        n = snap.n
        low, _ = _halves(n)
        if snap.round == 1:
            zeros, ones = snap.honest_val_counts()
            majority = 1 if ones >= zeros else 0
            new = frozenset()
            if snap.global_phase == 1:
                k = snap.params.t // 2 if self.k is None else self.k
                k = min(k, _cap(snap, self.budget, self.spent))
                pool = np.nonzero(snap.pending_val == 1 - majority)[0]
                if k > 0 and len(pool):
                    new = frozenset(int(v) for v in rng.choice(pool, size=min(k, len(pool)), replace=False))
                    self.spent += len(new)
            byz = snap.corrupted | new
            return AdversaryAction(new, {b: ByzantineSend(n).send(low, majority) for b in sorted(byz)})

        d0, d1 = snap.honest_decided_counts()
        if d0 + d1 == 0 or max(d0, d1) >= snap.params.t + 1:
            return AdversaryAction()
        b = 1 if d1 >= d0 else 0
        sigma = -1 if b == 1 else 1  # sign that pushes the coin to 1 - b
        committee = snap.committee()
        honest = [v for v in committee if snap.pending_coin[v] != 0]
        coins = {v: int(snap.pending_coin[v]) for v in honest}
        x = sum(coins.values())
        m = sum(1 for v in committee if v in snap.corrupted)
        if sigma == 1:
            done = lambda x, m: x + m >= 0
        else:
            done = lambda x, m: x - m < 0
        picked = _corrupt_toward(honest, coins, x, m, done=done, pick_sign=lambda x, m: -sigma)
        cap = _cap(snap, self.budget, self.spent)
        if self.spend is not None:
            cap = min(cap, self.spend)
        new = frozenset(picked) if picked is not None and len(picked) <= cap else frozenset()
        self.spent += len(new)

        overrides = {}
        for v in sorted(snap.corrupted | new):
            out = ByzantineSend(n).send(low, b, True)
            if v in committee:
                out.contribute(slice(1, None), sigma)
            overrides[v] = out
        return AdversaryAction(new, overrides)


STRATEGIES = {
    cls.name: cls for cls in (NullAdversary, CrashAdversary, SplitWorld, CoinKiller, AntiAssigned)
}


def parse_adversary(spec: str) -> Tuple[str, Dict[str, str]]:
    """'coinkiller:spend=2,budget=8' -> ('coinkiller', {'spend': '2', 'budget': '8'})."""
    name, _, rest = spec.strip().partition(":")
    name = name.strip().lower()
    if name not in STRATEGIES:
        raise ValueError(f"unknown adversary {name!r}; choose from {sorted(STRATEGIES)}")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ValueError(f"adversary parameter {item!r} is not key=value")
        params[key.strip()] = value.strip()
    return name, params


def make_strategy(spec: str) -> Strategy:
    name, params = parse_adversary(spec)
    for k, v in params.items():
        try:
            int(v)
        except ValueError:
            raise ValueError(f"{name}: parameter {k}={v!r} is not an integer") from None
    return STRATEGIES[name](**params)


def check_action(
    action: AdversaryAction, corrupted: FrozenSet[int], params: ProtocolParams
) -> None:
    """Raise AdversaryContractError if the action breaks the model."""
    new = frozenset(action.new_corruptions)
    bad = [v for v in new if not 1 <= v <= params.n]
    if bad:
        raise AdversaryContractError(f"cannot corrupt unknown node(s) {sorted(bad)}")
    if len(corrupted | new) > params.t:
        raise AdversaryContractError(
            f"corruption budget exceeded: {len(corrupted | new)} > t={params.t}"
        )
    rogue = set(action.overrides) - (corrupted | new)
    if rogue:
        raise AdversaryContractError(f"override for honest sender(s) {sorted(rogue)}")
    for sender, out in action.overrides.items():
        if not isinstance(out, ByzantineSend) or out.val.shape != (params.n + 1,):
            raise AdversaryContractError(f"malformed override for sender {sender}")
