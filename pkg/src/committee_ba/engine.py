"""Synchronous full-mesh round executor.

Every communication round runs the same pipeline: live honest nodes commit
their messages (drawing coin flips), the adversary inspects everything and
corrupts/overrides, messages are delivered with sender identity, and honest
nodes transition. Trials are deterministic functions of their config.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import protocol as pc
from .adversary import (
    SILENT,
    RoundSnapshot,
    check_action,
    make_strategy,
)
from .common_coin import coin_bit

logger = logging.getLogger(__name__)

# stream ids under a trial seed
_HONEST, _ADVERSARY, _INPUTS = 0, 1, 2

INPUT_MODES = ("mixed", "zeros", "ones")


def derive_seed(seed: int, k: int) -> int:
    """Seed of trial k in a batch: a counter-keyed SeedSequence draw, so any
    trial can be re-run alone."""
    state = np.random.SeedSequence([seed & (2**64 - 1), k]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _stream(seed: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), which])))


@dataclass(frozen=True)
class TrialConfig:
    params: pc.ProtocolParams
    adversary: str = "null"
    seed: int = 0
    max_phases: Optional[int] = None
    record_trace: bool = False
    inputs: Union[str, Tuple[int, ...]] = "mixed"
    trial: int = 0

    def __post_init__(self):
        make_strategy(self.adversary)
        if isinstance(self.inputs, str):
            if self.inputs not in INPUT_MODES:
                raise ValueError(f"inputs must be one of {INPUT_MODES} or a bit tuple")
        elif len(self.inputs) != self.params.n or any(b not in (0, 1) for b in self.inputs):
            raise ValueError("explicit inputs must be n bits")
        c = pc.committee_count(self.params).c
        if self.max_phases is not None and self.max_phases < c:
            raise ValueError(f"max_phases={self.max_phases} must be >= c={c}")

    def phase_cap(self, c: int) -> int:
        if self.max_phases is not None:
            return self.max_phases
        return 4 * c if self.params.las_vegas else c


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    n: int
    t: int
    adversary: str
    outputs: Tuple[Tuple[int, int], ...]
    agreement: bool
    validity_ok: bool
    unanimous_input: Optional[int]
    phases_used: int
    rounds_used: int
    q: int
    messages_sent: int
    violations: Tuple[str, ...]
    completed: bool
    c: int
    finish_phases: Tuple[Tuple[int, int], ...] = ()
    corruption_phases: int = 0
    conflicts: int = 0
    trace: Optional[Tuple[dict, ...]] = field(default=None, compare=True, repr=False)

    def first_finish(self) -> Optional[int]:
        return min((p for _, p in self.finish_phases), default=None)


def _draw_inputs(config: TrialConfig) -> Tuple[int, ...]:
    n = config.params.n
    if not isinstance(config.inputs, str):
        return tuple(config.inputs)
    if config.inputs == "zeros":
        return (0,) * n
    if config.inputs == "ones":
        return (1,) * n
    rng = _stream(config.seed, _INPUTS)
    return tuple(int(b) for b in rng.integers(0, 2, size=n))


class _Trial:
    def __init__(self, config: TrialConfig):
        self.config = config
        self.params = p = config.params
        self.n = p.n
        self.layout = pc.committee_count(p)
        self.strategy = make_strategy(config.adversary)
        self.honest_rng = _stream(config.seed, _HONEST)
        self.adv_rng = _stream(config.seed, _ADVERSARY)
        self.inputs = _draw_inputs(config)
        self.states: Dict[int, pc.NodeState] = {
            i: pc.initial_state(i, self.inputs[i - 1]) for i in range(1, self.n + 1)
        }
        self.corrupted: frozenset = frozenset()
        self.violations: List[str] = []
        self.trace: Optional[List[dict]] = [] if config.record_trace else None
        self.messages = 0
        self.rounds = 0
        self.conflicts = 0
        self.corruption_phases = set()
        self.global_phase = 1

    def honest(self):
        corrupted = self.corrupted
        return [i for i in range(1, self.n + 1) if i not in corrupted]

    def live(self):
        states = self.states
        return [i for i in self.honest() if states[i].output is None]

    def _violation(self, what: str):
        tag = f"{what}@phase{self.global_phase}"
        logger.warning("invariant violated: %s (seed %d)", tag, self.config.seed)
        self.violations.append(tag)

    # one communication round; returns the per-recipient tallies and coins
    def communicate(self, round_: int):
        n, phase = self.n, self.states_phase()
        senders = self.live()
        pend_val = np.full(n + 1, SILENT, dtype=np.int8)
        pend_dec = np.zeros(n + 1, dtype=bool)
        pend_coin = np.zeros(n + 1, dtype=np.int8)
        send = pc.round1_send if round_ == 1 else pc.round2_send
        msg = None
        for i in senders:
            msg, self.states[i] = send(self.states[i], self.params)
            pend_val[i] = msg.val
            pend_dec[i] = msg.decided
        # every honest message has the same layout, so one check covers the round
        if msg is not None and msg.encoded_bits(self.layout.c) > pc.congest_bound(self.layout.c):
            self._violation("congest")
        if round_ == 2:
            committee = self.layout.members(phase)
            for i in senders:
                if i in committee:
                    contribution = pc.coin_round_send(self.states[i], self.layout, self.honest_rng)
                    pend_coin[i] = contribution.value

        snap = RoundSnapshot(
            phase=phase,
            global_phase=self.global_phase,
            round=round_,
            params=self.params,
            layout=self.layout,
            honest_states={i: self.states[i] for i in self.honest()},
            pending_val=pend_val.copy(),
            pending_decided=pend_dec.copy(),
            pending_coin=pend_coin.copy(),
            corrupted=self.corrupted,
        )
        action = self.strategy.act(snap, self.adv_rng)
        check_action(action, self.corrupted, self.params)
        if action.new_corruptions:
            self.corruption_phases.add(self.global_phase)
            for v in action.new_corruptions:
                pend_val[v] = SILENT
                pend_dec[v] = False
                pend_coin[v] = 0
            self.corrupted = self.corrupted | frozenset(action.new_corruptions)

        # honest part is identical for every recipient
        h_sent = pend_val != SILENT
        h_vals = (int(np.sum(pend_val == 0)), int(np.sum(pend_val == 1)))
        h_dec = (int(np.sum((pend_val == 0) & pend_dec)), int(np.sum((pend_val == 1) & pend_dec)))
        committee = self.layout.members(phase)
        h_coin = int(pend_coin[committee.start : committee.stop].sum()) if round_ == 2 else 0
        n_honest_senders = int(h_sent.sum())
        self.messages += n_honest_senders * n

        byz = [(s, action.overrides[s]) for s in sorted(action.overrides)]
        zeros = np.zeros(n + 1, dtype=np.int64)
        b_v0, b_v1, b_d0, b_d1, b_coin = zeros.copy(), zeros.copy(), zeros.copy(), zeros.copy(), zeros.copy()
        for s, out in byz:
            b_v0 += out.val == 0
            b_v1 += out.val == 1
            b_d0 += (out.val == 0) & out.decided
            b_d1 += (out.val == 1) & out.decided
            if round_ == 2 and s in committee:
                b_coin += out.coin
            self.messages += int(np.sum(out.val[1:] != SILENT))

        if self.trace is not None:
            self._record(phase, round_, pend_val, pend_dec, pend_coin, byz, committee)
        self.rounds += 1
        return h_vals, h_dec, h_coin, (b_v0, b_v1, b_d0, b_d1, b_coin), pend_val

    def _record(self, phase, round_, pend_val, pend_dec, pend_coin, byz, committee):
        g = self.global_phase
        trial = self.config.trial
        for s in np.nonzero(pend_val != SILENT)[0]:
            s = int(s)
            payload = {"val": int(pend_val[s]), "decided": bool(pend_dec[s])}
            if pend_coin[s]:
                payload["coin"] = int(pend_coin[s])
            for r in range(1, self.n + 1):
                self.trace.append(
                    {"trial": trial, "phase": g, "round": round_, "sender": s,
                     "recipient": r, "corrupted": False, "payload": payload}
                )
        for s, out in byz:
            for r in range(1, self.n + 1):
                v = int(out.val[r])
                coin = int(out.coin[r]) if round_ == 2 and s in committee else 0
                if v == SILENT and not coin:
                    continue
                payload = {}
                if v != SILENT:
                    payload = {"val": v, "decided": bool(out.decided[r])}
                if coin:
                    payload["coin"] = coin
                self.trace.append(
                    {"trial": trial, "phase": g, "round": round_, "sender": s,
                     "recipient": r, "corrupted": True, "payload": payload}
                )

    def states_phase(self) -> int:
        return self.layout.committee_for(self.global_phase)

    def receivers(self):
        states = self.states
        return [i for i in self.honest() if states[i].output is None and not states[i].finish]

    def run_phase(self):
        p = self.params
        quorum = p.n - p.t

        h_vals, _, _, (b_v0, b_v1, _, _, _), sent1 = self.communicate(1)
        honest_r1 = (int(np.sum(sent1 == 0)), int(np.sum(sent1 == 1)))
        v0 = (b_v0 + h_vals[0]).tolist()
        v1 = (b_v1 + h_vals[1]).tolist()
        for i in self.receivers():
            tally = pc.Tally(vals=(v0[i], v1[i]))
            self.states[i] = pc.apply_round1(self.states[i], tally, p)
        deciders = {self.states[i].val for i in self.receivers() if self.states[i].decided}
        if len(deciders) > 1:
            self._violation("unanimous_deciders")

        if not self.live():
            return
        _, h_dec, h_coin, (_, _, b_d0, b_d1, b_coin), _ = self.communicate(2)
        processed = self.receivers()
        d0 = (b_d0 + h_dec[0]).tolist()
        d1 = (b_d1 + h_dec[1]).tolist()
        coins = (b_coin + h_coin).tolist()
        for i in processed:
            tally = pc.Tally(decided_vals=(d0[i], d1[i]))
            if pc.round2_conflict(tally, p):
                self.conflicts += 1
            self.states[i] = pc.apply_round2(self.states[i], tally, coin_bit(coins[i]), p, self.global_phase)
        for b in (0, 1):
            if honest_r1[b] >= quorum:
                if any(self.states[i].val != b for i in processed):
                    self._violation("supermajority_persistence")

    def run(self) -> TrialResult:
        cap = self.config.phase_cap(self.layout.c)
        phases = 0
        while self.live() and self.global_phase <= cap:
            self.run_phase()
            phases = self.global_phase
            for i in self.live():
                s = pc.advance_phase(self.states[i], self.layout, self.params.las_vegas)
                self.states[i] = s
            self.global_phase += 1
        completed = not self.live()
        for i in self.live():
            self.states[i] = replace(self.states[i], output=self.states[i].val)
        return self._result(phases, completed)

    def _result(self, phases: int, completed: bool) -> TrialResult:
        honest = list(self.honest())
        outputs = tuple((i, self.states[i].output) for i in honest)
        values = {o for _, o in outputs}
        agreement = len(values) <= 1
        unanimous = self.inputs[0] if len(set(self.inputs)) == 1 else None
        validity_ok = unanimous is None or values <= {unanimous}
        finishes = tuple(
            (i, self.states[i].finished_at) for i in honest if self.states[i].finished_at is not None
        )
        if finishes:
            first = min(p for _, p in finishes)
            # spread is only promised when two more phases fit before the end
            last = self.config.phase_cap(self.layout.c) if self.params.las_vegas else self.layout.c
            promised = first + 2 <= last
            late = [i for i in honest if (self.states[i].finished_at or 10**18) > first + 2]
            if promised and late:
                self._violation("termination_spread")
        return TrialResult(
            trial=self.config.trial,
            seed=self.config.seed,
            n=self.n,
            t=self.params.t,
            adversary=self.config.adversary,
            outputs=outputs,
            agreement=agreement,
            validity_ok=validity_ok,
            unanimous_input=unanimous,
            phases_used=phases,
            rounds_used=self.rounds,
            q=len(self.corrupted),
            messages_sent=self.messages,
            violations=tuple(self.violations),
            completed=completed,
            c=self.layout.c,
            finish_phases=finishes,
            corruption_phases=len(self.corruption_phases),
            conflicts=self.conflicts,
            trace=tuple(self.trace) if self.trace is not None else None,
        )


def run_trial(config: TrialConfig) -> TrialResult:
    """Execute one trial to completion (or to the phase cap)."""
    return _Trial(config).run()


def batch_configs(template: TrialConfig, trials: int) -> List[TrialConfig]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return [
        replace(template, seed=derive_seed(template.seed, k), trial=k) for k in range(trials)
    ]


def run_batch(
    template: TrialConfig, trials: int, workers: Optional[int] = None
) -> List[TrialResult]:
    """Run ``trials`` trials; trial k uses ``derive_seed(template.seed, k)``.

    ``workers > 1`` spreads trials over processes; results come back in
    trial order either way.
    """
    configs = batch_configs(template, trials)
    if not workers or workers <= 1:
        return [run_trial(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, configs, chunksize=max(1, trials // (4 * workers))))
