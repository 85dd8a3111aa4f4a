"""One-round common coin: contribution sampling, aggregation and the
anti-concentration machinery used to reason about it.

Every honest contributor draws a sign in {-1, +1}; every observer sums the
signs it received from the designated contributors and outputs 1 when the
sum is non-negative, 0 otherwise.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

MAX_ENUMERATION_G = 20


@dataclass(frozen=True)
class CoinContribution:
    sender: int
    value: int

    def __post_init__(self):
        if self.value not in (-1, 1):
            raise ValueError(f"contribution must be -1 or +1, got {self.value!r}")
        if self.sender < 1:
            raise ValueError(f"node ids are 1-based, got {self.sender!r}")


@dataclass(frozen=True)
class CoinTrialSetup:
    """Honest/adversarial split of the contributors of one coin flip."""

    n: int
    g: int
    f: int

    def __post_init__(self):
        if self.g < 1:
            raise ValueError("need at least one honest contributor")
        if self.f < 0:
            raise ValueError("adversary count must be non-negative")
        if self.g + self.f != self.n:
            raise ValueError(f"g + f must equal n ({self.g} + {self.f} != {self.n})")

    @classmethod
    def sqrt_budget(cls, n: int) -> "CoinTrialSetup":
        """The largest adversary the coin tolerates: f = floor(sqrt(n)/2)."""
        f = math.isqrt(n) // 2
        return cls(n=n, g=n - f, f=f)


@dataclass(frozen=True)
class CoinGuarantee:
    """Analytic (delta, epsilon) floors plus Monte Carlo estimates.

    ``delta``/``epsilon`` are None when the anti-concentration argument gives
    nothing for the setup (adversary larger than sqrt(n)/2).
    """

    delta: Optional[float]
    epsilon: Optional[float]
    empirical_delta: float
    empirical_eps0: float
    p_above: float
    p_below: float
    trials: int

    def __post_init__(self):
        if self.delta is not None and not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.epsilon is not None and not 0 < self.epsilon <= 0.5:
            raise ValueError("epsilon must lie in (0, 1/2]")
        for name in ("empirical_delta", "empirical_eps0", "p_above", "p_below"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def sigma(self, p: float) -> float:
        """Binomial standard error of an estimate p at this trial count."""
        return math.sqrt(p * (1 - p) / self.trials)


def sample_contribution(rng: np.random.Generator) -> int:
    """Draw one fair sign. Bit 1 maps to +1 and bit 0 to -1."""
    return sign_of_bit(int(rng.integers(0, 2)))


def sign_of_bit(bit: int) -> int:
    return 1 if bit else -1


def coin_bit(total: int) -> int:
    # tie goes to 1
    return 1 if total >= 0 else 0


def aggregate_coin(
    contributions: Iterable[CoinContribution],
    designated: Iterable[int],
    equivocators: Optional[set] = None,
) -> int:
    """Majority of the designated contributions; 1 on a tie.

    Contributions from senders outside ``designated`` are dropped. A
    designated sender that appears more than once is treated as silent and,
    if ``equivocators`` is given, recorded there.
    """
    designated = set(designated)
    contributions = [c for c in contributions if c.sender in designated]
    seen = Counter(c.sender for c in contributions)
    total = 0
    for c in contributions:
        if seen[c.sender] > 1:
            continue
        total += c.value
    dupes = {s for s, k in seen.items() if k > 1}
    if dupes:
        logger.debug("equivocating coin senders ignored: %s", sorted(dupes))
        if equivocators is not None:
            equivocators.update(dupes)
    return coin_bit(total)


def moment_formula(g: int, power: int) -> int:
    """Closed form of E[X^power] for a sum of g fair signs."""
    if power == 2:
        return g
    if power == 4:
        return 3 * g * g - 2 * g
    raise ValueError("only powers 2 and 4 are supported")


def exact_moment(g: int, power: int) -> Fraction:
    """E[X^power] for X a sum of g fair signs, by enumerating all 2^g outcomes."""
    if not 1 <= g <= MAX_ENUMERATION_G:
        raise ValueError(f"g must be in [1, {MAX_ENUMERATION_G}], got {g}")
    if power not in (2, 4):
        raise ValueError("only powers 2 and 4 are supported")
    outcomes = np.arange(1 << g, dtype=np.int64)
    ones = np.zeros_like(outcomes)
    for k in range(g):
        ones += (outcomes >> k) & 1
    x = 2 * ones - g
    return Fraction(int(np.sum(x**power)), 1 << g)


def pz_bound(setup: CoinTrialSetup) -> float:
    """Paley-Zygmund lower bound on Pr(X > sqrt(n)/2) for the honest sum X.

    Applied to X^2 with E[X^2] = g, E[X^4] = 3g^2 - 2g and theta = n/(4g).
    Returns 0 when theta >= 1 (the inequality says nothing).
    """
    g = setup.g
    if g < 1:
        raise ValueError("no honest contributors")
    theta = setup.n / (4 * g)
    if theta >= 1:
        return 0.0
    return (1 - theta) ** 2 * g * g / (3 * g * g - 2 * g)


def honest_sums(g: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Sample the honest sum X = sum of g fair signs, ``trials`` times."""
    return 2 * rng.binomial(g, 0.5, size=trials).astype(np.int64) - g


def tail_probability(
    setup: CoinTrialSetup, threshold: float, trials: int, rng: np.random.Generator
) -> float:
    """Empirical Pr(X > threshold)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = honest_sums(setup.g, trials, rng)
    return float(np.mean(x > threshold))


def estimate_coin_guarantee(
    setup: CoinTrialSetup,
    adversary_shift: Union[str, int],
    trials: int,
    rng: np.random.Generator,
) -> CoinGuarantee:
    """Monte Carlo estimate of the common-coin contract for one setup.

    ``adversary_shift="worst-case"`` lets the adversary see X and then push
    each observer's sum anywhere in [X - f, X + f]; all observers agree
    exactly when X - f >= 0 or X + f < 0. An integer shift k (|k| <= f) is a
    non-equivocating adversary: every observer sees X + k, so they always
    agree and only the bias is measured.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    f = setup.f
    x = honest_sums(setup.g, trials, rng)
    if adversary_shift == "worst-case":
        all_one = x - f >= 0
        all_zero = x + f < 0
    elif isinstance(adversary_shift, (int, np.integer)) and not isinstance(adversary_shift, bool):
        if abs(adversary_shift) > f:
            raise ValueError(f"|shift| must be <= f={f}")
        all_one = x + adversary_shift >= 0
        all_zero = ~all_one
    else:
        raise ValueError(f"unknown adversary shift {adversary_shift!r}")

    agree = all_one | all_zero
    n_agree = int(agree.sum())
    eps0 = float(all_zero.sum() / n_agree) if n_agree else 0.0

    delta = epsilon = None
    if f <= math.sqrt(setup.n) / 2:
        p = pz_bound(setup)
        if p > 0:
            delta = min(1.0, 2 * p)
            epsilon = min(0.5, p)
    return CoinGuarantee(
        delta=delta,
        epsilon=epsilon,
        empirical_delta=n_agree / trials,
        empirical_eps0=eps0,
        p_above=float(np.mean(x > f)),
        p_below=float(np.mean(x < -f)),
        trials=trials,
    )
