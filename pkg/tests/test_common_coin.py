import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from committee_ba.common_coin import (
    CoinContribution,
    CoinGuarantee,
    CoinTrialSetup,
    aggregate_coin,
    estimate_coin_guarantee,
    exact_moment,
    moment_formula,
    pz_bound,
    sample_contribution,
    tail_probability,
)


class FixedBits:
    """Stand-in generator that replays a bit sequence."""

    def __init__(self, bits):
        self.bits = iter(bits)

    def integers(self, lo, hi):
        return next(self.bits)


def product_moment(g, power):
    # independent oracle: plain itertools enumeration
    total = sum(sum(signs) ** power for signs in itertools.product((-1, 1), repeat=g))
    return Fraction(total, 2**g)


def exact_tail(g, threshold, two_sided=False):
    hits = 0
    for k in range(g + 1):
        x = 2 * k - g
        if (abs(x) if two_sided else x) > threshold:
            hits += math.comb(g, k)
    return hits / 2**g


def test_sample_maps_bits_to_signs():
    assert sample_contribution(FixedBits([1])) == 1
    assert sample_contribution(FixedBits([0])) == -1


def test_sample_mean_is_zero():
    rng = np.random.default_rng(2024)
    draws = [sample_contribution(rng) for _ in range(1_000_000)]
    assert set(draws) == {-1, 1}
    assert abs(np.mean(draws)) <= 0.005


def test_contribution_rejects_non_signs():
    with pytest.raises(ValueError):
        CoinContribution(1, 0)
    with pytest.raises(ValueError):
        CoinContribution(0, 1)


@pytest.mark.parametrize(
    "values, expected",
    [((1, 1, -1), 1), ((-1, -1, -1), 0), ((), 1), ((1, -1), 1), ((-1, 1, -1, 1, -1), 0)],
)
def test_aggregate_majority_and_tie(values, expected):
    contribs = [CoinContribution(i + 1, v) for i, v in enumerate(values)]
    assert aggregate_coin(contribs, range(1, len(values) + 1)) == expected


def test_aggregate_ignores_non_designated():
    contribs = [CoinContribution(1, -1), CoinContribution(2, 1), CoinContribution(3, 1)]
    assert aggregate_coin(contribs, {1}) == 0


def test_aggregate_missing_designated_counts_zero():
    # designated 2 never sent anything: sum is -1 + 0
    assert aggregate_coin([CoinContribution(1, -1)], {1, 2}) == 0
    assert aggregate_coin([CoinContribution(1, 1)], {1, 2}) == 1


def test_aggregate_duplicate_sender_is_dropped_and_flagged():
    flagged = set()
    contribs = [CoinContribution(1, 1), CoinContribution(1, -1), CoinContribution(2, -1)]
    assert aggregate_coin(contribs, {1, 2}, equivocators=flagged) == 0
    assert flagged == {1}


@given(
    st.lists(st.tuples(st.integers(1, 30), st.sampled_from((-1, 1))), max_size=40),
    st.sets(st.integers(1, 30)),
    st.randoms(use_true_random=False),
)
def test_aggregate_permutation_invariant(pairs, designated, rnd):
    contribs = [CoinContribution(s, v) for s, v in pairs]
    shuffled = contribs[:]
    rnd.shuffle(shuffled)
    assert aggregate_coin(contribs, designated) == aggregate_coin(shuffled, designated)
    outsiders = [CoinContribution(s, v) for s, v in pairs if s not in designated]
    insiders = [c for c in contribs if c.sender in designated]
    assert aggregate_coin(insiders + outsiders, designated) == aggregate_coin(insiders, designated)


@pytest.mark.parametrize("g, power, expected", [(2, 4, 8), (1, 2, 1), (16, 4, 736)])
def test_exact_moment_examples(g, power, expected):
    assert exact_moment(g, power) == expected
    assert product_moment(g, power) == expected


@pytest.mark.parametrize("g", range(1, 13))
def test_exact_moment_matches_enumeration_and_formula(g):
    for power in (2, 4):
        assert exact_moment(g, power) == product_moment(g, power) == moment_formula(g, power)


@pytest.mark.parametrize("g, power", [(0, 2), (21, 2), (3, 3)])
def test_exact_moment_rejects(g, power):
    with pytest.raises(ValueError):
        exact_moment(g, power)


def test_pz_bound_examples():
    assert pz_bound(CoinTrialSetup(n=4, g=2, f=2)) == pytest.approx(0.125)
    assert pz_bound(CoinTrialSetup(n=10**6, g=10**6, f=0)) == pytest.approx(0.1875, abs=1e-6)
    # theta = n / (4g) >= 1: no information
    assert pz_bound(CoinTrialSetup(n=8, g=2, f=6)) == 0.0


def test_setup_validation():
    with pytest.raises(ValueError):
        CoinTrialSetup(n=3, g=0, f=3)
    with pytest.raises(ValueError):
        CoinTrialSetup(n=5, g=3, f=1)
    assert CoinTrialSetup.sqrt_budget(100) == CoinTrialSetup(100, 95, 5)


@given(st.integers(2, 5000), st.data())
def test_pz_bound_floor_when_half_honest(n, data):
    g = data.draw(st.integers(-(-n // 2), n))
    bound = pz_bound(CoinTrialSetup(n=n, g=g, f=n - g))
    assert bound >= 1 / 12 - 1e-12
    if g == n:
        assert bound >= 0.1875 - 1e-12


@pytest.mark.parametrize("n", list(range(1, 41)) + [64, 100, 256])
def test_pz_bound_is_two_sided_lower_bound(n):
    setup = CoinTrialSetup.sqrt_budget(n)
    assert pz_bound(setup) <= exact_tail(setup.g, math.sqrt(n) / 2, two_sided=True)


@pytest.mark.parametrize("n", [7, 16, 50, 64, 100, 256, 400])
def test_pz_bound_below_one_sided_tail(n):
    setup = CoinTrialSetup.sqrt_budget(n)
    assert pz_bound(setup) <= exact_tail(setup.g, math.sqrt(n) / 2)


def test_pz_bound_can_exceed_one_sided_tail_for_tiny_n():
    # n=4, g=3: bound 4/21 against Pr(X > 1) = 1/8. The one-sided claim
    # needs the symmetric split of the two-sided bound.
    setup = CoinTrialSetup(n=4, g=3, f=1)
    assert pz_bound(setup) > exact_tail(3, 1.0)
    assert pz_bound(setup) <= exact_tail(3, 1.0, two_sided=True)


def test_guarantee_without_adversary_always_agrees():
    for g in (1, 2, 7, 50):
        est = estimate_coin_guarantee(CoinTrialSetup(g, g, 0), "worst-case", 2000, np.random.default_rng(g))
        assert est.empirical_delta == 1.0


def test_guarantee_worst_case_n100():
    est = estimate_coin_guarantee(CoinTrialSetup(100, 95, 5), "worst-case", 100_000, np.random.default_rng(11))
    assert est.empirical_delta >= 1 / 12
    assert 0.5 <= est.empirical_delta <= 0.65
    p1 = est.empirical_delta * (1 - est.empirical_eps0)
    p0 = est.empirical_delta * est.empirical_eps0
    for p in (p1, p0):
        assert p >= 1 / 12 - 3 * math.sqrt(p * (1 - p) / est.trials)
    assert est.delta is not None and est.epsilon is not None


def test_guarantee_exact_agreement_probability():
    # n=16, g=14, f=2: agree iff X >= 2 or X < -2; X = 2k - 14
    setup = CoinTrialSetup(16, 14, 2)
    exact = sum(math.comb(14, k) for k in range(15) if 2 * k - 14 >= 2 or 2 * k - 14 < -2) / 2**14
    est = estimate_coin_guarantee(setup, "worst-case", 200_000, np.random.default_rng(5))
    assert est.empirical_delta == pytest.approx(exact, abs=4 * math.sqrt(exact * (1 - exact) / 200_000))


def test_guarantee_fixed_shift_measures_bias():
    setup = CoinTrialSetup(100, 95, 5)
    est = estimate_coin_guarantee(setup, 5, 50_000, np.random.default_rng(3))
    assert est.empirical_delta == 1.0
    exact0 = sum(math.comb(95, k) for k in range(96) if 2 * k - 95 + 5 < 0) / 2**95
    assert est.empirical_eps0 == pytest.approx(exact0, abs=0.01)
    with pytest.raises(ValueError):
        estimate_coin_guarantee(setup, 6, 10, np.random.default_rng(0))


def test_guarantee_is_deterministic():
    setup = CoinTrialSetup(64, 60, 4)
    a = estimate_coin_guarantee(setup, "worst-case", 5000, np.random.default_rng(99))
    b = estimate_coin_guarantee(setup, "worst-case", 5000, np.random.default_rng(99))
    assert a == b


def test_guarantee_rejects_zero_trials():
    with pytest.raises(ValueError):
        estimate_coin_guarantee(CoinTrialSetup(4, 4, 0), "worst-case", 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        tail_probability(CoinTrialSetup(4, 4, 0), 1.0, 0, np.random.default_rng(0))


def test_guarantee_field_ranges():
    with pytest.raises(ValueError):
        CoinGuarantee(delta=0.0, epsilon=0.1, empirical_delta=0.5, empirical_eps0=0.5,
                      p_above=0.2, p_below=0.2, trials=10)
    with pytest.raises(ValueError):
        CoinGuarantee(delta=0.5, epsilon=0.6, empirical_delta=0.5, empirical_eps0=0.5,
                      p_above=0.2, p_below=0.2, trials=10)


@pytest.mark.parametrize("n", [16, 64, 100, 256])
def test_one_sided_tails_clear_floor(n):
    setup = CoinTrialSetup.sqrt_budget(n)
    est = estimate_coin_guarantee(setup, "worst-case", 100_000, np.random.default_rng(n))
    for p in (est.p_above, est.p_below):
        assert p >= 1 / 12 - 3 * est.sigma(p)
