import math
from types import SimpleNamespace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from committee_ba.analysis import curves_csv, fit_scale, reference_curves, summarize, wilson_interval


def fake(phases, agreement=True, validity_ok=True, q=0, violations=()):
    return SimpleNamespace(phases_used=phases, agreement=agreement, validity_ok=validity_ok,
                           q=q, violations=violations)


def wilson_oracle(k, n, z=1.959963984540054):
    # textbook form, written out independently
    p = k / n
    a = p + z**2 / (2 * n)
    b = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2))
    d = 1 + z**2 / n
    return (a - b) / d, (a + b) / d


def test_summarize_example():
    s = summarize([fake(2), fake(2, q=3), fake(4, agreement=False, violations=("x",))])
    assert s.trials == 3
    assert s.median_phases == 2
    assert s.mean_phases == pytest.approx(8 / 3)
    assert s.agreement_rate == pytest.approx(2 / 3)
    assert s.mean_q == 1.0
    assert s.violations == 1


def test_summarize_single_trial():
    s = summarize([fake(5)])
    assert s.agreement_rate == 1.0
    lo, hi = s.agreement_ci
    assert lo <= 1.0 <= hi == 1.0
    assert lo == pytest.approx(wilson_oracle(1, 1)[0])


def test_summarize_empty():
    with pytest.raises(ValueError):
        summarize([])


@given(st.integers(1, 500), st.data())
def test_wilson_matches_oracle(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    olo, ohi = wilson_oracle(k, n)
    assert lo == pytest.approx(max(0.0, olo), abs=1e-12)
    assert hi == pytest.approx(min(1.0, ohi), abs=1e-12)
    assert lo <= k / n <= hi


def test_wilson_rejects_zero():
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_p95():
    s = summarize([fake(p) for p in range(1, 101)])
    assert s.p95_phases == pytest.approx(95.05)


def test_curves_examples():
    n = 1024
    new, cc, lb = reference_curves(n, math.sqrt(n))
    assert new == pytest.approx(min(10.0, 3.2))
    assert cc == pytest.approx(3.2)
    assert lb == pytest.approx(32 / math.sqrt(10240))
    assert reference_curves(n, 0) == (0.0, 0.0, 0.0)


def test_curves_linear_regime():
    new, cc, _ = reference_curves(2**20, 2**15)
    assert new == cc == pytest.approx(1638.4)


@given(st.integers(16, 2**20), st.floats(0, 1))
def test_curves_crossover(n, frac):
    x = frac * (n - 1) / 3
    new, cc, lb = reference_curves(n, x)
    log_n = math.log2(n)
    assert new <= cc + 1e-12
    if x > 0 and x * log_n**2 < n:
        assert new == pytest.approx(x * x * log_n / n)
    assert lb <= cc + 1e-12


@pytest.mark.parametrize("n, x", [(10, -1), (9, 3), (30, 10)])
def test_curves_reject(n, x):
    with pytest.raises(ValueError):
        reference_curves(n, x)


def test_curves_csv_header_and_rows():
    text = curves_csv(64, [0, 4, 8])
    lines = text.strip().split("\n")
    assert lines[0] == "x,upper_new,upper_cc,lower_bb"
    assert len(lines) == 4
    assert float(lines[2].split(",")[2]) == pytest.approx(4 / 6)


def test_fit_scale():
    assert fit_scale([2, 4, 8], [1, 2, 4]) == pytest.approx(2.0)
    assert fit_scale([0, 3], [5, 1]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        fit_scale([0], [1])
