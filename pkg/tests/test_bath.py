import math

import numpy as np
import pytest

from inchworm_lab import bath


@pytest.fixture(scope="module")
def spec():
    return bath.build_bath()


def brute_force_B(spec, tau1, tau2):
    """Independent mode-by-mode summation with python scalars."""
    total = 0.0 + 0.0j
    d = tau2 - tau1
    for wl, cl in zip(spec.omega, spec.coupling):
        coth = 1.0 / math.tanh(spec.beta * wl / 2.0)
        total += cl * cl / (2.0 * wl) * (coth * math.cos(wl * d) - 1j * math.sin(wl * d))
    return total


def test_default_parameters(spec):
    assert spec.l_modes == 200
    assert spec.omega_c == 3.0
    assert spec.omega_max == 12.0
    assert spec.beta == 5.0
    assert spec.xi == 0.6


def test_frequencies_increasing_and_bounded(spec):
    assert np.all(np.diff(spec.omega) > 0)
    assert np.all(spec.omega > 0)
    assert np.all(spec.omega <= spec.omega_max + 1e-9)


def test_last_frequency_hits_cutoff(spec):
    # l = L makes the log argument exp(-omega_max/omega_c) exactly
    assert spec.omega[-1] == pytest.approx(12.0, rel=1e-12)


def test_first_frequency_formula(spec):
    expected = -3.0 * math.log(1.0 - (1.0 / 200.0) * (1.0 - math.exp(-4.0)))
    assert spec.omega[0] == pytest.approx(expected, rel=1e-14)


def test_coupling_formula(spec):
    scale = math.sqrt(0.6 * 3.0 / 200.0 * (1.0 - math.exp(-4.0)))
    assert np.allclose(spec.coupling, spec.omega * scale, rtol=1e-14)


def test_zero_coupling_bath():
    b0 = bath.build_bath(xi=0.0)
    assert np.all(b0.coupling == 0.0)
    assert bath.correlation_B(b0, 0.3, 1.7) == 0.0


def test_equal_time_correlation_is_real(spec):
    v = bath.correlation_B(spec, 1.3, 1.3)
    assert v.imag == 0.0
    expected = sum(
        c * c / (2.0 * w) / math.tanh(spec.beta * w / 2.0)
        for w, c in zip(spec.omega, spec.coupling)
    )
    assert v.real == pytest.approx(expected, rel=1e-12)


def test_correlation_argument_swap(spec):
    v = bath.correlation_B(spec, 0.4, 1.9)
    w = bath.correlation_B(spec, 1.9, 0.4)
    assert v.real == pytest.approx(w.real, rel=1e-14)
    assert v.imag == pytest.approx(-w.imag, rel=1e-14)


def test_correlation_against_bruteforce_oracle(spec):
    v = bath.correlation_B(spec, 0.0, 1.0)
    ref = brute_force_B(spec, 0.0, 1.0)
    assert abs(v - ref) < 1e-12 * abs(ref)


def test_correlation_stationarity(spec):
    rng = np.random.default_rng(0)
    for _ in range(100):
        t1, shift = rng.uniform(0, 3, size=2)
        dt = rng.uniform(-3, 3)
        a = bath.correlation_B(spec, t1, t1 + dt)
        b = bath.correlation_B(spec, t1 + shift, t1 + shift + dt)
        assert abs(a - b) < 1e-12 * max(1.0, abs(a))


def test_memo_table_matches_direct(spec):
    table = bath.CorrelationTable(spec, span=8.0)
    d = np.linspace(-7.9, 7.9, 1234)
    direct = bath.correlation_B(spec, 0.0, d)
    scale = np.max(np.abs(direct))
    assert np.max(np.abs(table.diff(d) - direct)) < 1e-12 * scale
    # scalar call through the two-argument form
    assert table(0.25, 1.5) == pytest.approx(bath.correlation_B(spec, 0.25, 1.5), rel=1e-10)


def test_memo_table_range_check(spec):
    table = bath.CorrelationTable(spec, span=2.0)
    with pytest.raises(ValueError):
        table.diff(2.5)


def test_influence_order1(spec):
    v = bath.influence_L(spec, 1.2, [0.4])
    assert v == pytest.approx(bath.correlation_B(spec, 0.4, 1.2))


def test_influence_order3(spec):
    a, b, c, d = 0.2, 0.5, 0.9, 1.4
    v = bath.influence_L(spec, d, [a, b, c])
    expected = bath.correlation_B(spec, a, c) * bath.correlation_B(spec, b, d)
    assert v == pytest.approx(expected)


def test_influence_zero_coupling():
    b0 = bath.build_bath(xi=0.0)
    assert bath.influence_L(b0, 1.0, [0.3]) == 0.0
    assert bath.influence_L(b0, 1.0, [0.1, 0.2, 0.3]) == 0.0


def test_influence_rejects_even_or_large_orders(spec):
    with pytest.raises(NotImplementedError):
        bath.influence_L(spec, 1.0, [0.1, 0.2])
    with pytest.raises(NotImplementedError):
        bath.influence_L(spec, 1.0, [0.1, 0.2, 0.3, 0.4, 0.5])


def test_influence_bound_sampling(spec):
    """|L| <= M!! * Lbar^((M+1)/2) with Lbar = max_tau |B(0, tau)|."""
    taus = np.linspace(0.0, 4.0, 4001)
    lbar = np.max(np.abs(bath.correlation_B(spec, 0.0, taus)))
    rng = np.random.default_rng(7)
    for _ in range(200):
        s_up = rng.uniform(0.5, 4.0)
        pts = np.sort(rng.uniform(0.0, s_up, size=1))
        assert abs(bath.influence_L(spec, s_up, pts)) <= 1.0 * lbar + 1e-12
        pts = np.sort(rng.uniform(0.0, s_up, size=3))
        assert abs(bath.influence_L(spec, s_up, pts)) <= 3.0 * lbar**2 + 1e-12


def test_influence_continuity(spec):
    eps = 1e-7
    base = bath.influence_L(spec, 1.5, [0.3, 0.7, 1.1])
    for k, bumped in enumerate(
        ([0.3 + eps, 0.7, 1.1], [0.3, 0.7 + eps, 1.1], [0.3, 0.7, 1.1 + eps])
    ):
        moved = bath.influence_L(spec, 1.5, bumped)
        assert abs(moved - base) < 100 * eps


def test_build_bath_validation():
    with pytest.raises(ValueError):
        bath.build_bath(l_modes=0)
    with pytest.raises(ValueError):
        bath.build_bath(beta=-1.0)
