import math

import numpy as np
import pytest

from errors import EmptyWindow, NonFinite, NonPositiveParameter, SingularFrequency
from spectral_functions import (
    FrequencyWindow,
    LatticeParams,
    distance_to_sigma12,
    f_range,
    f_value,
    fold_beta,
    g_beta,
    normalize_params,
    phi_array,
    phi_beta,
    sigma_points,
    spectrum_contains_zero,
    vertex_weight,
    w_points,
)


def test_fold_beta_maps_into_zero_pi():
    assert fold_beta(-0.3) == pytest.approx(0.3)
    assert fold_beta(2 * math.pi - 1.0) == pytest.approx(1.0)
    assert fold_beta(math.pi) == pytest.approx(math.pi)
    assert fold_beta(0.0) == 0.0


def test_params_reject_non_positive_period():
    with pytest.raises(NonPositiveParameter):
        LatticeParams(a1=0.0, a2=1.0, a3=1.0, mu=0.5, beta=0.1)


def test_params_reject_non_finite_values():
    with pytest.raises(NonFinite):
        LatticeParams(a1=1.0, a2=1.0, a3=1.0, mu=float("nan"), beta=0.1)
    with pytest.raises(NonFinite):
        LatticeParams(a1=1.0, a2=1.0, a3=1.0, mu=0.5, beta=float("inf"))


def test_params_fold_beta_on_construction():
    p = LatticeParams(a1=1.0, a2=1.0, a3=2.0, mu=0.5, beta=2 * math.pi - math.pi / 2)
    assert p.beta == pytest.approx(math.pi / 2)


def test_normalize_params_accepts_period_sequence():
    p = normalize_params({"a": [1, 1.5, 2], "beta": 0.5, "mu": 0.3})
    assert p.periods == (1.0, 1.5, 2.0)
    with pytest.raises(NonPositiveParameter):
        normalize_params({"a": [1, 2], "beta": 0.5, "mu": 0.3})


def test_swapped_exchanges_horizontal_periods():
    p = LatticeParams(a1=1.0, a2=1.3, a3=2.0, mu=0.5, beta=1.0)
    assert p.swapped().periods == (1.3, 1.0, 2.0)


def test_window_rejects_empty_interval():
    with pytest.raises(EmptyWindow):
        FrequencyWindow(omega_lo=0.0, omega_hi=0.0)
    with pytest.raises(EmptyWindow):
        FrequencyWindow(omega_lo=2.0, omega_hi=1.0)


def test_window_is_half_open():
    window = FrequencyWindow(omega_lo=1.0, omega_hi=2.0)
    assert not window.contains(1.0)
    assert window.contains(2.0)


def test_phi_beta_regular_value(config_a):
    assert phi_beta(1.0, config_a).value == pytest.approx(math.cos(1.0) / math.sin(1.0), rel=1e-12)


def test_phi_beta_pole_and_removable_zero():
    p = LatticeParams(a1=1.0, a2=1.0, a3=1.0, mu=0.5, beta=math.pi / 2)
    assert phi_beta(math.pi, p).is_pole

    p0 = p.replace(beta=0.0)
    removable = phi_beta(2 * math.pi, p0)
    assert not removable.is_pole
    assert removable.value == 0.0


def test_phi_array_marks_poles_with_nan(config_b):
    values, poles = phi_array(np.array([math.pi / 2, 1.0]), config_b)
    assert poles.tolist() == [True, False]
    assert math.isnan(values[0])
    assert values[1] == pytest.approx(math.cos(2.0) / math.sin(2.0))


def test_f_range_brackets_f_values(config_b):
    omega = 1.0
    low, high = f_range(omega, config_b)
    assert low == pytest.approx(2 * (-1 - math.cos(omega)) / math.sin(omega))
    assert high == pytest.approx(2 * (1 - math.cos(omega)) / math.sin(omega))
    for xi, eta in [(0.0, 0.0), (1.0, 2.0), (math.pi, math.pi), (4.0, 0.3)]:
        assert low - 1e-12 <= f_value(xi, eta, omega, config_b) <= high + 1e-12


def test_singular_frequencies_raise(config_b):
    with pytest.raises(SingularFrequency):
        g_beta(math.pi, config_b)
    with pytest.raises(SingularFrequency):
        f_value(0.0, 0.0, math.pi, config_b)
    # sin(omega a3) = 0 alone is enough for g_beta
    with pytest.raises(SingularFrequency):
        g_beta(math.pi / 2, config_b)


def test_sigma_points_of_config_b(config_b):
    window = FrequencyWindow(omega_lo=0.0, omega_hi=2 * math.pi)
    sigma = sigma_points(config_b, window)
    assert sigma.sigma1 == pytest.approx([math.pi, 2 * math.pi])
    assert sigma.sigma2 == pytest.approx([math.pi, 2 * math.pi])
    assert sigma.sigma3 == pytest.approx([math.pi / 4, 3 * math.pi / 4, 5 * math.pi / 4, 7 * math.pi / 4])
    assert len(sigma.all()) == 6


def test_w_points_skip_removable_zeros(config_b):
    window = FrequencyWindow(omega_lo=0.0, omega_hi=2 * math.pi)
    assert w_points(config_b, window) == pytest.approx([math.pi / 2, math.pi, 3 * math.pi / 2, 2 * math.pi])
    # beta = 0: cos(n pi) = 1 for even n, so only the odd multiples of pi/2 are poles
    assert w_points(config_b.replace(beta=0.0), window) == pytest.approx([math.pi / 2, 3 * math.pi / 2])


def test_distance_to_sigma12():
    p = LatticeParams(a1=1.0, a2=1.5, a3=2.0, mu=0.5, beta=1.0)
    assert distance_to_sigma12(math.pi + 0.1, p) == pytest.approx(0.1)
    assert distance_to_sigma12(math.pi / 1.5, p) == pytest.approx(0.0, abs=1e-15)


def test_vertex_weight_only_on_defect():
    assert vertex_weight(0, 0, 0.3) == 0.3
    assert vertex_weight(1, 0, 0.3) == 1.0
    assert vertex_weight(0, -2, 0.3) == 1.0


def test_spectrum_contains_zero_only_for_zero_beta(config_b):
    assert spectrum_contains_zero(config_b.replace(beta=0.0))
    assert not spectrum_contains_zero(config_b)


@pytest.mark.parametrize("beta", [0.0, 1.1, math.pi])
def test_w_points_are_the_poles_of_phi(config_b, beta):
    p = config_b.replace(beta=beta)
    window = FrequencyWindow(omega_lo=0.0, omega_hi=4 * math.pi)
    w = w_points(p, window)
    candidates = [n * math.pi / p.a3 for n in range(1, 9)]
    assert w == pytest.approx([c for c in candidates if phi_beta(c, p).is_pole])

    # no other poles on a fine grid, and phi blows up next to each W point
    _, poles = phi_array(np.linspace(0.01, 4 * math.pi - 0.01, 20001), p)
    assert not poles.any()
    for omega in w:
        assert abs(phi_beta(omega - 1e-7, p).value) > 1e5
        assert abs(phi_beta(omega + 1e-7, p).value) > 1e5


@pytest.mark.parametrize("beta, zero", [(0.0, 2 * math.pi), (math.pi, math.pi)])
@pytest.mark.parametrize("h", [1e-4, 1e-6])
def test_phi_beta_continuous_at_removable_zero(beta, zero, h):
    p = LatticeParams(a1=1.0, a2=1.0, a3=1.0, mu=0.5, beta=beta)
    assert phi_beta(zero, p).value == 0.0
    for omega in (zero - h, zero + h):
        assert abs(phi_beta(omega, p).value) <= h
