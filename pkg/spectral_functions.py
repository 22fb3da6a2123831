"""
Problem parameters and the elementary spectral functions of the weighted
periodic graph operator: phi_beta, f, g_beta and the special point sets
sigma_1, sigma_2, sigma_3 and W(beta).

Every frequency here is an omega (1/length); spectral values are omega**2.
"""
import logging
import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from errors import EmptyWindow, NonFinite, NonPositiveParameter, SingularFrequency
from settings import DEFAULT_TOLERANCES, Tolerances

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def fold_beta(beta: float) -> float:
    """Fold a quasi-momentum into [0, pi] (spectra only see cos(beta)); 0 and pi stay exact"""
    folded = math.fmod(beta, TWO_PI)
    if folded < 0:
        folded += TWO_PI
    if folded > math.pi:
        folded = TWO_PI - folded
    return folded


class LatticeParams(BaseModel):
    """Periods a1, a2, a3, defect weight mu and quasi-momentum beta"""

    model_config = ConfigDict(frozen=True)

    a1: float
    a2: float
    a3: float
    mu: float
    beta: float

    @field_validator("a1", "a2", "a3", "mu")
    @classmethod
    def _positive(cls, value: float, info) -> float:
        if not math.isfinite(value):
            raise NonFinite(f"{info.field_name} must be finite, got {value}")
        if value <= 0:
            raise NonPositiveParameter(f"{info.field_name} must be > 0, got {value}")
        return value

    @field_validator("beta")
    @classmethod
    def _fold(cls, value: float) -> float:
        if not math.isfinite(value):
            raise NonFinite(f"beta must be finite, got {value}")
        return fold_beta(value)

    @property
    def periods(self) -> Tuple[float, float, float]:
        return (self.a1, self.a2, self.a3)

    def replace(self, **changes) -> "LatticeParams":
        """Validated copy with some fields changed (model_copy skips validation)"""
        return LatticeParams(**{**self.model_dump(), **changes})

    def swapped(self) -> "LatticeParams":
        return self.replace(a1=self.a2, a2=self.a1)


def normalize_params(raw) -> LatticeParams:
    """
    Build validated parameters from a LatticeParams, a mapping, or a mapping
    carrying the periods as a sequence under 'a'.
    """
    if isinstance(raw, LatticeParams):
        return raw.replace()
    data = dict(raw)
    if "a" in data:
        periods = data.pop("a")
        if len(periods) != 3:
            raise NonPositiveParameter(f"Expected three periods, got {periods}")
        data.update(a1=float(periods[0]), a2=float(periods[1]), a3=float(periods[2]))
    return LatticeParams(**data)


class FrequencyWindow(BaseModel):
    """Half-open frequency window (omega_lo, omega_hi]"""

    model_config = ConfigDict(frozen=True)

    omega_lo: float
    omega_hi: float

    @model_validator(mode="after")
    def _ordered(self) -> "FrequencyWindow":
        if not (math.isfinite(self.omega_lo) and math.isfinite(self.omega_hi)):
            raise NonFinite(f"Window bounds must be finite: ({self.omega_lo}, {self.omega_hi}]")
        if self.omega_lo < 0 or self.omega_hi <= self.omega_lo:
            raise EmptyWindow(f"Empty frequency window ({self.omega_lo}, {self.omega_hi}]")
        return self

    def contains(self, omega: float) -> bool:
        return self.omega_lo < omega <= self.omega_hi

    @property
    def width(self) -> float:
        return self.omega_hi - self.omega_lo


class PhiValue(BaseModel):
    """Either a finite value of phi_beta or a pole marker (value is None)"""

    model_config = ConfigDict(frozen=True)

    value: Optional[float] = None

    @property
    def is_pole(self) -> bool:
        return self.value is None

    @classmethod
    def pole(cls) -> "PhiValue":
        return cls(value=None)


class SigmaPoints(NamedTuple):
    sigma1: List[float]
    sigma2: List[float]
    sigma3: List[float]

    def all(self) -> List[float]:
        return sorted(set(self.sigma1) | set(self.sigma2) | set(self.sigma3))


def phi_array(omegas: ArrayLike, p: LatticeParams,
              tol: Tolerances = DEFAULT_TOLERANCES) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized phi_beta.

    Returns:
        values: phi_beta(omega), 0 at removable zeros, nan at poles
        poles: boolean mask of the non-removable zeros of sin(omega a3)
    """
    omegas = np.asarray(omegas, dtype=float)
    s3 = np.sin(omegas * p.a3)
    numerator = np.cos(omegas * p.a3) - math.cos(p.beta)
    zero_sine = np.abs(s3) < tol.sine_tol
    removable = zero_sine & (np.abs(numerator) < tol.removable_tol)
    poles = zero_sine & ~removable
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(zero_sine, 0.0, numerator / np.where(zero_sine, 1.0, s3))
    values = np.where(poles, np.nan, values)
    return values, poles


def phi_beta(omega: float, p: LatticeParams, tol: Tolerances = DEFAULT_TOLERANCES) -> PhiValue:
    values, poles = phi_array(omega, p, tol)
    if bool(poles):
        return PhiValue.pole()
    return PhiValue(value=float(values))


def _check_regular(omega: float, periods, tol: Tolerances) -> None:
    for index, a in periods:
        if abs(math.sin(omega * a)) < tol.sine_tol:
            raise SingularFrequency(
                f"omega={omega!r} is singular: sin(omega*a{index}) vanishes",
                payload={"omega": omega, "period_index": index},
            )


def f_value(xi: float, eta: float, omega: float, p: LatticeParams,
            tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    _check_regular(omega, ((1, p.a1), (2, p.a2)), tol)
    s1, c1 = math.sin(omega * p.a1), math.cos(omega * p.a1)
    s2, c2 = math.sin(omega * p.a2), math.cos(omega * p.a2)
    return (math.cos(xi) - c1) / s1 + (math.cos(eta) - c2) / s2


def f_bounds(omegas: ArrayLike, p: LatticeParams) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized [min, max] of f(., ., omega); inf/nan where a sine vanishes"""
    omegas = np.asarray(omegas, dtype=float)
    lows = np.zeros_like(omegas)
    highs = np.zeros_like(omegas)
    for a in (p.a1, p.a2):
        s, c = np.sin(omegas * a), np.cos(omegas * a)
        with np.errstate(divide="ignore", invalid="ignore"):
            at_minus = (-1.0 - c) / s
            at_plus = (1.0 - c) / s
        lows = lows + np.minimum(at_minus, at_plus)
        highs = highs + np.maximum(at_minus, at_plus)
    return lows, highs


def f_range(omega: float, p: LatticeParams,
            tol: Tolerances = DEFAULT_TOLERANCES) -> Tuple[float, float]:
    """
    Range of f(xi, eta, omega) over (xi, eta) in [0, 2pi]^2.
    Each term is monotone in cos(xi) resp. cos(eta), so the extremes sit at
    cos = +-1 with the sign picked by the sign of the sine factor.
    """
    _check_regular(omega, ((1, p.a1), (2, p.a2)), tol)
    lows, highs = f_bounds(omega, p)
    return float(lows), float(highs)


def g_beta(omega: float, p: LatticeParams, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    _check_regular(omega, ((1, p.a1), (2, p.a2), (3, p.a3)), tol)
    phi = (math.cos(omega * p.a3) - math.cos(p.beta)) / math.sin(omega * p.a3)
    return 1.0 / math.tan(omega * p.a1) + 1.0 / math.tan(omega * p.a2) + phi


def _multiples_in(step: float, window: FrequencyWindow) -> List[float]:
    first = max(1, math.floor(window.omega_lo / step))
    last = math.floor(window.omega_hi / step) + 1
    return [n * step for n in range(first, last + 1) if window.contains(n * step)]


def _dedup(values: List[float]) -> List[float]:
    result: List[float] = []
    for value in sorted(values):
        if not result or abs(value - result[-1]) > 1e-12 * max(1.0, value):
            result.append(value)
    return result


def sigma_points(p: LatticeParams, window: FrequencyWindow) -> SigmaPoints:
    """omega values of sigma_1, sigma_2 (pi n / a_i) and sigma_3 (|+-beta + 2 pi n| / a3) in the window"""
    sigma1 = _dedup(_multiples_in(math.pi / p.a1, window))
    sigma2 = _dedup(_multiples_in(math.pi / p.a2, window))

    sigma3 = []
    n_max = math.ceil(window.omega_hi * p.a3 / TWO_PI) + 1
    for n in range(0, n_max + 1):
        for sign in (1.0, -1.0):
            omega = abs(sign * p.beta + TWO_PI * n) / p.a3
            if omega > 0 and window.contains(omega):
                sigma3.append(omega)
    return SigmaPoints(sigma1, sigma2, _dedup(sigma3))


def w_points(p: LatticeParams, window: FrequencyWindow,
             tol: Tolerances = DEFAULT_TOLERANCES) -> List[float]:
    """
    Non-removable poles of phi_beta in the window. For beta outside {0, pi}
    these are all pi n / a3, n >= 1; for beta in {0, pi} only the zeros of
    sin(omega a3) where cos(omega a3) != cos(beta) survive.
    """
    candidates = np.asarray(_multiples_in(math.pi / p.a3, window))
    if candidates.size == 0:
        return []
    _, poles = phi_array(candidates, p, tol)
    return [float(omega) for omega in candidates[poles]]


def distance_to_sigma12(omega: float, p: LatticeParams) -> float:
    """Distance from omega to the nearest positive pi n / a1 or pi n / a2"""
    distances = []
    for a in (p.a1, p.a2):
        n = max(1, round(omega * a / math.pi))
        distances.append(abs(omega - n * math.pi / a))
    return min(distances)


def vertex_weight(k: int, l: int, mu: float) -> float:
    """Kirchhoff weight of the vertical edges at vertex (k, l): mu on the defect line"""
    return mu if (k, l) == (0, 0) else 1.0


def spectrum_contains_zero(p: LatticeParams) -> bool:
    """lambda = 0 is in the spectrum exactly when beta = 0"""
    return p.beta == 0.0
