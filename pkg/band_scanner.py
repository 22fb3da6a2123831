"""
Essential spectrum of the periodic operator: membership through the
dispersion relation, band/gap scans over a frequency window, gap
classification and Bloch dispersion roots.
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import optimize

from errors import ClassificationViolation, ResolutionTooCoarse
from settings import DEFAULT_TOLERANCES, Tolerances
from spectral_functions import (
    FrequencyWindow,
    LatticeParams,
    distance_to_sigma12,
    f_bounds,
    phi_array,
    sigma_points,
    spectrum_contains_zero,
    w_points,
)

logger = logging.getLogger(__name__)

# Interior samples per grid cell when checking a refined edge
CELL_SAMPLES = 9


class GapType(str, Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"
    TYPE_III = "TypeIII"


class SpectralGap(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega_b: float
    omega_t: float
    gap_type: GapType
    w_inside: List[float]
    edge_flags: Tuple[bool, bool]

    @model_validator(mode="after")
    def _consistent(self) -> "SpectralGap":
        if not self.omega_b < self.omega_t:
            raise ClassificationViolation(f"Gap edges out of order: ({self.omega_b}, {self.omega_t})")
        expected = {
            GapType.TYPE_I: ((False, False), 1),
            GapType.TYPE_II: ((True, False), 0),
            GapType.TYPE_III: ((False, True), 0),
        }[self.gap_type]
        if (tuple(self.edge_flags), len(self.w_inside)) != expected:
            raise ClassificationViolation(
                f"{self.gap_type.value} inconsistent with edge flags {self.edge_flags} "
                f"and W points {self.w_inside}",
                payload=self.model_dump(mode="json"),
            )
        return self

    @property
    def lambda_b(self) -> float:
        return self.omega_b ** 2

    @property
    def lambda_t(self) -> float:
        return self.omega_t ** 2

    @property
    def omega_0(self) -> Optional[float]:
        return self.w_inside[0] if self.w_inside else None


class BandScan(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: FrequencyWindow
    bands: List[Tuple[float, float]]
    gaps: List[SpectralGap]
    embedded_points: List[float]
    resolution: float
    zero_in_spectrum: bool


class DispersionRoot(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega: float
    degenerate: bool = False


def essential_mask(omegas: ArrayLike, p: LatticeParams,
                   tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """
    Vectorized membership test for positive frequencies.

    The dispersion relation divided by the three sines reads
    phi_beta(omega) = f(xi, eta, omega), so omega is in the spectrum iff
    phi_beta lies in the range of f. Zeros of the sines are the sigma sets
    (always in the spectrum) or poles of phi_beta (never).
    """
    omegas = np.asarray(omegas, dtype=float)
    phi, poles = phi_array(omegas, p, tol)
    lows, highs = f_bounds(omegas, p)
    sigma12 = (np.abs(np.sin(omegas * p.a1)) < tol.sine_tol) | (np.abs(np.sin(omegas * p.a2)) < tol.sine_tol)
    removable = (np.abs(np.sin(omegas * p.a3)) < tol.sine_tol) & ~poles
    with np.errstate(invalid="ignore"):
        in_range = (lows <= phi) & (phi <= highs)
    return sigma12 | removable | (~poles & in_range)


def in_essential_spectrum(omega: float, p: LatticeParams,
                          tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    if omega == 0:
        return spectrum_contains_zero(p)
    return bool(essential_mask(abs(omega), p, tol))


def edge_margin(omegas: ArrayLike, p: LatticeParams,
                tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """min(phi - f_min, f_max - phi): >= 0 inside bands, -inf at poles of phi"""
    phi, poles = phi_array(omegas, p, tol)
    lows, highs = f_bounds(omegas, p)
    margin = np.minimum(phi - lows, highs - phi)
    return np.where(poles, -np.inf, margin)


def _refine_edge(lo: float, hi: float, lo_member: bool, p: LatticeParams, tol: Tolerances) -> float:
    """Bisect a membership flip inside (lo, hi) down to tol.edge_tol"""
    while hi - lo > tol.edge_tol:
        mid = 0.5 * (lo + hi)
        if bool(essential_mask(mid, p, tol)) == lo_member:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_cell(lo: float, hi: float, lo_member: bool, p: LatticeParams, tol: Tolerances) -> None:
    samples = np.linspace(lo, hi, CELL_SAMPLES + 2)
    states = essential_mask(samples, p, tol)
    states[0] = lo_member
    flips = int(np.count_nonzero(states[1:] != states[:-1]))
    if flips > 1:
        raise ResolutionTooCoarse(
            f"{flips} membership transitions inside the grid cell ({lo}, {hi}); refine the resolution",
            payload={"cell": [lo, hi], "flips": flips},
        )


def default_resolution(p: LatticeParams) -> float:
    return min(p.periods) * 1e-3


def find_gaps(p: LatticeParams, window: FrequencyWindow, resolution: Optional[float] = None,
              tol: Tolerances = DEFAULT_TOLERANCES) -> BandScan:
    """
    Scan membership on a uniform grid, refine every flip by bisection and
    assemble bands, isolated spectrum points and classified gaps.

    Args:
        p: lattice parameters (mu does not enter: the defect is a compact perturbation)
        window: frequency window to scan
        resolution: grid step in omega, default min(a_i) * 1e-3
    Returns:
        BandScan with only the gaps bounded by spectrum on both sides
    """
    # Step 1: membership on a uniform grid
    step = resolution or default_resolution(p)
    count = max(2, math.ceil(window.width / step))
    grid = np.linspace(window.omega_lo, window.omega_hi, count + 1)
    if grid[0] <= 0:
        grid = grid[1:]
    mask = essential_mask(grid, p, tol)

    sigma = sigma_points(p, window).all()
    if len(sigma) > 1 and np.min(np.diff(sigma)) < 10 * step:
        logger.warning(f"Resolution {step:.3g} gives fewer than 10 samples between some sigma points")

    # Step 2: refined band intervals from the runs of member grid points
    bands: List[Tuple[float, float]] = []
    start = float(grid[0]) if mask[0] else None
    for i in range(len(grid) - 1):
        if mask[i] == mask[i + 1]:
            continue
        _check_cell(grid[i], grid[i + 1], bool(mask[i]), p, tol)
        edge = _refine_edge(grid[i], grid[i + 1], bool(mask[i]), p, tol)
        if mask[i]:
            bands.append((start, edge))
            start = None
        else:
            start = edge
    if start is not None:
        bands.append((start, float(grid[-1])))

    # Step 3: isolated sigma points outside every band
    def in_band(omega: float) -> bool:
        return any(lo - tol.sigma_edge_tol <= omega <= hi + tol.sigma_edge_tol for lo, hi in bands)

    embedded = [s for s in sigma if not in_band(s) and bool(essential_mask(s, p, tol))]

    # Step 4: spectral objects in order; gaps are the open stretches between neighbours
    objects = sorted(bands + [(s, s) for s in embedded])
    gaps = []
    for (_, left_end), (right_start, _) in zip(objects, objects[1:]):
        if right_start - left_end > tol.sigma_edge_tol:
            gaps.append(classify_gap((left_end, right_start), p, tol))
    if objects and objects[0][0] > grid[0]:
        logger.info(f"Dropping stretch ({window.omega_lo}, {objects[0][0]:.6f}) cut by the window")
    if objects and objects[-1][1] < grid[-1]:
        logger.info(f"Dropping stretch ({objects[-1][1]:.6f}, {window.omega_hi}) cut by the window")

    logger.info(f"beta={p.beta:.6f}: {len(bands)} bands, {len(gaps)} gaps, {len(embedded)} isolated points")
    return BandScan(
        window=window,
        bands=bands,
        gaps=gaps,
        embedded_points=embedded,
        resolution=step,
        zero_in_spectrum=spectrum_contains_zero(p),
    )


def classify_gap(interval: Tuple[float, float], p: LatticeParams,
                 tol: Tolerances = DEFAULT_TOLERANCES) -> SpectralGap:
    omega_b, omega_t = interval
    flags = (
        distance_to_sigma12(omega_b, p) <= tol.sigma_edge_tol,
        distance_to_sigma12(omega_t, p) <= tol.sigma_edge_tol,
    )
    inside = [w for w in w_points(p, FrequencyWindow(omega_lo=omega_b, omega_hi=omega_t), tol)
              if omega_b < w < omega_t]

    if flags == (False, False) and len(inside) == 1:
        gap_type = GapType.TYPE_I
    elif flags == (True, False) and not inside:
        gap_type = GapType.TYPE_II
    elif flags == (False, True) and not inside:
        gap_type = GapType.TYPE_III
    else:
        raise ClassificationViolation(
            f"Gap ({omega_b:.10f}, {omega_t:.10f}) matches no gap type: "
            f"edge flags {flags}, W points {inside}",
            payload={"omega_b": omega_b, "omega_t": omega_t, "edge_flags": list(flags),
                     "w_inside": inside, "beta": p.beta},
        )
    return SpectralGap(omega_b=omega_b, omega_t=omega_t, gap_type=gap_type,
                       w_inside=inside, edge_flags=flags)


def dispersion_function(omegas: ArrayLike, xi: float, eta: float, p: LatticeParams) -> np.ndarray:
    """Left-hand side of the three-term Bloch dispersion relation at (k1, k2) = (xi, eta)"""
    omegas = np.asarray(omegas, dtype=float)
    s1, s2, s3 = (np.sin(omegas * a) for a in p.periods)
    c1, c2, c3 = (np.cos(omegas * a) for a in p.periods)
    return (s2 * s3 * (c1 - math.cos(xi))
            + s3 * s1 * (c2 - math.cos(eta))
            + s1 * s2 * (c3 - math.cos(p.beta)))


def _degenerate_points(p: LatticeParams, window: FrequencyWindow, tol: Tolerances) -> List[float]:
    """Frequencies where all three sines vanish and the relation holds identically"""
    points = []
    n = max(1, math.floor(window.omega_lo * p.a1 / math.pi))
    while n * math.pi / p.a1 <= window.omega_hi:
        omega = n * math.pi / p.a1
        if (window.contains(omega)
                and abs(math.sin(omega * p.a2)) < tol.sigma_edge_tol
                and abs(math.sin(omega * p.a3)) < tol.sigma_edge_tol):
            points.append(omega)
        n += 1
    return points


def dispersion_roots(xi: float, eta: float, p: LatticeParams, window: FrequencyWindow,
                     resolution: Optional[float] = None,
                     tol: Tolerances = DEFAULT_TOLERANCES) -> List[DispersionRoot]:
    step = resolution or default_resolution(p)
    count = max(2, math.ceil(window.width / step))
    grid = np.linspace(window.omega_lo, window.omega_hi, count + 1)
    if grid[0] <= 0:
        grid = grid[1:]
    values = dispersion_function(grid, xi, eta, p)

    def lhs(omega: float) -> float:
        return float(dispersion_function(omega, xi, eta, p))

    roots = [float(grid[i]) for i in np.flatnonzero(values == 0.0)]
    for i in np.flatnonzero(values[:-1] * values[1:] < 0):
        roots.append(optimize.brentq(lhs, grid[i], grid[i + 1], xtol=tol.edge_tol))

    degenerate = _degenerate_points(p, window, tol)
    result: List[DispersionRoot] = []
    for omega in sorted(roots):
        if any(abs(omega - d) <= tol.sigma_edge_tol for d in degenerate):
            continue
        if result and abs(omega - result[-1].omega) <= tol.edge_tol:
            continue
        result.append(DispersionRoot(omega=omega))
    result.extend(DispersionRoot(omega=d, degenerate=True) for d in degenerate)
    return sorted(result, key=lambda r: r.omega)
