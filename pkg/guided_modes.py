"""
Point spectrum of the defect operator.

An omega inside a gap is an eigenfrequency iff mu = 1 - F_beta(omega), where
1/F_beta is the mean of phi/(phi - f) over the Brillouin zone. The
xi-integral of 1/(A - B cos xi) is done in closed form, leaving one smooth
quadrature in eta. Everything is written with t = 1/phi_beta so that a pole
of phi_beta is simply t = 0 (mean 1, F_beta = 1).
"""
import logging
import math
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import integrate, optimize

from band_scanner import GapType, SpectralGap, essential_mask
from errors import (
    DegenerateField,
    GapUnverified,
    InsideSpectrum,
    InvalidParameter,
    NormalizationInconsistency,
    QuadratureFailure,
    SingularFrequency,
)
from settings import DEFAULT_TOLERANCES, Tolerances
from spectral_functions import LatticeParams, phi_beta

logger = logging.getLogger(__name__)

GAP_SAMPLES = 20


class GuidedMode(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega: float
    lam: float
    F_value: float
    gap_index: int
    mu: float
    beta: float
    bracket: Tuple[float, float]
    residual: Optional[float] = None
    decay_rate: Optional[float] = None
    near_degenerate: bool = False


class LatticeField(BaseModel):
    """Vertex values u[k, l] on [-K, K]^2, stored at values[k + K, l + K]"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    K: int
    values: np.ndarray

    def at(self, k: int, l: int) -> float:
        return float(self.values[k + self.K, l + self.K])

    def symmetry_error(self) -> float:
        v = self.values
        return float(max(np.max(np.abs(v - v[::-1, :])), np.max(np.abs(v - v[:, ::-1]))))

    def ring_index(self) -> np.ndarray:
        k = np.abs(np.arange(-self.K, self.K + 1))
        return k[:, None] + k[None, :]


class _Kernel(NamedTuple):
    """A'(eta) = alpha - gamma cos(eta), closed-form xi-integral against bt cos(xi)"""
    alpha: float
    gamma: float
    bt: float


def _kernel(omega: float, p: LatticeParams, tol: Tolerances) -> _Kernel:
    s1, s2 = math.sin(omega * p.a1), math.sin(omega * p.a2)
    if abs(s1) < tol.sine_tol or abs(s2) < tol.sine_tol:
        raise SingularFrequency(f"omega={omega!r} lies on pi*Z/a1 or pi*Z/a2", payload={"omega": omega})
    phi = phi_beta(omega, p, tol)
    if phi.is_pole:
        t = 0.0
    elif phi.value == 0.0:
        raise InsideSpectrum(f"phi_beta vanishes at omega={omega!r}, a point of sigma_3")
    else:
        t = 1.0 / phi.value
    c1, c2 = math.cos(omega * p.a1), math.cos(omega * p.a2)
    kernel = _Kernel(alpha=1.0 + t * (c1 / s1 + c2 / s2), gamma=t / s2, bt=t / s1)

    # A' is monotone in cos(eta): checking eta = 0 and pi covers the whole zone
    ends = (kernel.alpha - kernel.gamma, kernel.alpha + kernel.gamma)
    if ends[0] * ends[1] <= 0 or min(abs(ends[0]), abs(ends[1])) <= abs(kernel.bt):
        raise InsideSpectrum(
            f"phi_beta - f changes sign over the zone at omega={omega!r}",
            payload={"omega": omega, "beta": p.beta},
        )
    return kernel


def _weight(eta, alpha, gamma, bt):
    a = alpha - gamma * np.cos(eta)
    return np.sign(a) / np.sqrt(a * a - bt * bt), a


def _quad(func: Callable[[float], float], lo: float, hi: float, tol: Tolerances) -> float:
    result = integrate.quad(func, lo, hi, epsabs=1e-14, epsrel=tol.quad_rel_1d,
                            limit=tol.quad_limit, full_output=1)
    value, error = result[0], result[1]
    if len(result) == 4 and error > 1e3 * max(1e-14, tol.quad_rel_1d * abs(value)):
        raise QuadratureFailure(f"quad did not converge: {result[3]}",
                                payload={"value": value, "error": error})
    return value


def F_beta(omega: float, p: LatticeParams, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Reciprocal of the zone mean of phi/(phi - f), by the 1D reduction"""
    kernel = _kernel(omega, p, tol)
    if kernel.bt == 0.0:
        return 1.0
    mean = _quad(lambda eta: float(_weight(eta, *kernel)[0]), 0.0, math.pi, tol) / math.pi
    return 1.0 / mean


def F_beta_many(omegas: np.ndarray, p: LatticeParams,
                tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """F_beta on a whole grid with one vector-valued adaptive quadrature"""
    kernels = [_kernel(float(omega), p, tol) for omega in omegas]
    alpha, gamma, bt = (np.array(column) for column in zip(*kernels))
    means, error, info = integrate.quad_vec(
        lambda eta: _weight(eta, alpha, gamma, bt)[0], 0.0, math.pi,
        epsabs=1e-14, epsrel=tol.quad_rel_1d, norm="max", limit=tol.quad_limit * 10,
        full_output=True,
    )
    if not info.success:
        raise QuadratureFailure(f"quad_vec did not converge: {info.message}", payload={"error": float(error)})
    return math.pi / means


def F_beta_2d(omega: float, p: LatticeParams, tol: Tolerances = DEFAULT_TOLERANCES,
              f_override: Optional[Callable[[float, float], float]] = None) -> float:
    """
    Direct two-dimensional quadrature of the same mean, kept as an
    independent check of F_beta. Poles of phi_beta are left to F_beta.

    Args:
        f_override: replaces f(xi, eta, omega) in the integrand (test hook)
    """
    kernel = _kernel(omega, p, tol)
    phi = phi_beta(omega, p, tol)
    if phi.is_pole:
        raise QuadratureFailure(f"omega={omega!r} is a pole of phi_beta; use F_beta there")
    s1, c1 = math.sin(omega * p.a1), math.cos(omega * p.a1)
    s2, c2 = math.sin(omega * p.a2), math.cos(omega * p.a2)
    logger.debug(f"2D quadrature at omega={omega} (kernel {kernel})")

    def f(xi: float, eta: float) -> float:
        if f_override is not None:
            return f_override(xi, eta)
        return (math.cos(xi) - c1) / s1 + (math.cos(eta) - c2) / s2

    def inner(xi: float) -> float:
        result = integrate.quad(lambda eta: phi.value / (phi.value - f(xi, eta)), 0.0, math.pi,
                                epsabs=1e-14, epsrel=0.1 * tol.quad_rel_2d,
                                limit=tol.quad_limit, full_output=1)
        if len(result) == 4:
            raise QuadratureFailure(f"inner quadrature failed at xi={xi}: {result[3]}")
        return result[0]

    result = integrate.quad(inner, 0.0, math.pi, epsabs=1e-14, epsrel=tol.quad_rel_2d,
                            limit=tol.quad_limit, full_output=1)
    if len(result) == 4:
        raise QuadratureFailure(f"outer quadrature failed: {result[3]}", payload={"error": result[1]})
    # integrand is even in xi and eta: 4 quarter-zones over 4 pi^2
    return math.pi ** 2 / result[0]


def verify_gap(p: LatticeParams, gap: SpectralGap, tol: Tolerances = DEFAULT_TOLERANCES) -> None:
    samples = np.linspace(gap.omega_b, gap.omega_t, GAP_SAMPLES + 2)[1:-1]
    members = essential_mask(samples, p, tol)
    if np.any(members):
        raise GapUnverified(
            f"Interval ({gap.omega_b}, {gap.omega_t}) meets the essential spectrum at {samples[members].tolist()}",
            payload={"omega_b": gap.omega_b, "omega_t": gap.omega_t},
        )


def _segments(gap: SpectralGap, tol: Tolerances) -> List[Tuple[float, float]]:
    delta = tol.edge_margin_fraction * (gap.omega_t - gap.omega_b)
    cuts = [gap.omega_b + delta, *gap.w_inside, gap.omega_t - delta]
    return list(zip(cuts, cuts[1:]))


def _sharp_edge(edge: float, inward: float, p: LatticeParams, tol: Tolerances) -> float:
    """
    First frequency outside the spectrum next to a scanned gap edge, bisected
    on membership down to a few ulps. The scan only pins edges to edge_tol.
    """
    member = edge - inward * 4.0 * tol.edge_tol
    outside = edge + inward * 4.0 * tol.edge_tol
    if not bool(essential_mask(member, p, tol)) or bool(essential_mask(outside, p, tol)):
        return edge
    while abs(outside - member) > 2.0 * math.ulp(edge):
        mid = 0.5 * (member + outside)
        if mid in (member, outside):
            break
        if bool(essential_mask(mid, p, tol)):
            member = mid
        else:
            outside = mid
    return outside


def _root_toward_edge(residual: Callable[[float], float], edge: float,
                      start: float, tol: Tolerances) -> Optional[Tuple[float, Tuple[float, float]]]:
    """
    Follow mu - (1 - F_beta) from start (where it is positive) toward a gap
    edge off sigma_1 u sigma_2, where 1 - F_beta -> 1 and the residual tends
    to mu - 1 < 0. Offsets shrink by decades down to a few ulps of the edge.

    Returns:
        root and bracket, or None when no sign change is resolved
    """
    floor = 4.0 * math.ulp(edge)
    offsets = [d for d in (abs(start - edge) * 10.0 ** -j for j in range(1, 40)) if d > floor] + [floor]
    previous = start
    for offset in offsets:
        omega = edge + math.copysign(offset, start - edge)
        try:
            value = residual(omega)
        except (InsideSpectrum, QuadratureFailure, SingularFrequency) as e:
            logger.debug(f"Edge search stopped at offset {offset:.3e}: {e}")
            return None
        if value == 0.0:
            return omega, (omega, omega)
        if value < 0.0:
            lo, hi = sorted((omega, previous))
            root = optimize.brentq(residual, lo, hi, xtol=min(tol.root_tol, 0.25 * (hi - lo)))
            logger.debug(f"Root {root!r} found {offset:.3e} from the edge {edge!r}")
            return root, (lo, hi)
        previous = omega
    return None


class GapModes(BaseModel):
    """
    Guided modes of one gap. unresolved_edges names the edges ('bottom',
    'top') next to which a root lies closer than double precision can follow.
    """

    model_config = ConfigDict(frozen=True)

    gap_index: int
    modes: List[GuidedMode]
    unresolved_edges: List[str] = []


UNRESOLVED_NOTE = "mode below double-precision resolution"


def search_gap(p: LatticeParams, gap: SpectralGap, gap_index: int = 0,
               tol: Tolerances = DEFAULT_TOLERANCES) -> GapModes:
    """
    All roots of mu - (1 - F_beta) inside the gap. The gap is cut at its
    W(beta) point, where F_beta = 1, so a type I gap is searched on both
    sides of omega_0. Next to an edge off sigma_1 u sigma_2 the residual
    tends to mu - 1 < 0; when it is still positive at the first grid point
    the root sits closer to the edge and is followed on decade offsets.
    """
    if p.mu >= 1:
        logger.info(f"mu={p.mu} >= 1: no guided modes in gap {gap_index}")
        return GapModes(gap_index=gap_index, modes=[])
    verify_gap(p, gap, tol)

    def residual(omega: float) -> float:
        return p.mu - (1.0 - F_beta(omega, p, tol))

    # Step 1: sign changes on a uniform grid of each segment
    segments = _segments(gap, tol)
    found: List[Tuple[float, Tuple[float, float]]] = []
    innermost: Dict[str, Tuple[float, float]] = {}
    for number, (lo, hi) in enumerate(segments):
        grid = np.linspace(lo, hi, tol.root_grid)
        values = p.mu - (1.0 - F_beta_many(grid, p, tol))
        for i in np.flatnonzero(values == 0.0):
            found.append((float(grid[i]), (float(grid[i]), float(grid[i]))))
        for i in np.flatnonzero(values[:-1] * values[1:] < 0):
            root = optimize.brentq(residual, grid[i], grid[i + 1], xtol=tol.root_tol)
            found.append((root, (float(grid[i]), float(grid[i + 1]))))
        if number == 0:
            innermost["bottom"] = (float(grid[0]), float(values[0]))
        if number == len(segments) - 1:
            innermost["top"] = (float(grid[-1]), float(values[-1]))

    # Step 2: roots squeezed between the grid and an edge off sigma_1 u sigma_2
    unresolved = []
    edges = {"bottom": (gap.omega_b, 1.0, gap.edge_flags[0]), "top": (gap.omega_t, -1.0, gap.edge_flags[1])}
    for side, (edge, inward, on_sigma) in edges.items():
        start, value = innermost[side]
        if on_sigma or value <= 0.0:
            continue
        hit = _root_toward_edge(residual, _sharp_edge(edge, inward, p, tol), start, tol)
        if hit is None:
            logger.warning(f"Gap {gap_index}: {UNRESOLVED_NOTE} at the {side} edge {edge:.10f}")
            unresolved.append(side)
        else:
            found.append(hit)
    found.sort()

    # Step 3: certify every root and flag near-coincident pairs
    modes = []
    for index, (omega, bracket) in enumerate(found):
        F = F_beta(omega, p, tol)
        if abs(p.mu - (1.0 - F)) > 1e-9:
            logger.warning(f"Root certificate at omega={omega}: |mu - (1 - F)| = {abs(p.mu - (1.0 - F)):.3e}")
        neighbours = [other for j, (other, _) in enumerate(found) if j != index]
        modes.append(GuidedMode(
            omega=omega,
            lam=omega ** 2,
            F_value=F,
            gap_index=gap_index,
            mu=p.mu,
            beta=p.beta,
            bracket=bracket,
            near_degenerate=any(abs(omega - other) < tol.near_degenerate for other in neighbours),
        ))

    expected = 2 if gap.gap_type == GapType.TYPE_I else 1
    if len(modes) + len(unresolved) < expected:
        logger.warning(f"Gap {gap_index} ({gap.gap_type.value}) yielded {len(modes)} modes, expected at least {expected}")
    logger.info(f"Gap {gap_index}: {len(modes)} guided modes at mu={p.mu}")
    return GapModes(gap_index=gap_index, modes=modes, unresolved_edges=unresolved)


def find_guided_modes(p: LatticeParams, gap: SpectralGap, gap_index: int = 0,
                      tol: Tolerances = DEFAULT_TOLERANCES) -> List[GuidedMode]:
    return search_gap(p, gap, gap_index, tol).modes


def mode_profile(mode: GuidedMode, p: LatticeParams, K: int,
                 tol: Tolerances = DEFAULT_TOLERANCES) -> LatticeField:
    """
    Transverse vertex values from the inverse Fourier formula,
    u[k, l] = (1 - mu) / (4 pi^2) * integral of phi/(phi - f) e^{-i(k xi + l eta)},
    normalized to u[0, 0] = 1. The xi-part is the closed form
    2 pi sign(A) r^|k| / sqrt(A^2 - B^2).
    """
    if K < 1:
        raise InvalidParameter(f"Truncation radius must be >= 1, got {K}")
    alpha, gamma, bt = _kernel(mode.omega, p, tol)
    k = np.arange(K + 1)

    def integrand(eta: float) -> np.ndarray:
        weight, a = _weight(eta, alpha, gamma, bt)
        r = np.sign(a) * bt / (abs(a) + math.sqrt(a * a - bt * bt))
        return (weight * r ** k)[:, None] * np.exp(-1j * k * eta)[None, :]

    coefficients, error, info = integrate.quad_vec(
        integrand, 0.0, 2.0 * math.pi, epsabs=1e-14, epsrel=tol.quad_rel_1d,
        norm="max", limit=tol.quad_limit * 10, full_output=True,
    )
    if not info.success:
        raise QuadratureFailure(f"Profile quadrature did not converge: {info.message}")
    coefficients = (1.0 - p.mu) * coefficients / (2.0 * math.pi)

    imaginary = float(np.max(np.abs(coefficients.imag)))
    if imaginary > tol.imag_tol:
        raise QuadratureFailure(f"Profile has imaginary part {imaginary:.3e} above {tol.imag_tol}")
    quarter = coefficients.real

    # the (0, 0) coefficient restates mu = 1 - F_beta
    if abs(quarter[0, 0] - 1.0) > tol.consistency_tol:
        raise NormalizationInconsistency(
            f"u[0,0] = {quarter[0, 0]!r} before normalization at omega={mode.omega}",
            payload={"u00": float(quarter[0, 0]), "omega": mode.omega},
        )
    quarter = quarter / quarter[0, 0]
    index = np.abs(np.arange(-K, K + 1))
    return LatticeField(K=K, values=quarter[index[:, None], index[None, :]])


def decay_rate(field: LatticeField) -> float:
    """exp of the least-squares slope of log(ring maximum) against |k| + |l|, rings 2..K"""
    rings = field.ring_index()
    distances, maxima = [], []
    for d in range(2, field.K + 1):
        peak = float(np.max(np.abs(field.values[rings == d])))
        if peak >= 1e-14:
            distances.append(d)
            maxima.append(peak)
    if len(distances) < 2:
        raise DegenerateField(f"Fewer than two rings above 1e-14 in a field with K={field.K}")
    slope, _ = np.polyfit(distances, np.log(maxima), 1)
    return float(math.exp(slope))


def outer_ring_energy_fraction(field: LatticeField) -> float:
    energy = field.values ** 2
    return float(energy[field.ring_index() == field.K].sum() / energy.sum())


def gap_edge_limits(p: LatticeParams, gap: SpectralGap,
                    tol: Tolerances = DEFAULT_TOLERANCES) -> Dict[str, float]:
    """1 - F_beta just inside both edges and, for a type I gap, next to omega_0"""
    width = gap.omega_t - gap.omega_b
    limits = {
        "near_bottom": 1.0 - F_beta(gap.omega_b + 1e-2 * width, p, tol),
        "near_top": 1.0 - F_beta(gap.omega_t - 1e-2 * width, p, tol),
    }
    if gap.omega_0 is not None:
        limits["below_omega_0"] = 1.0 - F_beta(gap.omega_0 - 1e-3, p, tol)
        limits["above_omega_0"] = 1.0 - F_beta(gap.omega_0 + 1e-3, p, tol)
    return limits
