"""
Brute-force check of the guided modes: the vertex difference equations on
the truncated lattice [-K, K]^2 with zero values outside. Nothing here uses
F_beta or the inverse Fourier formula.
"""
import logging
import math
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import linalg, optimize, sparse
from scipy.sparse import linalg as sparse_linalg

from band_scanner import SpectralGap
from errors import InvalidParameter, NormalizationInconsistency, SingularFrequency, SizeLimit
from guided_modes import LatticeField
from settings import DEFAULT_TOLERANCES, Tolerances
from spectral_functions import LatticeParams, g_beta, phi_beta, vertex_weight

logger = logging.getLogger(__name__)


class TruncatedSystem(BaseModel):
    """
    Five-point stencil of the vertex equations: 1/sin(omega a1) east/west,
    1/sin(omega a2) north/south, -2 g_beta on the centre, plus
    -2 (mu - 1) phi_beta on the centre of the defect node (0, 0).
    """

    model_config = ConfigDict(frozen=True)

    K: int
    omega: float
    east_west: float
    north_south: float
    center: float
    defect_correction: float

    @property
    def side(self) -> int:
        return 2 * self.K + 1

    @property
    def size(self) -> int:
        return self.side ** 2

    def index(self, k: int, l: int) -> int:
        return (k + self.K) * self.side + (l + self.K)

    def stencil(self, k: int, l: int) -> Dict[str, float]:
        return {
            "east": self.east_west,
            "west": self.east_west,
            "north": self.north_south,
            "south": self.north_south,
            "center": self.center + (self.defect_correction if (k, l) == (0, 0) else 0.0),
        }

    def matrix(self) -> sparse.csr_matrix:
        n = self.side
        hop_k = sparse.diags([self.east_west, self.east_west], [-1, 1], shape=(n, n))
        hop_l = sparse.diags([self.north_south, self.north_south], [-1, 1], shape=(n, n))
        eye = sparse.identity(n)
        system = sparse.kron(hop_k, eye) + sparse.kron(eye, hop_l) + self.center * sparse.identity(self.size)
        system = system.tolil()
        system[self.index(0, 0), self.index(0, 0)] += self.defect_correction
        return system.tocsr()


def assemble_system(omega: float, p: LatticeParams, K: int,
                    tol: Tolerances = DEFAULT_TOLERANCES) -> TruncatedSystem:
    if K < 1:
        raise InvalidParameter(f"Truncation radius must be >= 1, got {K}")
    g = g_beta(omega, p, tol)
    phi = phi_beta(omega, p, tol).value
    return TruncatedSystem(
        K=K,
        omega=omega,
        east_west=1.0 / math.sin(omega * p.a1),
        north_south=1.0 / math.sin(omega * p.a2),
        center=-2.0 * g,
        defect_correction=-2.0 * (vertex_weight(0, 0, p.mu) - 1.0) * phi,
    )


def apply_system(system: TruncatedSystem, field: LatticeField) -> np.ndarray:
    if field.K != system.K:
        raise InvalidParameter(f"Field radius {field.K} does not match system radius {system.K}")
    return (system.matrix() @ field.values.ravel()).reshape(field.values.shape)


def fd_residual_field(field: LatticeField, omega: float, p: LatticeParams,
                      tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Residual of the vertex equations on the interior nodes |k|, |l| <= K - 1"""
    if field.K < 2:
        raise InvalidParameter(f"Residual needs K >= 2, got {field.K}")
    if abs(field.at(0, 0) - 1.0) > tol.consistency_tol:
        raise NormalizationInconsistency(f"Field is not normalized: u[0,0] = {field.at(0, 0)}")
    g = g_beta(omega, p, tol)
    phi = phi_beta(omega, p, tol).value
    u = field.values
    residual = ((u[2:, 1:-1] + u[:-2, 1:-1]) / math.sin(omega * p.a1)
                + (u[1:-1, 2:] + u[1:-1, :-2]) / math.sin(omega * p.a2)
                - 2.0 * g * u[1:-1, 1:-1])
    centre = field.K - 1
    residual[centre, centre] -= 2.0 * (p.mu - 1.0) * phi * u[field.K, field.K]
    return residual


def fd_residual(field: LatticeField, omega: float, p: LatticeParams,
                tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    return float(np.max(np.abs(fd_residual_field(field, omega, p, tol))))


def smallest_singular_indicator(omega: float, p: LatticeParams, K: int,
                                tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """
    Smallest singular value of the assembled system; vanishes iff the
    truncated homogeneous problem has a nontrivial solution. The system is
    real symmetric, so above the dense cap the eigenvalue nearest zero from a
    shift-invert solve gives the same number.
    """
    unknowns = (2 * K + 1) ** 2
    if unknowns > tol.max_unknowns:
        raise SizeLimit(f"{unknowns} unknowns exceed the cap of {tol.max_unknowns}",
                        payload={"K": K, "unknowns": unknowns})
    system = assemble_system(omega, p, K, tol)
    if unknowns <= tol.dense_max_unknowns:
        return float(linalg.svdvals(system.matrix().toarray())[-1])
    try:
        eigenvalues = sparse_linalg.eigsh(system.matrix().tocsc(), k=1, sigma=0.0, which="LM",
                                          v0=np.ones(unknowns), return_eigenvectors=False)
    except RuntimeError as e:
        # exactly singular factorization
        logger.debug(f"Shift-invert failed at omega={omega}: {e}")
        return 0.0
    return float(abs(eigenvalues[0]))


def oracle_eigenfrequencies(p: LatticeParams, gap: SpectralGap, K: int, grid: int,
                            tol: Tolerances = DEFAULT_TOLERANCES) -> List[float]:
    """
    Dips of the near-kernel indicator across a gap. Every strict local
    minimum of the grid is polished by golden-section search; it counts when
    the polished value is within 10x of the grid minimum and below dip_ratio
    times the grid median.
    """
    if grid < 100:
        raise InvalidParameter(f"Oracle grid must have at least 100 points, got {grid}")

    def indicator(omega: float) -> float:
        try:
            return smallest_singular_indicator(omega, p, K, tol)
        except SingularFrequency:
            return math.inf

    # Step 1: indicator across the open gap
    omegas = np.linspace(gap.omega_b, gap.omega_t, grid + 2)[1:-1]
    values = np.array([indicator(omega) for omega in omegas])
    finite = values[np.isfinite(values)]
    floor, median = float(np.min(finite)), float(np.median(finite))

    # Step 2: polish strict grid minima, keep the deep ones
    found = []
    for i in range(1, len(omegas) - 1):
        if not (values[i] < values[i - 1] and values[i] < values[i + 1]):
            continue
        bracket: Tuple[float, float, float] = (omegas[i - 1], omegas[i], omegas[i + 1])
        result = optimize.minimize_scalar(indicator, bracket=bracket, method="golden",
                                          options={"xtol": tol.oracle_xtol / omegas[i]})
        if result.fun > 10.0 * floor or result.fun > tol.dip_ratio * median:
            logger.debug(f"Shallow minimum at omega={result.x:.8f} ignored ({result.fun:.3e})")
            continue
        found.append(float(result.x))
        logger.debug(f"Oracle dip at omega={result.x:.8f}, indicator {result.fun:.3e}")
    logger.info(f"Oracle (K={K}, grid={grid}) found {len(found)} eigenfrequencies in "
                f"({gap.omega_b:.6f}, {gap.omega_t:.6f})")
    return found
