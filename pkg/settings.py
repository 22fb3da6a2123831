import logging
from pathlib import Path
from typing import Dict, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, PositiveFloat, PositiveInt
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import InvalidParameter

logger = logging.getLogger(__name__)


class Tolerances(BaseModel):
    """Numerical knobs shared by the scan, the solvers and the oracle"""

    model_config = ConfigDict(frozen=True)

    # |sin(omega a_i)| below this counts as a zero of the sine factor
    sine_tol: PositiveFloat = 1e-12
    # |cos(omega a3) - cos(beta)| below this makes a sine zero removable
    removable_tol: PositiveFloat = 1e-9
    sigma_edge_tol: PositiveFloat = 1e-8
    edge_tol: PositiveFloat = 1e-10
    root_tol: PositiveFloat = 1e-12
    quad_rel_1d: PositiveFloat = 1e-12
    quad_rel_2d: PositiveFloat = 1e-10
    quad_limit: PositiveInt = 400
    imag_tol: PositiveFloat = 1e-10
    consistency_tol: PositiveFloat = 1e-8
    root_grid: PositiveInt = 1000
    edge_margin_fraction: PositiveFloat = 1e-6
    near_degenerate: PositiveFloat = 1e-6
    dense_max_unknowns: PositiveInt = 21 ** 2
    max_unknowns: PositiveInt = 251 ** 2
    dip_ratio: PositiveFloat = 0.05
    oracle_xtol: PositiveFloat = 1e-6
    verify_omega: PositiveFloat = 1e-3
    verify_residual: PositiveFloat = 1e-6
    verify_quadrature: PositiveFloat = 1e-8
    # energy share of the outermost ring |k| + |l| = K
    verify_tail: PositiveFloat = 1e-6


DEFAULT_TOLERANCES = Tolerances()


class LatticeGuideSettings(BaseSettings):
    """Process environment: LATTICE_GUIDE_THREADS, LATTICE_GUIDE_TOL"""

    model_config = SettingsConfigDict(env_prefix="LATTICE_GUIDE_", extra="ignore")

    threads: PositiveInt = 1
    tol: Optional[PositiveFloat] = None

    def tolerances(self) -> Tolerances:
        if self.tol is None:
            return DEFAULT_TOLERANCES
        logger.info(f"LATTICE_GUIDE_TOL overrides the verification tolerance: {self.tol}")
        return DEFAULT_TOLERANCES.model_copy(update={"verify_omega": self.tol})


def load_config_file(path: Path) -> Dict[str, str]:
    """
    Read a flat key=value file with '#' comments.
    Keys are normalized to the flag spelling with '_' for '-'.
    """
    if not path.exists():
        raise InvalidParameter(f"Config file not found: {path}")
    raw = dotenv_values(path, interpolate=False)
    values = {}
    for key, value in raw.items():
        if value is None:
            raise InvalidParameter(f"Config key without value: {key}")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    logger.debug(f"Loaded {len(values)} keys from {path}")
    return values
