import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import typer
from pydantic import BaseModel, ConfigDict, PositiveFloat, PositiveInt, ValidationError
from typing_extensions import Annotated

import result_writer as writer
from band_scanner import BandScan, SpectralGap, dispersion_roots, find_gaps
from errors import ClassificationViolation, GapIndexError, InvalidParameter, LatticeGuideError
from guided_modes import (
    F_beta,
    F_beta_2d,
    UNRESOLVED_NOTE,
    GuidedMode,
    decay_rate,
    mode_profile,
    outer_ring_energy_fraction,
    search_gap,
)
from lattice_oracle import fd_residual, oracle_eigenfrequencies
from settings import DEFAULT_TOLERANCES, LatticeGuideSettings, Tolerances, load_config_file
from spectral_functions import FrequencyWindow, LatticeParams, normalize_params, sigma_points, w_points

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Built-in defaults (config B); a config file overrides them, flags override both
DEFAULTS: Dict[str, str] = {
    "a": "1,1,2",
    "beta": repr(math.pi / 2),
    "mu": "0.5",
    "omega_min": "0.05",
    "omega_max": "2.0",
    "K": "40",
    "beta_samples": "33",
    "format": "json",
}
CONFIG_KEYS = set(DEFAULTS) | {"resolution", "gap", "profile", "grid", "out"}

PROFILE_K = 20
DISPERSION_GRID = 16
ORACLE_GRID = 400
SWEEP_SUCCESS_RATIO = 0.9


class ExitCode(IntEnum):
    OK = 0
    FAILURE = 1
    CONFIG = 2
    CLASSIFICATION = 3
    MISSING_GAP = 4
    SWEEP = 5
    VERIFY = 6


class OutputFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: LatticeParams
    window: FrequencyWindow
    resolution: Optional[PositiveFloat] = None
    tolerances: Tolerances = DEFAULT_TOLERANCES
    K: PositiveInt = 40
    grid: Optional[PositiveInt] = None
    beta_samples: PositiveInt = 33
    gap: Optional[int] = None
    profile: Optional[PositiveInt] = None
    output_format: OutputFormat = OutputFormat.JSON
    out: Optional[Path] = None
    threads: PositiveInt = 1


class ConfigLoader:
    """Merges built-in defaults, a key=value file and command-line flags"""

    @staticmethod
    def parse_periods(text: str) -> List[float]:
        parts = [part.strip() for part in str(text).split(",")]
        if len(parts) != 3:
            raise InvalidParameter(f"Expected three comma-separated periods, got {text!r}")
        try:
            return [float(part) for part in parts]
        except ValueError:
            raise InvalidParameter(f"Periods must be numbers, got {text!r}")

    @staticmethod
    def merge(flags: Dict[str, Any], config_path: Optional[Path]) -> Dict[str, Any]:
        values: Dict[str, Any] = dict(DEFAULTS)
        if config_path is not None:
            from_file = load_config_file(config_path)
            unknown = sorted(set(from_file) - CONFIG_KEYS)
            if unknown:
                logger.warning(f"Ignoring unknown config keys: {unknown}")
            values.update({key: value for key, value in from_file.items() if key in CONFIG_KEYS})
        values.update({key: value for key, value in flags.items() if value is not None})
        return values

    @staticmethod
    def build(flags: Dict[str, Any], config_path: Optional[Path]) -> RunConfig:
        values = ConfigLoader.merge(flags, config_path)
        settings = LatticeGuideSettings()
        try:
            params = normalize_params({
                "a": ConfigLoader.parse_periods(values["a"]),
                "beta": float(values["beta"]),
                "mu": float(values["mu"]),
            })
            window = FrequencyWindow(omega_lo=float(values["omega_min"]), omega_hi=float(values["omega_max"]))
        except (TypeError, ValueError) as e:
            raise InvalidParameter(f"Could not parse parameters: {e}")
        return RunConfig(
            params=params,
            window=window,
            resolution=values.get("resolution"),
            tolerances=settings.tolerances(),
            K=values["K"],
            grid=values.get("grid"),
            beta_samples=values["beta_samples"],
            gap=values.get("gap"),
            profile=values.get("profile"),
            output_format=values["format"],
            out=values.get("out"),
            threads=settings.threads,
        )


def _emit(config: RunConfig, record: Dict[str, Any], headers: List[str], rows: List[Dict[str, Any]]) -> None:
    if config.output_format == OutputFormat.CSV:
        data = writer.dumps_csv(headers, rows)
    else:
        data = writer.dumps_json(record)
    writer.write_output(data, config.out)


def _scan(config: RunConfig, params: Optional[LatticeParams] = None) -> BandScan:
    return find_gaps(params or config.params, config.window, config.resolution, config.tolerances)


def _selected_gaps(scan: BandScan, gap: Optional[int]) -> List[Tuple[int, SpectralGap]]:
    if gap is None:
        return list(enumerate(scan.gaps))
    if not 0 <= gap < len(scan.gaps):
        raise GapIndexError(
            f"Gap index {gap} does not exist; the scan found {len(scan.gaps)} gaps",
            payload={"gap": gap, "gap_count": len(scan.gaps)},
        )
    return [(gap, scan.gaps[gap])]


def cmd_gaps(config: RunConfig) -> int:
    p = config.params
    scan = _scan(config)
    record = writer.scan_record(p, scan, sigma_points(p, config.window),
                                w_points(p, config.window, config.tolerances))
    rows = [writer.mode_row(p.beta, index, gap) for index, gap in enumerate(scan.gaps)]
    _emit(config, record, writer.MODE_HEADERS, rows)
    return ExitCode.OK


def cmd_eigen(config: RunConfig) -> int:
    p, tol = config.params, config.tolerances
    scan = _scan(config)
    selected = _selected_gaps(scan, config.gap)

    records, rows, unresolved = [], [], []
    for index, gap in selected:
        found = search_gap(p, gap, index, tol)
        unresolved.extend(writer.unresolved_records(found, gap))
        for mode in found.modes:
            field, error = None, None
            try:
                field = mode_profile(mode, p, config.profile or PROFILE_K, tol)
                updates: Dict[str, Any] = {"residual": fd_residual(field, mode.omega, p, tol)}
                if config.profile:
                    updates["decay_rate"] = decay_rate(field)
                mode = mode.model_copy(update=updates)
            except LatticeGuideError as e:
                logger.warning(f"Profile of mode at omega={mode.omega:.10f} failed: {e}")
                error = f"{type(e).__name__}: {e}"
            records.append(writer.mode_record(mode, gap, field if config.profile else None, error))
            rows.append(writer.mode_row(p.beta, index, gap, mode))

    record = {
        "command": "eigen",
        "params": writer.params_record(p),
        "window": writer.window_record(config.window),
        "gaps": [writer.gap_record(index, gap) for index, gap in selected],
        "modes": records,
        "unresolved": unresolved,
    }
    _emit(config, record, writer.MODE_HEADERS, rows)
    return ExitCode.OK


def _sweep_row(config: RunConfig, beta: float) -> Dict[str, Any]:
    """One beta sample: bands, gaps and the guided modes of every gap"""
    row: Dict[str, Any] = {"beta": beta, "bands": [], "gaps": [], "errors": None}
    try:
        params = config.params.replace(beta=beta)
        scan = _scan(config, params)
        gaps = []
        for index, gap in enumerate(scan.gaps):
            found = search_gap(params, gap, index, config.tolerances)
            gaps.append({**writer.gap_record(index, gap),
                         "modes": [{"omega": m.omega, "lambda": m.lam, "F_value": m.F_value} for m in found.modes],
                         "unresolved_edges": found.unresolved_edges})
        row.update(bands=writer.band_records(scan), gaps=gaps)
    except LatticeGuideError as e:
        logger.warning(f"Sweep row beta={beta:.6f} failed: {e}")
        row["errors"] = f"{type(e).__name__}: {e}"
    return row


def _sweep_csv_rows(row: Dict[str, Any]) -> List[Dict[str, Any]]:
    if row["errors"] is not None or not row["gaps"]:
        return [{"beta": row["beta"], "errors": row["errors"]}]
    flat = []
    for gap in row["gaps"]:
        base = {"beta": row["beta"], "gap_index": gap["index"], "gap_type": gap["gap_type"],
                "omega_b": gap["omega_b"], "omega_t": gap["omega_t"]}
        if not gap["modes"]:
            flat.append(base)
        for mode in gap["modes"]:
            flat.append({**base, "mode_omega": mode["omega"], "mode_lambda": mode["lambda"],
                         "F_value": mode["F_value"]})
    return flat


def cmd_bands(config: RunConfig) -> int:
    n = config.beta_samples
    if n < 2:
        raise InvalidParameter(f"A sweep needs at least 2 beta samples, got {n}")
    betas = [math.pi * j / (n - 1) for j in range(n)]

    logger.info(f"Sweeping {n} beta samples on {config.threads} threads")
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        rows = list(pool.map(lambda beta: _sweep_row(config, beta), betas))

    succeeded = sum(1 for row in rows if row["errors"] is None)
    record = {
        "command": "bands",
        "params": {key: value for key, value in writer.params_record(config.params).items() if key != "beta"},
        "window": writer.window_record(config.window),
        "beta_samples": n,
        "succeeded": succeeded,
        "rows": rows,
    }
    csv_rows = [flat for row in rows for flat in _sweep_csv_rows(row)]
    _emit(config, record, writer.SWEEP_HEADERS, csv_rows)

    if succeeded < SWEEP_SUCCESS_RATIO * n:
        logger.error(f"Only {succeeded} of {n} sweep rows succeeded")
        return ExitCode.SWEEP
    return ExitCode.OK


def cmd_dispersion(config: RunConfig) -> int:
    p, tol = config.params, config.tolerances
    n = config.grid or DISPERSION_GRID
    samples = [2.0 * math.pi * i / n for i in range(n)]

    rows = []
    for xi in samples:
        for eta in samples:
            roots = dispersion_roots(xi, eta, p, config.window, config.resolution, tol)
            rows.append({
                "xi": xi,
                "eta": eta,
                "roots": [root.omega for root in roots],
                "degenerate": [root.degenerate for root in roots],
            })
    logger.info(f"Dispersion table: {len(rows)} rows")

    record = {
        "command": "dispersion",
        "params": writer.params_record(p),
        "window": writer.window_record(config.window),
        "grid": n,
        "rows": rows,
    }
    csv_rows = [{
        "xi": row["xi"],
        "eta": row["eta"],
        "roots": ";".join(writer.float_text(omega) for omega in row["roots"]),
        "degenerate": ";".join("1" if flag else "0" for flag in row["degenerate"]),
    } for row in rows]
    _emit(config, record, writer.DISPERSION_HEADERS, csv_rows)
    return ExitCode.OK


def _check(gap_index: int, mode: GuidedMode, quantity: str, value: Optional[float],
           tolerance: float) -> Dict[str, Any]:
    passed = value is not None and math.isfinite(value) and value <= tolerance
    return {"gap_index": gap_index, "mode_omega": mode.omega, "quantity": quantity,
            "value": value, "tolerance": tolerance, "passed": passed}


def _verify_mode(config: RunConfig, gap_index: int, mode: GuidedMode, oracle: List[float]) -> List[Dict[str, Any]]:
    p, tol = config.params, config.tolerances
    delta = min((abs(omega - mode.omega) for omega in oracle), default=math.inf)
    checks = [_check(gap_index, mode, "oracle_delta_omega", delta, tol.verify_omega)]

    try:
        field = mode_profile(mode, p, config.profile or config.K, tol)
        residual = fd_residual(field, mode.omega, p, tol)
        tail = outer_ring_energy_fraction(field)
    except LatticeGuideError as e:
        logger.error(f"Profile at omega={mode.omega:.10f} failed: {e}")
        residual, tail = None, None
    checks.append(_check(gap_index, mode, "fd_residual", residual, tol.verify_residual))
    checks.append(_check(gap_index, mode, "outer_ring_energy", tail, tol.verify_tail))

    try:
        F_1d = F_beta(mode.omega, p, tol)
        agreement = abs(F_1d - F_beta_2d(mode.omega, p, tol)) / max(1.0, abs(F_1d))
    except LatticeGuideError as e:
        logger.error(f"Quadrature comparison at omega={mode.omega:.10f} failed: {e}")
        agreement = None
    checks.append(_check(gap_index, mode, "quadrature_agreement", agreement, tol.verify_quadrature))
    return checks


def cmd_verify(config: RunConfig) -> int:
    p, tol = config.params, config.tolerances
    K, grid = config.K, config.grid or ORACLE_GRID
    report: Dict[str, Any] = {
        "command": "verify",
        "params": writer.params_record(p),
        "window": writer.window_record(config.window),
        "K": K,
        "grid": grid,
        "tolerances": {
            "oracle_delta_omega": tol.verify_omega,
            "fd_residual": tol.verify_residual,
            "outer_ring_energy": tol.verify_tail,
            "quadrature_agreement": tol.verify_quadrature,
        },
        "checks": [],
        "note": None,
        "passed": True,
    }

    if p.mu >= 1:
        report["note"] = "no modes, nothing to verify"
    else:
        checks = report["checks"]
        # Step 1: analytic modes gap by gap
        for index, gap in _selected_gaps(_scan(config), config.gap):
            found = search_gap(p, gap, index, tol)
            for side in found.unresolved_edges:
                logger.warning(f"Gap {index}: nothing to check at the {side} edge ({UNRESOLVED_NOTE})")
            if not found.modes:
                continue
            # Step 2: one oracle scan per gap, then per-mode checks
            oracle = oracle_eigenfrequencies(p, gap, K, grid, tol)
            for mode in found.modes:
                checks.extend(_verify_mode(config, index, mode, oracle))
        if not checks:
            report["note"] = "no modes, nothing to verify"

        # Step 3: verdict, naming the truncation when it is the likely cause
        failed = sorted({check["quantity"] for check in checks if not check["passed"]})
        if failed:
            report["passed"] = False
            if {"oracle_delta_omega", "outer_ring_energy"} & set(failed):
                report["note"] = f"truncation radius K={K} may be too small"
            logger.error(f"Verification failed: {', '.join(failed)}")

    _emit(config, report, writer.VERIFY_HEADERS, report["checks"])
    return ExitCode.OK if report["passed"] else ExitCode.VERIFY


def _diagnostic(e: LatticeGuideError) -> None:
    typer.echo(writer.dumps_json({"error": type(e).__name__, "message": str(e), "payload": e.payload}).decode(),
               err=True, nl=False)


def _run(command: Callable[[RunConfig], int], flags: Dict[str, Any], config_path: Optional[Path]) -> None:
    try:
        config = ConfigLoader.build(flags, config_path)
    except (LatticeGuideError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        raise typer.Exit(ExitCode.CONFIG)

    try:
        code = command(config)
    except ClassificationViolation as e:
        logger.error(f"Gap classification failed: {e}")
        _diagnostic(e)
        raise typer.Exit(ExitCode.CLASSIFICATION)
    except GapIndexError as e:
        logger.error(str(e))
        raise typer.Exit(ExitCode.MISSING_GAP)
    except InvalidParameter as e:
        logger.error(f"Invalid configuration: {e}")
        raise typer.Exit(ExitCode.CONFIG)
    except LatticeGuideError as e:
        logger.error(f"{type(e).__name__}: {e}")
        _diagnostic(e)
        raise typer.Exit(ExitCode.FAILURE)
    raise typer.Exit(int(code))


app = typer.Typer(help="Bands, gaps and guided modes of a periodic quantum graph with a line defect.",
                  add_completion=False, no_args_is_help=True)

AOption = Annotated[Optional[str], typer.Option("--a", help="Periods a1,a2,a3")]
BetaOption = Annotated[Optional[float], typer.Option("--beta", help="Quasi-momentum along the defect line")]
MuOption = Annotated[Optional[float], typer.Option("--mu", help="Defect weight")]
OmegaMinOption = Annotated[Optional[float], typer.Option("--omega-min", help="Lower (open) end of the frequency window")]
OmegaMaxOption = Annotated[Optional[float], typer.Option("--omega-max", help="Upper end of the frequency window")]
ResolutionOption = Annotated[Optional[float], typer.Option("--resolution", help="Scan step in omega")]
GapOption = Annotated[Optional[int], typer.Option("--gap", help="Index of a single gap")]
ProfileOption = Annotated[Optional[int], typer.Option("--profile", help="Attach the mode profile on [-K, K]^2")]
KOption = Annotated[Optional[int], typer.Option("--K", help="Truncation radius of the lattice oracle")]
GridOption = Annotated[Optional[int], typer.Option("--grid", help="Oracle scan points or dispersion samples per axis")]
BetaSamplesOption = Annotated[Optional[int], typer.Option("--beta-samples", help="Beta samples in [0, pi]")]
FormatOption = Annotated[Optional[OutputFormat], typer.Option("--format", help="Output format")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output file (stdout when omitted)")]
ConfigOption = Annotated[Optional[Path], typer.Option("--config", help="key=value config file")]


@app.callback()
def main(verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False):
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@app.command()
def gaps(a: AOption = None, beta: BetaOption = None, mu: MuOption = None,
         omega_min: OmegaMinOption = None, omega_max: OmegaMaxOption = None,
         resolution: ResolutionOption = None, output_format: FormatOption = None,
         out: OutOption = None, config: ConfigOption = None):
    """Bands, classified gaps, sigma points and W points in the window"""
    _run(cmd_gaps, {"a": a, "beta": beta, "mu": mu, "omega_min": omega_min, "omega_max": omega_max,
                    "resolution": resolution, "format": output_format, "out": out}, config)


@app.command()
def eigen(a: AOption = None, beta: BetaOption = None, mu: MuOption = None,
          omega_min: OmegaMinOption = None, omega_max: OmegaMaxOption = None,
          resolution: ResolutionOption = None, gap: GapOption = None, profile: ProfileOption = None,
          output_format: FormatOption = None, out: OutOption = None, config: ConfigOption = None):
    """Guided modes in every gap (or in --gap), with lattice residuals"""
    _run(cmd_eigen, {"a": a, "beta": beta, "mu": mu, "omega_min": omega_min, "omega_max": omega_max,
                     "resolution": resolution, "gap": gap, "profile": profile,
                     "format": output_format, "out": out}, config)


@app.command()
def bands(a: AOption = None, mu: MuOption = None,
          omega_min: OmegaMinOption = None, omega_max: OmegaMaxOption = None,
          resolution: ResolutionOption = None, beta_samples: BetaSamplesOption = None,
          output_format: FormatOption = None, out: OutOption = None, config: ConfigOption = None):
    """Gap and guided-mode table over beta in [0, pi]"""
    _run(cmd_bands, {"a": a, "mu": mu, "omega_min": omega_min, "omega_max": omega_max,
                     "resolution": resolution, "beta_samples": beta_samples,
                     "format": output_format, "out": out}, config)


@app.command()
def dispersion(a: AOption = None, beta: BetaOption = None,
               omega_min: OmegaMinOption = None, omega_max: OmegaMaxOption = None,
               resolution: ResolutionOption = None, grid: GridOption = None,
               output_format: FormatOption = None, out: OutOption = None, config: ConfigOption = None):
    """Bloch dispersion roots on a (xi, eta) grid over [0, 2 pi)^2"""
    _run(cmd_dispersion, {"a": a, "beta": beta, "omega_min": omega_min, "omega_max": omega_max,
                          "resolution": resolution, "grid": grid, "format": output_format, "out": out}, config)


@app.command()
def verify(a: AOption = None, beta: BetaOption = None, mu: MuOption = None,
           omega_min: OmegaMinOption = None, omega_max: OmegaMaxOption = None,
           resolution: ResolutionOption = None, gap: GapOption = None, profile: ProfileOption = None,
           K: KOption = None, grid: GridOption = None,
           output_format: FormatOption = None, out: OutOption = None, config: ConfigOption = None):
    """Cross-check every guided mode against the truncated lattice"""
    _run(cmd_verify, {"a": a, "beta": beta, "mu": mu, "omega_min": omega_min, "omega_max": omega_max,
                      "resolution": resolution, "gap": gap, "profile": profile, "K": K, "grid": grid,
                      "format": output_format, "out": out}, config)


if __name__ == "__main__":
    app()
