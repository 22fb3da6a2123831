"""
Machine-readable output: canonical JSON (fixed key order, floats cut to
%.12e) and CSV tables with a header row.
"""
import csv
import io
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import orjson
import typer

from band_scanner import BandScan, SpectralGap
from guided_modes import UNRESOLVED_NOTE, GapModes, GuidedMode, LatticeField
from spectral_functions import FrequencyWindow, LatticeParams, SigmaPoints

logger = logging.getLogger(__name__)

MODE_HEADERS = ["beta", "gap_index", "gap_type", "omega_b", "omega_t",
                "mode_omega", "mode_lambda", "F_value", "residual"]
SWEEP_HEADERS = MODE_HEADERS + ["errors"]
DISPERSION_HEADERS = ["xi", "eta", "roots", "degenerate"]
VERIFY_HEADERS = ["gap_index", "mode_omega", "quantity", "value", "tolerance", "passed"]


def float_text(value: float) -> str:
    return f"{value:.12e}"


def _number(value: float) -> orjson.Fragment:
    # JSON has no inf/nan
    if not math.isfinite(value):
        return orjson.Fragment(b"null")
    return orjson.Fragment(float_text(value).encode("ascii"))


def canonical(obj: Any) -> Any:
    """Payload with every float replaced by its %.12e text, ready for orjson"""
    if isinstance(obj, float):
        return _number(obj)
    if isinstance(obj, dict):
        return {key: canonical(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(value) for value in obj]
    return obj


def dumps_json(payload: Dict[str, Any]) -> bytes:
    return orjson.dumps(canonical(payload), option=orjson.OPT_INDENT_2 | orjson.OPT_APPEND_NEWLINE)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return float_text(value)
    return str(value)


def dumps_csv(headers: Sequence[str], rows: Iterable[Dict[str, Any]]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter=",", lineterminator="\n")
    writer.writerow(headers)
    for row in rows:
        writer.writerow([_cell(row.get(header)) for header in headers])
    return buffer.getvalue().encode("utf-8")


def write_output(data: bytes, out: Optional[Path]) -> None:
    if out is None:
        typer.echo(data.decode("utf-8"), nl=False)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    logger.info(f"Wrote {len(data)} bytes to {out}")


def params_record(p: LatticeParams) -> Dict[str, Any]:
    return {"a1": p.a1, "a2": p.a2, "a3": p.a3, "mu": p.mu, "beta": p.beta}


def window_record(window: FrequencyWindow) -> Dict[str, Any]:
    return {"omega_lo": window.omega_lo, "omega_hi": window.omega_hi}


def gap_record(index: int, gap: SpectralGap) -> Dict[str, Any]:
    return {
        "index": index,
        "gap_type": gap.gap_type.value,
        "omega_b": gap.omega_b,
        "omega_t": gap.omega_t,
        "lambda_b": gap.lambda_b,
        "lambda_t": gap.lambda_t,
        "edge_flags": list(gap.edge_flags),
        "w_inside": gap.w_inside,
    }


def band_records(scan: BandScan) -> List[Dict[str, Any]]:
    return [{"omega_lo": lo, "omega_hi": hi, "lambda_lo": lo ** 2, "lambda_hi": hi ** 2}
            for lo, hi in scan.bands]


def scan_record(p: LatticeParams, scan: BandScan, sigma: SigmaPoints, w: List[float]) -> Dict[str, Any]:
    return {
        "command": "gaps",
        "params": params_record(p),
        "window": window_record(scan.window),
        "resolution": scan.resolution,
        "zero_in_spectrum": scan.zero_in_spectrum,
        "bands": band_records(scan),
        "embedded_points": scan.embedded_points,
        "gaps": [gap_record(i, gap) for i, gap in enumerate(scan.gaps)],
        "sigma_points": {"sigma1": sigma.sigma1, "sigma2": sigma.sigma2, "sigma3": sigma.sigma3},
        "w_points": w,
    }


def field_record(field: LatticeField) -> Dict[str, Any]:
    return {"K": field.K, "values": field.values.tolist()}


def mode_record(mode: GuidedMode, gap: SpectralGap, field: Optional[LatticeField] = None,
                error: Optional[str] = None) -> Dict[str, Any]:
    record = {
        "gap_index": mode.gap_index,
        "gap_type": gap.gap_type.value,
        "omega": mode.omega,
        "lambda": mode.lam,
        "F_value": mode.F_value,
        "mu": mode.mu,
        "beta": mode.beta,
        "bracket": list(mode.bracket),
        "residual": mode.residual,
        "decay_rate": mode.decay_rate,
        "near_degenerate": mode.near_degenerate,
    }
    if field is not None:
        record["profile"] = field_record(field)
    if error is not None:
        record["error"] = error
    return record


def mode_row(beta: float, gap_index: int, gap: SpectralGap,
             mode: Optional[GuidedMode] = None) -> Dict[str, Any]:
    return {
        "beta": beta,
        "gap_index": gap_index,
        "gap_type": gap.gap_type.value,
        "omega_b": gap.omega_b,
        "omega_t": gap.omega_t,
        "mode_omega": mode.omega if mode else None,
        "mode_lambda": mode.lam if mode else None,
        "F_value": mode.F_value if mode else None,
        "residual": mode.residual if mode else None,
    }


def unresolved_records(found: GapModes, gap: SpectralGap) -> List[Dict[str, Any]]:
    edges = {"bottom": gap.omega_b, "top": gap.omega_t}
    return [{"gap_index": found.gap_index, "edge": side, "omega_edge": edges[side], "note": UNRESOLVED_NOTE}
            for side in found.unresolved_edges]
