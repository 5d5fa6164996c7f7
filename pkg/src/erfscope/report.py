"""JSON run reports.

One schema (versioned) serves every subcommand; sections a command did not
run are null. All floats are rounded to 4 decimals at emission so repeated
runs diff cleanly, and keys are sorted for the same reason.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .advisor import AdvisorReport
from .geometry import GaussianFit, PeakSet, StarGeometry, StarMatchReport
from .ioutil import atomic_write_bytes

SCHEMA_VERSION = 1


def round_floats(obj: Any) -> Any:
    """Round every float in a nested structure to 4 decimals."""
    if isinstance(obj, float):
        return round(obj, 4)
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def star_section(geom: StarGeometry) -> dict:
    return {
        "r": geom.r,
        "s": geom.s,
        "alpha": geom.alpha,
        "center": list(geom.center),
        "n_taps": len(geom.taps),
        "taps": [list(t) for t in geom.taps],
        "center_to_center_bottom": geom.center_to_center_bottom,
        "end_to_end": geom.end_to_end,
    }


def peaks_section(peaks: PeakSet, limit: int = 40) -> dict:
    return {
        "window": peaks.window,
        "threshold_frac": peaks.threshold_frac,
        "n_peaks": len(peaks.peaks),
        "peaks": [[r, c, float(v)] for r, c, v in peaks.peaks[:limit]],
    }


def match_section(report: StarMatchReport, n_in_frame: int) -> dict:
    matched_in_frame = report.n_matched  # peaks only exist in-frame
    return {
        "match_radius": report.match_radius,
        "n_taps": report.n_taps,
        "n_taps_in_frame": n_in_frame,
        "n_matched": report.n_matched,
        "matched_frac_in_frame": (matched_in_frame / n_in_frame) if n_in_frame else 0.0,
        "measured_bottom_distance": report.measured_bottom_distance,
        "expected_bottom_distance": report.expected_bottom_distance,
        "bottom_deviation": report.bottom_deviation,
        "matches": [
            {"tap": list(m.tap),
             "peak": None if m.peak is None else [m.peak[0], m.peak[1], float(m.peak[2])],
             "distance": m.distance}
            for m in report.matches
        ],
    }


def fit_section(fit: GaussianFit) -> dict:
    return {
        "x_c": fit.x_c,
        "y_c": fit.y_c,
        "sigma_x": fit.sigma_x,
        "sigma_y": fit.sigma_y,
        "amplitude": fit.amplitude,
        "offset": fit.offset,
        "rms_residual": fit.rms_residual,
        "iterations": fit.iterations,
        "converged": fit.converged,
    }


def advisor_section(rep: AdvisorReport) -> dict:
    return {
        "l": rep.l,
        "s": rep.s,
        "alpha": rep.alpha,
        "r_star": rep.r_star,
        "r_rounded": rep.r_rounded,
        "fov_end_to_end": rep.fov_at_rounded,
        "legacy_rate": rep.legacy_rate,
        "rate_evaluated": rep.rate_evaluated,
        "fov_evaluated": rep.fov_evaluated,
        "diagnosis": rep.diagnosis,
        "asymmetric_input": rep.asymmetric_input,
    }


def build_report(command: str, *, spec_digest: str | None = None,
                 files: dict[str, str] | None = None,
                 erf_meta: dict | None = None,
                 star: dict | None = None, peaks: dict | None = None,
                 match: dict | None = None, fit: dict | None = None,
                 advisor: dict | None = None,
                 seeds: dict[str, int] | None = None,
                 warnings: tuple[str, ...] = (),
                 wall_clock_seconds: float = 0.0) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "command": command,
        "spec_digest": spec_digest,
        "files": files or {},
        "erf": erf_meta,
        "star": star,
        "peaks": peaks,
        "match": match,
        "fit": fit,
        "advisor": advisor,
        "seeds": seeds or {},
        "warnings": list(warnings),
        "wall_clock_seconds": wall_clock_seconds,
    }


def report_json(payload: dict) -> str:
    return json.dumps(round_floats(payload), indent=2, sort_keys=True) + "\n"


def write_report(payload: dict, path: str | Path) -> Path:
    return atomic_write_bytes(path, report_json(payload).encode())
