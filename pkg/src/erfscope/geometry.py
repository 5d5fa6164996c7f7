"""Star-pattern geometry: analytic prediction, measurement, and Gaussian fits.

A five-branch dilated-pyramid head reads 25 regularly spaced feature
positions: the center plus the 8-neighborhoods of three 3x3 kernels at
dilations {r, 2r, 3r}. At output stride s these land on pixel offsets
{-k*r*s, 0, +k*r*s} for k = 1..3, so the bottom corner-to-corner distance
is 6*r*s pixels and the end-to-end field of view adds a blob margin alpha
(about 32 px). Everything here works in (row, col) pixel coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .erf import ErfMap

DEFAULT_ALPHA = 32.0

# 8-neighborhood of a 3x3 kernel ring, (row, col) unit offsets
_COMPASS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class StarGeometry:
    """The 25 predicted tap coordinates plus characteristic distances."""

    taps: tuple[tuple[int, int], ...]      # center first, then rings k=1..3
    center: tuple[int, int]
    r: int
    s: int
    alpha: float
    center_to_center_bottom: float         # 6*r*s
    end_to_end: float                      # 6*r*s + alpha

    def taps_in_frame(self, height: int, width: int) -> tuple[tuple[int, int], ...]:
        """Taps whose coordinates fall inside a height x width frame."""
        return tuple((row, col) for row, col in self.taps
                     if 0 <= row < height and 0 <= col < width)


def predict_star(r: int, s: int, center: tuple[int, int],
                 alpha: float = DEFAULT_ALPHA) -> StarGeometry:
    """Predict the 25-tap star of a {r, 2r, 3r} pyramid head at stride s."""
    if r < 1 or s < 1:
        raise ValueError(f"rate and stride must be >= 1, got r={r}, s={s}")
    row0, col0 = int(center[0]), int(center[1])
    taps = [(row0, col0)]
    for k in (1, 2, 3):
        radius = k * r * s
        taps.extend((row0 + dr * radius, col0 + dc * radius) for dr, dc in _COMPASS)
    return StarGeometry(tuple(taps), (row0, col0), int(r), int(s), float(alpha),
                        float(6 * r * s), float(6 * r * s + alpha))


def predict_fcn_d6_span(r: int, s: int) -> float:
    """Bottom corner-to-corner span of a stacked two-conv dilated head: 4*r*s px.

    Two 3x3 convs at dilation r compose into a 5x5 tap lattice with
    spacing r, whose extreme columns sit 4r feature units apart.
    """
    if r < 1 or s < 1:
        raise ValueError(f"rate and stride must be >= 1, got r={r}, s={s}")
    return float(4 * r * s)


@dataclass(frozen=True)
class PeakSet:
    """Local maxima found by non-maximum suppression, strongest first."""

    peaks: tuple[tuple[int, int, float], ...]  # (row, col, value)
    window: int
    threshold_frac: float


def detect_peaks(erf: ErfMap, window: int = 8,
                 threshold_frac: float = 0.05) -> PeakSet:
    """Non-maximum suppression over (2*window+1)^2 neighborhoods.

    A pixel is a peak iff it strictly exceeds every neighbor in its window
    and reaches threshold_frac of the global maximum. A constant map
    therefore has no peaks.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not 0 < threshold_frac <= 1:
        raise ValueError(f"threshold_frac must be in (0, 1], got {threshold_frac}")
    values = erf.values
    size = 2 * window + 1
    footprint = np.ones((size, size), dtype=bool)
    footprint[window, window] = False  # exclude self: strict maxima only
    neighbor_max = maximum_filter(values, footprint=footprint,
                                  mode="constant", cval=-np.inf)
    floor = threshold_frac * values.max()
    rows, cols = np.nonzero((values > neighbor_max) & (values >= floor))
    peaks = sorted(((int(r), int(c), float(values[r, c])) for r, c in zip(rows, cols)),
                   key=lambda p: -p[2])
    return PeakSet(tuple(peaks), window, threshold_frac)


@dataclass(frozen=True)
class TapMatch:
    tap: tuple[int, int]
    peak: tuple[int, int, float] | None
    distance: float | None


@dataclass(frozen=True)
class StarMatchReport:
    matches: tuple[TapMatch, ...]
    n_matched: int
    n_taps: int
    match_radius: float
    measured_bottom_distance: float | None  # between matched bottom corner peaks
    expected_bottom_distance: float
    bottom_deviation: float | None


def match_taps(peaks: PeakSet, taps: tuple[tuple[int, int], ...],
               match_radius: float) -> tuple[TapMatch, ...]:
    """Greedy nearest-first assignment of peaks to predicted taps.

    All (tap, peak) pairs within match_radius are sorted by distance and
    claimed in order; each tap and each peak is used at most once.
    """
    pairs = []
    for ti, (tr, tc) in enumerate(taps):
        for pi, (pr, pc, _) in enumerate(peaks.peaks):
            d = math.hypot(tr - pr, tc - pc)
            if d <= match_radius:
                pairs.append((d, ti, pi))
    pairs.sort()
    tap_to_peak: dict[int, int] = {}
    claimed: set[int] = set()
    for d, ti, pi in pairs:
        if ti in tap_to_peak or pi in claimed:
            continue
        tap_to_peak[ti] = pi
        claimed.add(pi)
    matches = []
    for ti, tap in enumerate(taps):
        if ti in tap_to_peak:
            peak = peaks.peaks[tap_to_peak[ti]]
            matches.append(TapMatch(tap, peak,
                                    math.hypot(tap[0] - peak[0], tap[1] - peak[1])))
        else:
            matches.append(TapMatch(tap, None, None))
    return tuple(matches)


def measure_star(peaks: PeakSet, predicted: StarGeometry,
                 match_radius: float) -> StarMatchReport:
    """Match detected peaks against a predicted star and measure its width.

    The measured bottom distance is the Euclidean distance between the
    peaks matched to the bottom-left and bottom-right corner taps (the
    outermost ring); unmatched taps are reported, never fatal.
    """
    matches = match_taps(peaks, predicted.taps, match_radius)
    by_tap = {m.tap: m for m in matches}
    row0, col0 = predicted.center
    reach = 3 * predicted.r * predicted.s
    bl = by_tap.get((row0 + reach, col0 - reach))
    br = by_tap.get((row0 + reach, col0 + reach))
    measured = None
    if bl is not None and br is not None and bl.peak and br.peak:
        measured = math.hypot(bl.peak[0] - br.peak[0], bl.peak[1] - br.peak[1])
    n_matched = sum(1 for m in matches if m.peak is not None)
    deviation = None if measured is None else measured - predicted.center_to_center_bottom
    return StarMatchReport(matches, n_matched, len(predicted.taps),
                           float(match_radius), measured,
                           predicted.center_to_center_bottom, deviation)


@dataclass(frozen=True)
class GaussianFit:
    """Axis-aligned 2D Gaussian plus constant offset, in pixel coordinates.

    x is the column axis, y the row axis (image convention):
    f(x, y) = amplitude * exp(-(x-x_c)^2/(2 sx^2) - (y-y_c)^2/(2 sy^2)) + offset
    """

    x_c: float
    y_c: float
    sigma_x: float
    sigma_y: float
    amplitude: float
    offset: float
    rms_residual: float
    iterations: int
    converged: bool


def _gaussian_model(params: np.ndarray, xgrid: np.ndarray,
                    ygrid: np.ndarray) -> np.ndarray:
    amp, xc, yc, sx, sy, off = params
    sx2 = max(sx * sx, 1e-12)
    sy2 = max(sy * sy, 1e-12)
    return amp * np.exp(-((xgrid - xc) ** 2) / (2 * sx2)
                        - ((ygrid - yc) ** 2) / (2 * sy2)) + off


def _moments_init(values: np.ndarray) -> np.ndarray | None:
    """Initial (amp, x_c, y_c, sx, sy, offset): argmax center, moment widths.

    The argmax pixel stays on the true center even when the blob is
    cropped by the frame edge, where the centroid is pulled inward;
    widths come from second moments, clipped to the frame scale.
    """
    offset = float(values.min())
    w = values - offset
    total = w.sum()
    if total <= 0:
        return None
    span = float(max(values.shape))
    ygrid, xgrid = np.indices(values.shape)
    yc, xc = np.unravel_index(int(np.argmax(values)), values.shape)
    sx = math.sqrt(max(float((w * (xgrid - xc) ** 2).sum() / total), 1e-6))
    sy = math.sqrt(max(float((w * (ygrid - yc) ** 2).sum() / total), 1e-6))
    amp = float(values.max() - offset)
    return np.array([amp, float(xc), float(yc),
                     min(sx, span), min(sy, span), offset])


def fit_gaussian_2d(erf: ErfMap, max_iterations: int = 200) -> GaussianFit:
    """Least-squares Gaussian fit by damped Gauss-Newton.

    Levenberg-Marquardt schedule: moments-based initialization, numeric
    forward-difference Jacobian (step 1e-6 * max(1, |p|)), damping x10 on
    rejected steps and /10 on accepted ones, stopping when the relative
    cost change of an accepted step falls below 1e-10 or the proposed
    step becomes negligible against the parameter vector (the fit is
    already at a minimum, e.g. on noise-free data where no step can
    strictly decrease the cost). Trial steps leaving a generous sanity
    region (centers beyond two frame sizes outside, widths beyond four
    frame sizes) are rejected like cost increases; this keeps noisy
    edge-cropped blobs out of the runaway flat-sheet valley. Degenerate
    data (e.g. a constant map) reports converged=False instead of raising.
    """
    values = erf.values
    if np.count_nonzero(values) < 6:
        raise ValueError("need at least 6 nonzero pixels to fit 6 parameters")
    ygrid, xgrid = np.indices(values.shape)

    params = _moments_init(values)
    if params is None:
        flat = float(values.mean())
        return GaussianFit(x_c=(values.shape[1] - 1) / 2.0,
                           y_c=(values.shape[0] - 1) / 2.0,
                           sigma_x=0.0, sigma_y=0.0, amplitude=0.0, offset=flat,
                           rms_residual=0.0, iterations=0, converged=False)

    def residuals(p: np.ndarray) -> np.ndarray:
        return (_gaussian_model(p, xgrid, ygrid) - values).ravel()

    height, width = values.shape
    span = float(max(height, width))
    data_range = float(values.max() - values.min()) + 1e-12

    def sane(p: np.ndarray) -> bool:
        amp, xc, yc, sx, sy, _ = p
        return (abs(amp) <= 1e3 * data_range
                and -2.0 * width <= xc <= 3.0 * width
                and -2.0 * height <= yc <= 3.0 * height
                and abs(sx) <= 4.0 * span and abs(sy) <= 4.0 * span)

    res = residuals(params)
    cost = float(res @ res)
    lam = 1e-3
    converged = False
    iterations = 0
    jac: np.ndarray | None = None
    while iterations < max_iterations:
        iterations += 1
        if jac is None:
            jac = np.empty((res.size, params.size))
            for k in range(params.size):
                step = 1e-6 * max(1.0, abs(params[k]))
                bumped = params.copy()
                bumped[k] += step
                jac[:, k] = (residuals(bumped) - res) / step
        hess = jac.T @ jac
        grad = jac.T @ res
        damp = np.diag(np.maximum(np.diag(hess), 1e-12))
        try:
            delta = np.linalg.solve(hess + lam * damp, -grad)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if float(np.linalg.norm(delta)) <= 1e-12 * (float(np.linalg.norm(params)) + 1e-12):
            converged = True
            break
        trial = params + delta
        trial_res = residuals(trial)
        trial_cost = float(trial_res @ trial_res)
        if np.isfinite(trial_cost) and trial_cost < cost and sane(trial):
            rel_change = (cost - trial_cost) / max(cost, 1e-300)
            params, res, cost = trial, trial_res, trial_cost
            jac = None
            lam = max(lam / 10.0, 1e-12)
            if rel_change < 1e-10 or cost == 0.0:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e15:
                break

    amp, xc, yc, sx, sy, off = params
    rms = math.sqrt(cost / res.size)
    return GaussianFit(x_c=float(xc), y_c=float(yc),
                       sigma_x=abs(float(sx)), sigma_y=abs(float(sy)),
                       amplitude=float(amp), offset=float(off),
                       rms_residual=rms, iterations=iterations, converged=converged)
