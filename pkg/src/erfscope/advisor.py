"""Atrous-rate selection: the legacy stride rule, the size-matched optimum,
and the field-of-view diagnosis.

The head's end-to-end field of view is 6*r*s + alpha pixels. Matching it
to the training crop size l gives the optimal base rate

    r* = (l - alpha) / (6 * s)

which is the actionable knob: larger crops want larger rates, higher
strides want smaller ones. The widely copied legacy rule (r=6 at s=16,
r=12 at s=8) fixes the field of view at 576 + alpha regardless of l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import DEFAULT_ALPHA

MATCHED = "matched"
INVALID_KERNEL = "invalid-kernel-region"
UNDER_COVERAGE = "under-coverage"

# (image size l, output stride s) pairs of the published guideline table
GUIDELINE_PAIRS = tuple(
    (l, s)
    for s in (16, 8)
    for l in (128, 256, 320, 512, 640, 768, 769, 832, 896, 1024)
)


def legacy_rate(s: int) -> int:
    """The fixed legacy rule: 6 at stride 16, 12 at stride 8; nothing else."""
    if s == 16:
        return 6
    if s == 8:
        return 12
    raise ValueError(f"legacy rule is defined only for strides 8 and 16, got {s}")


def optimal_rate(l: int, s: int, alpha: float = DEFAULT_ALPHA) -> float:
    """Base rate whose end-to-end field of view equals the image size l."""
    if s < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    if l <= alpha:
        raise ValueError(f"image size {l} must exceed the blob margin alpha={alpha}")
    return (l - alpha) / (6.0 * s)


def round_rate(r_star: float) -> int:
    """Nearest integer, half-way rounding up, floored at 1."""
    return max(1, math.floor(r_star + 0.5))


def fov_end_to_end(r: int, s: int, alpha: float = DEFAULT_ALPHA) -> float:
    return 6.0 * r * s + alpha


def validate_config(l: int, s: int, r: int, alpha: float = DEFAULT_ALPHA) -> str:
    """Compare the field of view at rate r against the image size.

    FOV > l: outer kernel taps land in zero padding (degenerate 1x1 behavior);
    FOV < l: the head cannot see the whole image; FOV == l: matched.
    """
    if l < 1 or s < 1 or r < 1:
        raise ValueError(f"l, s, r must all be positive, got {(l, s, r)}")
    fov = fov_end_to_end(r, s, alpha)
    if fov > l:
        return INVALID_KERNEL
    if fov < l:
        return UNDER_COVERAGE
    return MATCHED


@dataclass(frozen=True)
class GuidelineRow:
    l: int
    s: int
    r_star: float
    r_rounded: int


def guideline_table(pairs=GUIDELINE_PAIRS, alpha: float = DEFAULT_ALPHA) -> list[GuidelineRow]:
    """Optimal rates for a list of (image size, stride) pairs."""
    return [GuidelineRow(l, s, optimal_rate(l, s, alpha),
                         round_rate(optimal_rate(l, s, alpha)))
            for l, s in pairs]


@dataclass(frozen=True)
class AdvisorReport:
    """Everything a practitioner needs to pick (and sanity-check) a rate."""

    l: int
    s: int
    alpha: float
    r_star: float
    r_rounded: int
    fov_at_rounded: float
    legacy_rate: int | None
    rate_evaluated: int           # the rate the diagnosis refers to
    fov_evaluated: float
    diagnosis: str
    asymmetric_input: bool = False  # l taken as min(h, w) of a non-square input


def advise(l: int, s: int, rate: int | None = None,
           alpha: float = DEFAULT_ALPHA) -> AdvisorReport:
    """Full recommendation for a square crop of side l at stride s.

    When ``rate`` is given the diagnosis judges that rate; otherwise it
    judges the rounded optimum (which can still be off by rounding slack).
    """
    r_star = optimal_rate(l, s, alpha)
    r_rounded = round_rate(r_star)
    evaluated = rate if rate is not None else r_rounded
    if evaluated < 1:
        raise ValueError(f"rate must be >= 1, got {evaluated}")
    try:
        legacy = legacy_rate(s)
    except ValueError:
        legacy = None
    return AdvisorReport(
        l=int(l), s=int(s), alpha=float(alpha),
        r_star=r_star, r_rounded=r_rounded,
        fov_at_rounded=fov_end_to_end(r_rounded, s, alpha),
        legacy_rate=legacy,
        rate_evaluated=int(evaluated),
        fov_evaluated=fov_end_to_end(evaluated, s, alpha),
        diagnosis=validate_config(l, s, evaluated, alpha),
    )


def advise_for_shape(height: int, width: int, s: int, rate: int | None = None,
                     alpha: float = DEFAULT_ALPHA) -> AdvisorReport:
    """Rectangular inputs: the star must fit the shorter side, so l = min(h, w)."""
    report = advise(min(height, width), s, rate, alpha)
    if height != width:
        report = AdvisorReport(**{**report.__dict__, "asymmetric_input": True})
    return report
