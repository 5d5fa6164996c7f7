"""Command-line interface.

Subcommands: advise (rate arithmetic), erf (gradient accumulation over an
image set), analyze (peak detection and star matching on a saved map),
table (the rate guideline grid), render (re-render heatmaps from a dump).

Exit codes: 0 success; 2 usage or config error; 3 analysis completed but
the star matched below threshold. Output directory defaults to $ERFSCOPE_OUT
when set, else the working directory. All file writes are atomic.
"""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import click

from . import advisor as adv
from . import erf as erfmod
from . import geometry as geo
from . import netspec, report
from .graph import GraphBuildError

ENV_OUT = "ERFSCOPE_OUT"


def _out_dir(out: str | None) -> Path:
    root = Path(out) if out else Path(os.environ.get(ENV_OUT) or ".")
    root.mkdir(parents=True, exist_ok=True)
    return root


def _parse_size(size: str) -> tuple[int, int]:
    parts = size.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise click.UsageError(f"--size expects N or HxW, got {size!r}")
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise click.UsageError(f"--size expects N or HxW, got {size!r}")
    return dims[0], dims[1]


def _echo_report(payload: dict) -> None:
    click.echo(report.report_json(payload), nl=False)


@click.group()
def main():
    """Receptive-field geometry tools for atrous segmentation heads."""


@main.command()
@click.option("--size", required=True, help="Image size: N (square) or HxW.")
@click.option("--stride", required=True, type=int, help="Encoder output stride s.")
@click.option("--rate", type=int, default=None, help="Diagnose this base rate.")
@click.option("--alpha", type=float, default=geo.DEFAULT_ALPHA, show_default=True,
              help="Corner-blob margin in pixels.")
def advise(size, stride, rate, alpha):
    """Recommend the base atrous rate for an image size and stride."""
    h, w = _parse_size(size)
    try:
        rep = adv.advise_for_shape(h, w, stride, rate, alpha)
    except ValueError as e:
        raise click.UsageError(str(e))
    payload = {"schema": report.SCHEMA_VERSION, **report.advisor_section(rep)}
    click.echo(report.report_json(payload), nl=False)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Network description file.")
@click.option("--images", default=16, show_default=True, type=int,
              help="Number of images to accumulate.")
@click.option("--seed", default=7, show_default=True, type=int,
              help="Seed for the synthetic image stream.")
@click.option("--out", default=None, help="Output directory [env ERFSCOPE_OUT].")
@click.option("--image-dir", default=None, type=click.Path(file_okay=False),
              help="Accumulate real PNG/PGM images from this directory instead.")
@click.option("--size", default="768", show_default=True,
              help="Input size: N (square) or HxW.")
@click.option("--gamma", default=0.5, show_default=True, type=float,
              help="Display gamma for the rendered heatmaps.")
def erf(config_path, images, seed, out, image_dir, size, gamma):
    """Accumulate the effective receptive field of a configured network."""
    h, w = _parse_size(size)
    if images < 1:
        raise click.UsageError(f"--images must be >= 1, got {images}")
    try:
        plan = netspec.parse_network_config(config_path)
    except netspec.NetworkConfigError as e:
        raise click.UsageError("invalid network config:\n  " + "\n  ".join(e.errors))
    for warning in plan.warnings:
        click.echo(f"warning: {warning}", err=True)

    started = time.perf_counter()
    try:
        net = netspec.plan_to_graph(plan, h, w)
    except (GraphBuildError, ValueError) as e:
        raise click.ClickException(f"cannot build network at {h}x{w}: {e}")
    center = erfmod.default_center(h, w)
    cfg = erfmod.ErfConfig(center_row=center[0], center_col=center[1],
                           n_images=images, image_seed=seed, image_dir=image_dir)
    try:
        erf_map = erfmod.erf_accumulate(net, cfg)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e))

    out_root = _out_dir(out)
    dump_path = erfmod.dump_erf(erf_map, out_root / "erf.bin")
    png_path, pgm_path = erfmod.render_heatmap(erf_map, gamma, out_root / "erf.png")
    report_path = out_root / "report.json"

    star = None
    if plan.head == "aspp":
        star = report.star_section(
            geo.predict_star(plan.rate, plan.stride, center))
    command = (f"erf --config {config_path} --images {images} --seed {seed} "
               f"--size {h}x{w} --gamma {gamma}")
    payload = report.build_report(
        command,
        spec_digest=netspec.config_digest(config_path),
        files={"erf_dump": str(dump_path), "heatmap_png": str(png_path),
               "heatmap_pgm": str(pgm_path), "report": str(report_path)},
        erf_meta={"height": erf_map.values.shape[0],
                  "width": erf_map.values.shape[1],
                  "center": list(center),
                  "n_accumulated": erf_map.n_accumulated,
                  "image_source": image_dir or "synthetic-noise",
                  "head": plan.head, "rate": plan.rate, "stride": plan.stride,
                  "classes": plan.classes},
        star=star,
        seeds={"weights": plan.seed, "images": seed},
        warnings=plan.warnings,
        wall_clock_seconds=time.perf_counter() - started)
    report.write_report(payload, report_path)
    _echo_report(payload)


@main.command()
@click.option("--erf", "erf_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Raw ERF dump to analyze.")
@click.option("--rate", required=True, type=int, help="Base atrous rate r.")
@click.option("--stride", required=True, type=int, help="Output stride s.")
@click.option("--alpha", default=geo.DEFAULT_ALPHA, show_default=True, type=float)
@click.option("--fit-gaussian", is_flag=True, help="Fit a 2D Gaussian to the map.")
@click.option("--out", default=None, help="Output directory [env ERFSCOPE_OUT].")
@click.option("--match-radius", default=None, type=float,
              help="Tap match radius in pixels [default: stride].")
@click.option("--peak-window", default=8, show_default=True, type=int,
              help="Neighborhood half-width for peak detection.")
@click.option("--peak-threshold", default=0.05, show_default=True, type=float,
              help="Peak floor as a fraction of the global maximum.")
@click.option("--min-match-frac", default=0.8, show_default=True, type=float,
              help="Exit 3 when fewer in-frame taps match.")
def analyze(erf_path, rate, stride, alpha, fit_gaussian, out, match_radius,
            peak_window, peak_threshold, min_match_frac):
    """Detect peaks in a saved ERF and match them to the predicted star."""
    if rate < 1 or stride < 1:
        raise click.UsageError("--rate and --stride must be >= 1")
    started = time.perf_counter()
    try:
        erf_map = erfmod.load_erf(erf_path)
    except (ValueError, OSError) as e:
        raise click.ClickException(f"cannot read ERF dump {erf_path}: {e}")
    h, w = erf_map.values.shape
    center = erfmod.default_center(h, w)
    radius = float(match_radius) if match_radius is not None else float(stride)

    geom = geo.predict_star(rate, stride, center, alpha)
    peaks = geo.detect_peaks(erf_map, window=peak_window,
                             threshold_frac=peak_threshold)
    matched = geo.measure_star(peaks, geom, radius)
    n_in_frame = len(geom.taps_in_frame(h, w))

    fit = None
    if fit_gaussian:
        try:
            fit = report.fit_section(geo.fit_gaussian_2d(erf_map))
        except ValueError as e:
            raise click.ClickException(f"gaussian fit failed: {e}")

    try:
        advisor_rep = adv.advise_for_shape(h, w, stride, rate, alpha)
        advisor_payload = report.advisor_section(advisor_rep)
    except ValueError:
        advisor_payload = None  # map smaller than alpha: no advice possible

    out_root = _out_dir(out)
    report_path = out_root / "report.json"
    match_payload = report.match_section(matched, n_in_frame)
    command = (f"analyze --erf {erf_path} --rate {rate} --stride {stride} "
               f"--alpha {alpha}")
    payload = report.build_report(
        command,
        files={"erf_dump": str(erf_path), "report": str(report_path)},
        erf_meta={"height": h, "width": w, "center": list(center),
                  "n_accumulated": erf_map.n_accumulated or None},
        star=report.star_section(geom),
        peaks=report.peaks_section(peaks),
        match=match_payload,
        fit=fit,
        advisor=advisor_payload,
        wall_clock_seconds=time.perf_counter() - started)
    report.write_report(payload, report_path)
    _echo_report(payload)
    if n_in_frame and match_payload["matched_frac_in_frame"] < min_match_frac:
        sys.exit(3)


@main.command()
def table():
    """Print the rate guideline grid: size, stride, optimal and rounded rate."""
    for row in adv.guideline_table():
        click.echo(f"{row.l} {row.s} {row.r_star:.2f} {row.r_rounded}")


@main.command()
@click.option("--erf", "erf_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Raw ERF dump to render.")
@click.option("--gamma", default=0.5, show_default=True, type=float)
@click.option("--out", default=None, help="Output directory [env ERFSCOPE_OUT].")
def render(erf_path, gamma, out):
    """Re-render heatmap images from a saved ERF dump."""
    try:
        erf_map = erfmod.load_erf(erf_path)
    except (ValueError, OSError) as e:
        raise click.ClickException(f"cannot read ERF dump {erf_path}: {e}")
    out_root = _out_dir(out)
    png_path, pgm_path = erfmod.render_heatmap(erf_map, gamma, out_root / "erf.png")
    click.echo(str(png_path))
    click.echo(str(pgm_path))


if __name__ == "__main__":
    main()
