"""Effective receptive fields of the central output unit.

The pipeline: seed the summed-over-classes central output unit with ones,
backpropagate to the input image, sum the gradient over image channels,
rectify, and accumulate over an image set:

    R = sum over images of ReLU(sum_c dY/dI),  Y = sum_k y_hat[center_r, center_c, k]

Accumulation order is fixed (image index ascending) so repeated runs are
bit-identical. Synthetic uniform-noise images are the default image set;
a directory of real 8-bit images can be supplied instead.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.image as mpimage
from PIL import Image

from .graph import NetworkGraph, _child_seed
from .ioutil import atomic_write_bytes
from .tensor import Tensor, dump_raw, load_raw, random_uniform, reduce_channels_sum

IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True)
class ErfConfig:
    """Where to seed and what image set to accumulate over.

    ``image_dir=None`` selects synthetic uniform noise in [-1, 1]; image i
    is drawn from a per-index child stream of ``image_seed``, so the set is
    a pure function of (shape, image_seed, n_images).
    """

    center_row: int
    center_col: int
    n_images: int = 16
    image_seed: int = 7
    image_dir: str | None = None

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError(f"need at least one image, got {self.n_images}")
        if self.center_row < 0 or self.center_col < 0:
            raise ValueError("center coordinates must be nonnegative")


@dataclass(frozen=True)
class ErfMap:
    """Nonnegative accumulation of rectified input gradients."""

    values: np.ndarray  # (h, w)
    n_accumulated: int = 0

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"ERF map must be 2D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("ERF map must be nonempty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ERF map contains non-finite values")
        if arr.min() < 0:
            raise ValueError("ERF map values must be nonnegative")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def default_center(height: int, width: int) -> tuple[int, int]:
    """Center convention: row (h-1)//2, column w//2.

    For a 768x768 frame this is (383, 384); documented so measured and
    predicted geometry always reference the same pixel.
    """
    if height < 1 or width < 1:
        raise ValueError(f"dimensions must be >= 1, got {height}x{width}")
    return (height - 1) // 2, width // 2


def central_seed(height: int, width: int, n_classes: int,
                 center: tuple[int, int]) -> Tensor:
    """Output-shaped tensor with 1 at (center_row, center_col, k) for every class k.

    Backpropagating this seed yields exactly the gradient of the
    class-summed central output unit.
    """
    row, col = center
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f"center {center} out of bounds for {height}x{width}")
    seed = np.zeros((height, width, n_classes))
    seed[row, col, :] = 1.0
    return Tensor(seed)


def erf_single(net: NetworkGraph, image: Tensor, config: ErfConfig) -> Tensor:
    """Channel-summed input gradient G for one image (not yet rectified)."""
    oh, ow, nc = net.output_shape
    seed = central_seed(oh, ow, nc, (config.center_row, config.center_col))
    return reduce_channels_sum(net.grad_wrt_input(image, seed))


def _synthetic_image(net: NetworkGraph, config: ErfConfig, index: int) -> Tensor:
    h, w, c = net.input_shape
    return random_uniform(h, w, c, _child_seed(config.image_seed, index), 1.0)


def load_image(path: str | Path, expect_shape: tuple[int, int, int]) -> Tensor:
    """Read an 8-bit PNG/PGM image as reals in [0, 1]; shape must match the net."""
    h, w, c = expect_shape
    with Image.open(path) as img:
        if img.mode == "RGBA":
            img = img.convert("RGB")
        if img.mode not in ("L", "RGB"):
            raise ValueError(f"image {path} has unsupported mode {img.mode!r}; "
                             "only 8-bit grayscale or RGB is accepted")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape != (h, w, c):
        raise ValueError(
            f"image {path} has shape {arr.shape}, network expects {(h, w, c)}")
    return Tensor(arr)


def _directory_images(net: NetworkGraph, config: ErfConfig) -> list[Path]:
    root = Path(config.image_dir)
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
    if not files:
        raise ValueError(f"no PNG/PGM images found in {root}")
    return files[:config.n_images]


def erf_accumulate(net: NetworkGraph, config: ErfConfig) -> ErfMap:
    """Accumulate R = sum_i ReLU(G_i) over the image set, index ascending."""
    oh, ow, _ = net.output_shape
    if not (0 <= config.center_row < oh and 0 <= config.center_col < ow):
        raise ValueError(
            f"center ({config.center_row}, {config.center_col}) out of bounds "
            f"for output {oh}x{ow}")
    if config.image_dir is not None:
        images = _directory_images(net, config)
        n = len(images)
    else:
        images, n = None, config.n_images
    acc = np.zeros((oh, ow))
    for i in range(n):
        image = (load_image(images[i], net.input_shape) if images is not None
                 else _synthetic_image(net, config, i))
        g = erf_single(net, image, config).data[:, :, 0]
        acc += np.maximum(g, 0.0)
    return ErfMap(acc, n_accumulated=n)


def dump_erf(erf: ErfMap, path: str | Path) -> Path:
    """Raw binary dump: same layout as a channels=1 tensor dump."""
    return atomic_write_bytes(path, dump_raw(Tensor(erf.values[:, :, None])))


def load_erf(path: str | Path) -> ErfMap:
    t = load_raw(Path(path).read_bytes())
    if t.channels != 1:
        raise ValueError(f"ERF dump must have 1 channel, found {t.channels}")
    return ErfMap(t.data[:, :, 0])


def _normalized(erf: ErfMap, gamma: float) -> np.ndarray:
    peak = erf.values.max()
    norm = erf.values / peak if peak > 0 else np.zeros_like(erf.values)
    return norm ** gamma


def render_heatmap(erf: ErfMap, gamma: float = 0.5,
                   out_path: str | Path = "erf.png") -> tuple[Path, Path]:
    """Write a viridis-colormapped PNG and a grayscale PGM next to it.

    The map is normalized to [0, 1] by its maximum, then gamma-shaped
    (default 0.5 lifts the faint outer structure). The PGM holds the
    8-bit quantization of the same normalized map. Returns (png, pgm).
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    shaped = _normalized(erf, gamma)
    png_path = Path(out_path)
    buf = io.BytesIO()
    mpimage.imsave(buf, shaped, cmap="viridis", vmin=0.0, vmax=1.0, format="png")
    atomic_write_bytes(png_path, buf.getvalue())
    pgm_path = png_path.with_suffix(".pgm")
    quantized = np.round(shaped * 255.0).astype(np.uint8)
    header = f"P5\n{erf.width} {erf.height}\n255\n".encode("ascii")
    atomic_write_bytes(pgm_path, header + quantized.tobytes())
    return png_path, pgm_path


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit PGM (P5) into a (h, w) uint8 array."""
    blob = Path(path).read_bytes()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", blob)
    if not match:
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    w, h = int(match.group(1)), int(match.group(2))
    data = blob[match.end():]
    if len(data) != w * h:
        raise ValueError(f"PGM payload length {len(data)} != {w}*{h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
