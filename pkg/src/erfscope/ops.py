"""Forward and input-gradient passes for the layer zoo.

Gradients here are with respect to layer *inputs* only; weights are fixed
at construction and never trained. Every `*_input_grad` returns
d(sum(gy * forward(x)))/dx, i.e. the transpose of the forward map applied
to the upstream gradient. Conventions that matter for reproducibility:

- zero padding only;
- ReLU subgradient at exactly 0 is 0;
- max-pool ties go to the first index in row-major scan order;
- bilinear resize uses half-pixel centers:
  src = (dest + 0.5) * in_size / out_size - 0.5, clamped to the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Kernel, Tensor


@dataclass(frozen=True)
class ConvSpec:
    """Stride / dilation / zero-padding of one convolution."""

    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec: {self}")


def same_padding(kernel_extent: int, dilation: int) -> int:
    """Padding that preserves spatial size for odd kernels at stride 1."""
    return dilation * (kernel_extent - 1) // 2


def conv_output_size(size: int, kernel_extent: int, spec: ConvSpec) -> int:
    span = spec.dilation * (kernel_extent - 1) + 1
    out = (size + 2 * spec.padding - span) // spec.stride + 1
    if out < 1:
        raise ValueError(
            f"kernel span {span} exceeds padded input {size + 2 * spec.padding}")
    return out


def conv2d_forward(x: Tensor, k: Kernel, spec: ConvSpec) -> Tensor:
    """Dilated 2D convolution (cross-correlation tap layout).

    out[oh, ow, o] = bias[o] + sum_{i,j,c} w[i,j,c,o] *
                     x_padded[oh*stride + i*dilation, ow*stride + j*dilation, c]

    Out-of-bounds taps read zero padding.
    """
    if x.channels != k.in_channels:
        raise ValueError(
            f"input has {x.channels} channels, kernel expects {k.in_channels}")
    oh = conv_output_size(x.height, k.kh, spec)
    ow = conv_output_size(x.width, k.kw, spec)
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    acc = np.zeros((oh, ow, k.out_channels))
    for i in range(k.kh):
        for j in range(k.kw):
            patch = xp[i * d: i * d + (oh - 1) * s + 1: s,
                       j * d: j * d + (ow - 1) * s + 1: s, :]
            acc += patch @ k.weights[i, j]
    return Tensor(acc + k.bias)


def conv2d_input_grad(gy: Tensor, k: Kernel, spec: ConvSpec,
                      input_shape: tuple[int, int, int]) -> Tensor:
    """Transposed scatter of gy through the kernel taps."""
    h, w, cin = input_shape
    if cin != k.in_channels:
        raise ValueError(
            f"input shape has {cin} channels, kernel expects {k.in_channels}")
    oh = conv_output_size(h, k.kh, spec)
    ow = conv_output_size(w, k.kw, spec)
    if gy.shape != (oh, ow, k.out_channels):
        raise ValueError(
            f"gy shape {gy.shape} does not match conv output {(oh, ow, k.out_channels)}")
    p, s, d = spec.padding, spec.stride, spec.dilation
    gp = np.zeros((h + 2 * p, w + 2 * p, cin))
    for i in range(k.kh):
        for j in range(k.kw):
            gp[i * d: i * d + (oh - 1) * s + 1: s,
               j * d: j * d + (ow - 1) * s + 1: s, :] += gy.data @ k.weights[i, j].T
    return Tensor(gp[p: p + h, p: p + w, :])


@dataclass(frozen=True)
class MaxPoolContext:
    """Winning in-window flat indices (row-major) per pooled element."""

    argmax: np.ndarray  # (h/2, w/2, c) ints in {0, 1, 2, 3}
    in_shape: tuple[int, int, int]


def maxpool_forward(x: Tensor) -> tuple[Tensor, MaxPoolContext]:
    """2x2 max pooling, stride 2. Requires even spatial dims."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {h}x{w}")
    windows = (x.data.reshape(h // 2, 2, w // 2, 2, c)
               .transpose(0, 2, 4, 1, 3)
               .reshape(h // 2, w // 2, c, 4))
    idx = windows.argmax(axis=3)  # first max wins on ties (scan order)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return Tensor(out), MaxPoolContext(idx, (h, w, c))


def maxpool_input_grad(gy: Tensor, ctx: MaxPoolContext) -> Tensor:
    """Routes each gy element to its recorded argmax position."""
    h, w, c = ctx.in_shape
    if gy.shape != (h // 2, w // 2, c):
        raise ValueError(
            f"gy shape {gy.shape} does not match pooled shape {(h // 2, w // 2, c)}")
    grad = np.zeros((h, w, c))
    oh, ow, ch = np.meshgrid(np.arange(h // 2), np.arange(w // 2), np.arange(c),
                             indexing="ij")
    # 2x2 windows are disjoint, so plain fancy-index assignment is safe
    grad[2 * oh + ctx.argmax // 2, 2 * ow + ctx.argmax % 2, ch] = gy.data
    return Tensor(grad)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bilinear weights, half-pixel convention."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_upsample_forward(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear interpolation to (out_h, out_w); no shrinking."""
    if out_h < x.height or out_w < x.width:
        raise ValueError(
            f"bilinear resize cannot shrink: {x.height}x{x.width} -> {out_h}x{out_w}")
    rmat = _interp_matrix(x.height, out_h)
    cmat = _interp_matrix(x.width, out_w)
    out = np.einsum("ah,hwc->awc", rmat, x.data)
    out = np.einsum("bw,awc->abc", cmat, out)
    return Tensor(out)


def bilinear_upsample_input_grad(gy: Tensor, in_shape: tuple[int, int, int]) -> Tensor:
    """Transpose of the interpolation weights; preserves total mass."""
    h, w, c = in_shape
    if gy.height < h or gy.width < w or gy.channels != c:
        raise ValueError(
            f"gy shape {gy.shape} incompatible with input shape {in_shape}")
    rmat = _interp_matrix(h, gy.height)
    cmat = _interp_matrix(w, gy.width)
    grad = np.einsum("ah,abc->hbc", rmat, gy.data)
    grad = np.einsum("bw,hbc->hwc", cmat, grad)
    return Tensor(grad)


@dataclass(frozen=True)
class ReluContext:
    mask: np.ndarray  # True where x > 0 (strict; subgradient 0 at x == 0)


def relu_forward(x: Tensor) -> tuple[Tensor, ReluContext]:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0)), ReluContext(mask)


def relu_input_grad(gy: Tensor, ctx: ReluContext) -> Tensor:
    if gy.shape != ctx.mask.shape:
        raise ValueError(f"gy shape {gy.shape} does not match mask {ctx.mask.shape}")
    return Tensor(np.where(ctx.mask, gy.data, 0.0))


def global_avgpool_forward(x: Tensor) -> Tensor:
    """Per-channel spatial mean; output is 1x1xC."""
    return Tensor(x.data.mean(axis=(0, 1), keepdims=True))


def global_avgpool_input_grad(gy: Tensor, in_shape: tuple[int, int, int]) -> Tensor:
    """Spreads gy[c] / (h*w) uniformly over the input plane."""
    h, w, c = in_shape
    if gy.shape != (1, 1, c):
        raise ValueError(f"gy shape {gy.shape} does not match (1, 1, {c})")
    return Tensor(np.broadcast_to(gy.data / (h * w), (h, w, c)).copy())
