"""Dense (height, width, channels) real arrays with deterministic construction.

Everything downstream (layer ops, network graphs, receptive-field maps)
is built on these two containers. Layout is fixed: row-major (h, w, c),
float64. Random values come from numpy's PCG64 generator, which is
seedable and platform-independent, so identical arguments always produce
bitwise-identical tensors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_DUMP_HEADER = struct.Struct("<iii")  # height, width, channels (little-endian int32)


def _check_dims(*dims: int) -> None:
    for d in dims:
        if int(d) < 1:
            raise ValueError(f"dimensions must be >= 1, got {dims}")


def _uniform_values(shape: tuple[int, ...], seed: int, scale: float) -> np.ndarray:
    """Uniform draws in [-scale, scale], C-order, from PCG64(seed)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-scale, scale, size=shape)


@dataclass(frozen=True)
class Tensor:
    """Immutable dense array of shape (height, width, channels), float64.

    Construction is zero-copy when the input is already float64 and
    contiguous: the array is frozen in place (writeable flag cleared), so
    later writes through the caller's reference raise instead of silently
    mutating the tensor. Pass ``arr.copy()`` to keep a writable original.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"tensor data must be rank 3 (h, w, c), got shape {arr.shape}")
        _check_dims(*arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Kernel:
    """Convolution weights of shape (kh, kw, in_channels, out_channels) plus bias.

    Kernel extents must be odd so a centered tap layout exists.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4:
            raise ValueError(f"kernel weights must be rank 4 (kh, kw, cin, cout), got {w.shape}")
        kh, kw, _, cout = w.shape
        _check_dims(*w.shape)
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
        b = np.asarray(self.bias, dtype=np.float64)
        if b.shape != (cout,):
            raise ValueError(f"bias must have shape ({cout},), got {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("kernel contains non-finite values")
        w = np.ascontiguousarray(w)
        b = np.ascontiguousarray(b)
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def kh(self) -> int:
        return self.weights.shape[0]

    @property
    def kw(self) -> int:
        return self.weights.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    @staticmethod
    def random(kh: int, kw: int, in_channels: int, out_channels: int,
               seed: int, scale: float) -> "Kernel":
        """Kernel with uniform [-scale, scale] weights from PCG64(seed), zero bias."""
        w = _uniform_values((kh, kw, in_channels, out_channels), seed, scale)
        return Kernel(w, np.zeros(out_channels))


def filled(height: int, width: int, channels: int, value: float) -> Tensor:
    """Constant tensor; every element equals ``value``."""
    _check_dims(height, width, channels)
    return Tensor(np.full((height, width, channels), float(value)))


def random_uniform(height: int, width: int, channels: int, seed: int,
                   scale: float = 1.0) -> Tensor:
    """Deterministic uniform noise in [-scale, scale].

    A pure function of its arguments: same (h, w, c, seed, scale) gives a
    bitwise-identical tensor on every platform (PCG64 stream, C-order fill).
    """
    _check_dims(height, width, channels)
    return Tensor(_uniform_values((height, width, channels), seed, scale))


def reduce_channels_sum(t: Tensor) -> Tensor:
    """Sum over the channel axis; result has channels=1."""
    return Tensor(t.data.sum(axis=2, keepdims=True))


def dump_raw(t: Tensor) -> bytes:
    """Serialize: three little-endian int32 dims, then float64 LE values in (h, w, c) order."""
    return _DUMP_HEADER.pack(t.height, t.width, t.channels) + t.data.astype("<f8").tobytes()


def load_raw(blob: bytes) -> Tensor:
    """Inverse of :func:`dump_raw`."""
    if len(blob) < _DUMP_HEADER.size:
        raise ValueError("truncated tensor dump: missing header")
    h, w, c = _DUMP_HEADER.unpack_from(blob)
    _check_dims(h, w, c)
    expected = _DUMP_HEADER.size + h * w * c * 8
    if len(blob) != expected:
        raise ValueError(f"tensor dump length {len(blob)} does not match header ({expected} expected)")
    values = np.frombuffer(blob, dtype="<f8", offset=_DUMP_HEADER.size)
    return Tensor(values.reshape(h, w, c))
