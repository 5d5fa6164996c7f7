"""Shared fixtures and independent oracles.

The oracles here are deliberately dumb: quadruple-loop convolution,
elementwise finite differences, windowed maxima. Production code is
checked against these, never against itself.
"""

from __future__ import annotations

import numpy as np
import pytest

from erfscope.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# =========================================================================
# Reference implementations
# =========================================================================

def brute_conv(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
               stride: int = 1, dilation: int = 1, padding: int = 0) -> np.ndarray:
    """Quadruple-loop 2D convolution; the slow reference for conv2d_forward."""
    kh, kw, cin, cout = weights.shape
    h, w, _ = x.shape
    xp = np.zeros((h + 2 * padding, w + 2 * padding, cin))
    xp[padding:padding + h, padding:padding + w] = x
    span_h = dilation * (kh - 1) + 1
    span_w = dilation * (kw - 1) + 1
    oh = (xp.shape[0] - span_h) // stride + 1
    ow = (xp.shape[1] - span_w) // stride + 1
    out = np.zeros((oh, ow, cout))
    for oi in range(oh):
        for oj in range(ow):
            for ki in range(kh):
                for kj in range(kw):
                    pi = oi * stride + ki * dilation
                    pj = oj * stride + kj * dilation
                    out[oi, oj] += xp[pi, pj] @ weights[ki, kj]
    return out + bias


def brute_maxpool(x: np.ndarray) -> np.ndarray:
    """Windowed 2x2 maximum, loops only."""
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c))
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                out[i, j, ch] = x[2 * i:2 * i + 2, 2 * j:2 * j + 2, ch].max()
    return out


def fd_gradient(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Full central-difference gradient of a scalar function of an array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Worst elementwise relative error with a scale floor.

    The floor turns the comparison absolute for entries much smaller than
    the typical magnitude, where finite-difference roundoff dominates.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def probe_graph_gradient(net, x: np.ndarray, seed_t: Tensor, n_probes: int,
                         rng: np.random.Generator, eps: float = 1e-4):
    """Spot-check grad_wrt_input against central differences.

    The network is piecewise affine, so away from ReLU/maxpool kinks the
    central difference is exact up to roundoff. A probe whose forward and
    backward one-sided differences disagree straddles a kink inside
    (x-eps, x+eps); those are tie points and are excluded. Returns
    (n_checked, n_excluded, worst_rel_err).
    """
    g = net.grad_wrt_input(Tensor(x), seed_t).data
    gmax = max(float(np.abs(g).max()), 1e-12)

    def f(arr):
        return float(np.sum(net.forward(Tensor(arr)).data * seed_t.data))

    f0 = f(x)
    checked = excluded = 0
    worst = 0.0
    for _ in range(n_probes):
        idx = tuple(int(rng.integers(d)) for d in x.shape)
        xp = x.copy()
        xm = x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        fp, fm = f(xp), f(xm)
        fwd = (fp - f0) / eps
        bwd = (f0 - fm) / eps
        if abs(fwd - bwd) > 1e-6 * max(abs(fwd), abs(bwd), 1e-3 * gmax):
            excluded += 1
            continue
        fd = (fp - fm) / (2 * eps)
        rel = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-3 * max(gmax, 1.0))
        worst = max(worst, rel)
        checked += 1
    return checked, excluded, worst


# =========================================================================
# Structured random inputs
# =========================================================================

def pool_safe_input(rng: np.random.Generator, h: int, w: int, c: int) -> np.ndarray:
    """Input whose 2x2 pooling windows have distinct entries (gap >= 0.1),
    with the window winner position randomized."""
    base = rng.uniform(-1.0, 1.0, (h // 2, w // 2, c))
    out = np.repeat(np.repeat(base, 2, axis=0), 2, axis=1)
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                perm = rng.permutation(4).astype(float) * 0.1
                out[2 * i:2 * i + 2, 2 * j:2 * j + 2, ch] += perm.reshape(2, 2)
    return out


def relu_safe_input(rng: np.random.Generator, shape) -> np.ndarray:
    """Values bounded away from the ReLU kink: |x| in [0.1, 1]."""
    return rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def plant_gaussians(h: int, w: int, centers, sigma: float,
                    amplitudes=None) -> np.ndarray:
    """Sum of isotropic Gaussian blobs at the given (row, col) centers."""
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    out = np.zeros((h, w))
    if amplitudes is None:
        amplitudes = [1.0] * len(centers)
    for (r, c), a in zip(centers, amplitudes):
        out += a * np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2.0 * sigma * sigma))
    return out
