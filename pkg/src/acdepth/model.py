"""Tiny coordinate-conditioned depth network with handwritten backprop.

Each pixel of each pyramid level is fed ``(u / width, v / height)`` plus the
3x3 grayscale patch around it (edge replicated). Two tanh layers follow, and
the head maps to inverse depth through a bounded sigmoid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

N_INPUTS = 11
DEFAULT_HIDDEN = 32
DEFAULT_RANGE = (1.0 / 80.0, 1.0 / 0.1)
MAGIC = b"ACDN"
FORMAT_VERSION = 1
_SIG_EPS = 1e-12


class StaleCacheError(RuntimeError):
    pass


def layer_shapes(hidden: int):
    return [
        ("W1", (N_INPUTS, hidden)),
        ("b1", (hidden,)),
        ("W2", (hidden, hidden)),
        ("b2", (hidden,)),
        ("W3", (hidden, 1)),
        ("b3", (1,)),
    ]


def weight_count(hidden: int) -> int:
    return sum(int(np.prod(s)) for _, s in layer_shapes(hidden))


@dataclass
class DepthNet:
    weights: np.ndarray
    hidden: int = DEFAULT_HIDDEN
    seed: int = 0
    d_min: float = DEFAULT_RANGE[0]
    d_max: float = DEFAULT_RANGE[1]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (weight_count(self.hidden),):
            raise ValueError(f"expected {weight_count(self.hidden)} weights, got {self.weights.shape}")

    def param(self, name: str) -> np.ndarray:
        """View into the flat weight vector."""
        off = 0
        for key, shape in layer_shapes(self.hidden):
            n = int(np.prod(shape))
            if key == name:
                return self.weights[off : off + n].reshape(shape)
            off += n
        raise KeyError(name)

    def copy(self) -> "DepthNet":
        return DepthNet(self.weights.copy(), self.hidden, self.seed, self.d_min, self.d_max)

    def with_weights(self, weights) -> "DepthNet":
        return DepthNet(np.array(weights, dtype=np.float64), self.hidden, self.seed, self.d_min, self.d_max)


def init_weights(seed: int = 0, hidden: int = DEFAULT_HIDDEN, out_bias: float = 0.0,
                 depth_range=DEFAULT_RANGE) -> DepthNet:
    """Glorot-uniform matrices, zero biases except the optional head bias."""
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in layer_shapes(hidden):
        if name.startswith("W"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            parts.append(rng.uniform(-limit, limit, size=shape).ravel())
        else:
            parts.append(np.zeros(shape))
    net = DepthNet(np.concatenate(parts), hidden, seed, *depth_range)
    net.param("b3")[:] = out_bias
    return net


def bias_for_depth(depth: float, depth_range=DEFAULT_RANGE) -> float:
    """Head bias making a zero-activation network predict ``depth`` metres."""
    lo, hi = depth_range
    s = (1.0 / depth - lo) / (hi - lo)
    return float(np.log(s / (1.0 - s)))


def to_gray(image) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    return image.mean(axis=2) if image.ndim == 3 else image


def downsample2(grid) -> np.ndarray:
    """2x2 box filter with stride 2 over the first two axes."""
    g = np.asarray(grid, dtype=float)
    h, w = g.shape[0] // 2 * 2, g.shape[1] // 2 * 2
    g = g[:h, :w]
    return 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])


def pyramid(grid, scales: int):
    levels = [np.asarray(grid, dtype=float)]
    for _ in range(scales - 1):
        levels.append(downsample2(levels[-1]))
    return levels


def pixel_inputs(gray) -> np.ndarray:
    """Per-pixel network inputs, shape (h * w, 11), row-major."""
    h, w = gray.shape
    p = np.pad(gray, 1, mode="edge")
    v, u = np.mgrid[0:h, 0:w]
    cols = [(u / w).ravel(), (v / h).ravel()]
    for dy in range(3):
        for dx in range(3):
            cols.append(p[dy : dy + h, dx : dx + w].ravel())
    return np.stack(cols, axis=1)


@dataclass
class ForwardCache:
    weights: np.ndarray = field(repr=False)
    shapes: list
    inputs: list = field(repr=False)
    h1: list = field(repr=False)
    h2: list = field(repr=False)
    dsig: list = field(repr=False)


def forward(net: DepthNet, image, scales: int = 4):
    """Evaluate every pyramid level; returns (inverse-depth stack, hidden stack, cache)."""
    if scales < 1:
        raise ValueError("need at least one scale")
    h0, w0 = np.shape(image)[:2]
    if min(h0, w0) >> (scales - 1) < 1:
        raise ValueError(f"{h0}x{w0} image is too small for {scales} scales")
    W1, b1 = net.param("W1"), net.param("b1")
    W2, b2 = net.param("W2"), net.param("b2")
    W3, b3 = net.param("W3"), net.param("b3")
    span = net.d_max - net.d_min
    inv_stack, hid_stack = [], []
    cache = ForwardCache(net.weights.copy(), [], [], [], [], [])
    for gray in pyramid(to_gray(image), scales):
        h, w = gray.shape
        x = pixel_inputs(gray)
        a1 = np.tanh(x @ W1 + b1)
        a2 = np.tanh(a1 @ W2 + b2)
        o = (a2 @ W3 + b3)[:, 0]
        s = expit(o)
        clipped = (s < _SIG_EPS) | (s > 1 - _SIG_EPS)
        s = np.clip(s, _SIG_EPS, 1 - _SIG_EPS)
        inv_stack.append((net.d_min + span * s).reshape(h, w))
        hid_stack.append(a2.reshape(h, w, net.hidden))
        cache.shapes.append((h, w))
        cache.inputs.append(x)
        cache.h1.append(a1)
        cache.h2.append(a2)
        cache.dsig.append(np.where(clipped, 0.0, span * s * (1 - s)))
    return inv_stack, hid_stack, cache


def backward(net: DepthNet, cache: ForwardCache, grad_inv=None, grad_hidden=None) -> np.ndarray:
    """Gradient of the weights given upstream gradients on the two stacks.

    Either upstream list may be ``None`` or hold ``None`` entries for scales
    that receive no gradient.
    """
    if not np.array_equal(cache.weights, net.weights):
        raise StaleCacheError("forward cache was computed with different weights")
    W2, W3 = net.param("W2"), net.param("W3")
    gW1 = np.zeros((N_INPUTS, net.hidden))
    gb1 = np.zeros(net.hidden)
    gW2 = np.zeros((net.hidden, net.hidden))
    gb2 = np.zeros(net.hidden)
    gW3 = np.zeros((net.hidden, 1))
    gb3 = np.zeros(1)
    for s, (h, w) in enumerate(cache.shapes):
        gi = grad_inv[s] if grad_inv is not None and s < len(grad_inv) else None
        gh = grad_hidden[s] if grad_hidden is not None and s < len(grad_hidden) else None
        if gi is None and gh is None:
            continue
        a1, a2 = cache.h1[s], cache.h2[s]
        g_a2 = np.zeros_like(a2)
        if gi is not None:
            g_o = np.asarray(gi, dtype=float).reshape(-1) * cache.dsig[s]
            gW3 += a2.T @ g_o[:, None]
            gb3 += g_o.sum()
            g_a2 += g_o[:, None] * W3[:, 0]
        if gh is not None:
            g_a2 += np.asarray(gh, dtype=float).reshape(h * w, net.hidden)
        g_z2 = g_a2 * (1 - a2 * a2)
        gW2 += a1.T @ g_z2
        gb2 += g_z2.sum(axis=0)
        g_z1 = (g_z2 @ W2.T) * (1 - a1 * a1)
        gW1 += cache.inputs[s].T @ g_z1
        gb1 += g_z1.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])


_HEADER = struct.Struct("<4sII4IqddI")


def save_checkpoint(path, net: DepthNet) -> None:
    """Flat little-endian float32 weights behind a fixed header."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, net.hidden, N_INPUTS, net.hidden, net.hidden, 1,
                          int(net.seed), net.d_min, net.d_max, net.weights.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(net.weights.astype("<f4").tobytes())


def load_checkpoint(path) -> DepthNet:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, hidden, n_in, h1, h2, n_out, seed, d_min, d_max, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a depth-net checkpoint")
    if version != FORMAT_VERSION or (n_in, h1, h2, n_out) != (N_INPUTS, hidden, hidden, 1):
        raise ValueError(f"{path}: unsupported layout")
    weights = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    return DepthNet(weights.astype(np.float64), hidden, seed, d_min, d_max)
