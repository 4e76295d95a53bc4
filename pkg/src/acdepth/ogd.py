"""Ordinal guidance: uncertainty regions, ordinal pairs and the ranking loss."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .losses import LossValue

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class SamplingConfig:
    tau: float = 0.15
    local_ratio: float = 0.05
    global_ratio: float = 0.01
    gamma_mode: str = "percentile"  # or "fixed"
    gamma: float = 0.95
    window: int = 5

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for name in ("local_ratio", "global_ratio"):
            r = getattr(self, name)
            if not 0 < r <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.gamma_mode not in ("percentile", "fixed"):
            raise ValueError(f"unknown gamma_mode {self.gamma_mode!r}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd size")


@dataclass
class UncertaintyMask:
    mask: np.ndarray
    gamma: float
    source: np.ndarray

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class OrdinalPair:
    location0: tuple
    location1: tuple
    p0: float
    p1: float
    p0_star: float
    p1_star: float
    label: int
    tag: str
    window: int = 5


def depth_discrepancy(D_T, D_S) -> np.ndarray:
    D_T, D_S = np.asarray(D_T, dtype=float), np.asarray(D_S, dtype=float)
    if D_T.shape != D_S.shape:
        raise ValueError(f"shape mismatch {D_T.shape} vs {D_S.shape}")
    return np.abs(D_T - D_S)


def normalize_discrepancy(D_bar) -> np.ndarray:
    D_bar = np.asarray(D_bar, dtype=float)
    lo, hi = D_bar.min(), D_bar.max()
    if hi == lo:
        return np.zeros_like(D_bar)
    return np.clip((D_bar - lo) / (hi - lo), 0.0, 1.0)


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the ceil(q N)-th smallest value."""
    flat = np.sort(np.asarray(values, dtype=float), axis=None)
    k = max(1, math.ceil(q * flat.size - 1e-12))
    return float(flat[k - 1])


def uncertainty_mask(D_hat, gamma_mode: str = "percentile", gamma: float = 0.95) -> UncertaintyMask:
    """Mark pixels whose normalised discrepancy exceeds the threshold."""
    D_hat = np.asarray(D_hat, dtype=float)
    if gamma_mode == "percentile":
        thr = nearest_rank(D_hat, gamma)
    elif gamma_mode == "fixed":
        thr = float(gamma)
    else:
        raise ValueError(f"unknown gamma_mode {gamma_mode!r}")
    return UncertaintyMask(mask=D_hat > thr, gamma=thr, source=D_hat)


def ordinal_label(p0_star: float, p1_star: float, tau: float = 0.15) -> int:
    if p0_star <= 0 or p1_star <= 0:
        raise ValueError("oracle inverse depths must be positive")
    return int(ordinal_labels(p0_star, p1_star, tau))


def ordinal_labels(p0_star, p1_star, tau: float = 0.15) -> np.ndarray:
    """Vectorised :func:`ordinal_label`."""
    p0_star, p1_star = np.asarray(p0_star, dtype=float), np.asarray(p1_star, dtype=float)
    if np.any(p0_star <= 0) or np.any(p1_star <= 0):
        raise ValueError("oracle inverse depths must be positive")
    # cross-multiplied with both boundaries closed, so swapping the arguments
    # negates the label exactly, including at ratio 1 + tau
    s = 1.0 + tau
    return np.where(p0_star >= s * p1_star, 1, np.where(p1_star >= s * p0_star, -1, 0))


def pair_loss(p0, p1, label):
    """Ranking penalty for one pair; returns ``(loss, dloss/dp0, dloss/dp1)``.

    A nonzero label gets the base-2 logistic loss; label 0 gets the squared
    difference.
    """
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    label = np.asarray(label)
    x = -label * (p0 - p1)
    logistic = np.logaddexp(0.0, x) / LOG2
    # d/dx log2(1 + e^x) = sigmoid(x) / ln 2
    dlog = 0.5 * (1.0 + np.tanh(0.5 * x)) / LOG2
    d = p0 - p1
    loss = np.where(label != 0, logistic, d * d)
    g0 = np.where(label != 0, -label * dlog, 2 * d)
    if loss.ndim == 0:
        return float(loss), float(g0), float(-g0)
    return loss, g0, -g0


def _window_bounds(row, col, shape, size):
    r = size // 2
    h, w = shape
    return max(0, row - r), min(h, row + r + 1), max(0, col - r), min(w, col + r + 1)


def window_average(D, location, size: int = 5) -> float:
    """Mean of the ``size`` x ``size`` neighbourhood clipped to the grid."""
    D = np.asarray(D, dtype=float)
    row, col = location
    if not (0 <= row < D.shape[0] and 0 <= col < D.shape[1]):
        raise IndexError(f"location {location} outside grid {D.shape}")
    r0, r1, c0, c1 = _window_bounds(row, col, D.shape, size)
    return float(D[r0:r1, c0:c1].mean())


def window_mean_map(D, size: int = 5) -> np.ndarray:
    """Clipped window mean at every pixel via a summed-area table."""
    D = np.asarray(D, dtype=float)
    if size == 1:
        return D.copy()
    h, w = D.shape
    sat = np.zeros((h + 1, w + 1))
    sat[1:, 1:] = D.cumsum(0).cumsum(1)
    r = size // 2
    rows, cols = np.arange(h), np.arange(w)
    r0, r1 = np.maximum(rows - r, 0), np.minimum(rows + r + 1, h)
    c0, c1 = np.maximum(cols - r, 0), np.minimum(cols + r + 1, w)
    total = sat[r1][:, c1] - sat[r0][:, c1] - sat[r1][:, c0] + sat[r0][:, c0]
    count = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return total / count


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_pairs(U, D_S, D_v, cfg: SamplingConfig = SamplingConfig(), rng_seed=0):
    """Draw local pairs (U vs not-U) and global pairs (anywhere).

    Locations depend only on ``U``, the grid size, the ratios and the seed,
    never on ``cfg.window``. Returns ``(Z_l, Z_g)``.
    """
    U = np.asarray(U.mask if isinstance(U, UncertaintyMask) else U, dtype=bool)
    D_S, D_v = np.asarray(D_S, dtype=float), np.asarray(D_v, dtype=float)
    if not (U.shape == D_S.shape == D_v.shape):
        raise ValueError("mask, student and oracle grids must share a shape")
    if np.any(D_v <= 0):
        raise ValueError("oracle inverse depth must be positive")
    rng = np.random.default_rng(rng_seed)
    flat_u = np.flatnonzero(U)
    flat_not = np.flatnonzero(~U)
    n_local = _round_half_up(cfg.local_ratio * flat_u.size)
    n_global = _round_half_up(cfg.global_ratio * U.size)
    # always consume the generator the same way
    li0 = rng.integers(0, max(flat_u.size, 1), size=n_local)
    li1 = rng.integers(0, max(flat_not.size, 1), size=n_local)
    gi = rng.integers(0, U.size, size=(2, n_global))
    if flat_u.size == 0 or flat_not.size == 0:
        local = (np.empty(0, np.intp), np.empty(0, np.intp))
    else:
        local = (flat_u[li0], flat_not[li1])
    glob = (gi[0], gi[1])

    ms = window_mean_map(D_S, cfg.window)
    mv = window_mean_map(D_v, cfg.window)
    w = D_S.shape[1]

    def build(idx0, idx1, tag):
        p0s, p1s = mv.flat[idx0], mv.flat[idx1]
        labels = ordinal_labels(p0s, p1s, cfg.tau)
        p0, p1 = ms.flat[idx0], ms.flat[idx1]
        return [
            OrdinalPair(
                location0=(int(a // w), int(a % w)),
                location1=(int(b // w), int(b % w)),
                p0=float(x0), p1=float(x1),
                p0_star=float(y0), p1_star=float(y1),
                label=int(lab), tag=tag, window=cfg.window,
            )
            for a, b, x0, x1, y0, y1, lab in zip(idx0, idx1, p0, p1, p0s, p1s, labels)
        ]

    return build(*local, "local"), build(*glob, "global")


def _scatter_windows(grad, locations, weights, size):
    """Add ``weight / count`` over each clipped window (difference-array trick)."""
    h, w = grad.shape
    diff = np.zeros((h + 1, w + 1))
    for (row, col), g in zip(locations, weights):
        r0, r1, c0, c1 = _window_bounds(row, col, (h, w), size)
        v = g / ((r1 - r0) * (c1 - c0))
        diff[r0, c0] += v
        diff[r0, c1] -= v
        diff[r1, c0] -= v
        diff[r1, c1] += v
    grad += diff.cumsum(0).cumsum(1)[:h, :w]


def ranking_loss(Z_l, Z_g, shape=None) -> LossValue:
    """Mean pair loss over the global set plus mean over the local set.

    With ``shape`` given, ``grads["D_S"]`` holds the gradient with respect to
    the student inverse-depth grid the pairs were drawn from.
    """
    value = 0.0
    grad = np.zeros(shape) if shape is not None else None
    for pairs in (Z_g, Z_l):
        if not pairs:
            continue
        p0 = np.array([p.p0 for p in pairs])
        p1 = np.array([p.p1 for p in pairs])
        lab = np.array([p.label for p in pairs])
        loss, g0, g1 = pair_loss(p0, p1, lab)
        n = len(pairs)
        value += float(np.sum(loss) / n)
        if grad is not None:
            size = pairs[0].window
            _scatter_windows(grad, [p.location0 for p in pairs], g0 / n, size)
            _scatter_windows(grad, [p.location1 for p in pairs], g1 / n, size)
    grads = {"D_S": grad} if grad is not None else {}
    return LossValue(value, grads)


PAIR_COLUMNS = ["location0", "location1", "p0", "p1", "p0_star", "p1_star", "label", "tag"]


def dump_pairs(path, pairs) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIR_COLUMNS)
        for p in pairs:
            writer.writerow([
                f"{p.location0[0]}:{p.location0[1]}",
                f"{p.location1[0]}:{p.location1[1]}",
                repr(p.p0), repr(p.p1), repr(p.p0_star), repr(p.p1_star), p.label, p.tag,
            ])
