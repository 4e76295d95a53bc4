"""Self-supervised and distillation loss kernels with analytic gradients.

Every loss returns a :class:`LossValue` whose ``grads`` map input names to
gradients of ``value`` with the input's shape (feature stacks map to lists).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEFAULT_THETA = 0.85
DEFAULT_BETA = 1e-3
DISTILL_EPS = 1e-7


@dataclass
class LossValue:
    value: float
    grads: dict = field(default_factory=dict)
    pixel: np.ndarray | None = None

    def __float__(self):
        return float(self.value)


def _check_same(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} disagree in shape: {np.shape(a)} vs {np.shape(b)}")


def _box3(x):
    """3x3 mean over the first two axes with reflect padding (separable)."""
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (x.ndim - 2)
    p = np.pad(x, pad, mode="reflect")
    h, w = x.shape[:2]
    rows = p[0:h] + p[1 : h + 1] + p[2 : h + 2]
    return (rows[:, 0:w] + rows[:, 1 : w + 1] + rows[:, 2 : w + 2]) / 9.0


def _box3_T(g):
    """Adjoint of :func:`_box3`."""
    h, w = g.shape[:2]
    g = g / 9.0
    cols = np.zeros((h, w + 2) + g.shape[2:])
    cols[:, 0:w] += g
    cols[:, 1 : w + 1] += g
    cols[:, 2 : w + 2] += g
    p = np.zeros((h + 2, w + 2) + g.shape[2:])
    p[0:h] += cols
    p[1 : h + 1] += cols
    p[2 : h + 2] += cols
    # fold the reflected border back onto its sources
    p[2] += p[0]
    p[h - 1] += p[h + 1]
    p[:, 2] += p[:, 0]
    p[:, w - 1] += p[:, w + 1]
    return p[1 : h + 1, 1 : w + 1]


def _ssim_vjp(a, b):
    moments = _box3(np.concatenate([a, b, a * a, b * b, a * b], axis=-1) if a.ndim == 3
                    else np.stack([a, b, a * a, b * b, a * b], axis=-1))
    mx, my, mxx, myy, mxy = np.split(moments, 5, axis=-1) if a.ndim == 3 else np.moveaxis(moments, -1, 0)
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (mxy - mx * my) + SSIM_C2
    b1 = mx**2 + my**2 + SSIM_C1
    b2 = (mxx - mx**2) + (myy - my**2) + SSIM_C2
    den = b1 * b2
    s = a1 * a2 / den

    def vjp(gs):
        d_a1 = gs * a2 / den
        d_a2 = gs * a1 / den
        d_b1 = -gs * s / b1
        d_b2 = -gs * s / b2
        g_mx = 2 * my * (d_a1 - d_a2) + 2 * mx * (d_b1 - d_b2)
        g_my = 2 * mx * (d_a1 - d_a2) + 2 * my * (d_b1 - d_b2)
        if a.ndim == 3:
            t = _box3_T(np.concatenate([g_mx, g_my, d_b2, 2 * d_a2], axis=-1))
            t_mx, t_my, t_sq, t_mxy = np.split(t, 4, axis=-1)
        else:
            t_mx, t_my, t_sq, t_mxy = np.moveaxis(_box3_T(np.stack([g_mx, g_my, d_b2, 2 * d_a2], axis=-1)), -1, 0)
        ga = t_mx + 2 * a * t_sq + b * t_mxy
        gb = t_my + 2 * b * t_sq + a * t_mxy
        return ga, gb

    return s, vjp


def ssim_map(Ia, Ib, return_vjp: bool = False):
    """Per-pixel SSIM over a 3x3 window (reflect padded), per channel."""
    _check_same(Ia, Ib)
    s, vjp = _ssim_vjp(np.asarray(Ia, dtype=float), np.asarray(Ib, dtype=float))
    return (s, vjp) if return_vjp else s


def _as_hwc(x):
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 3 else x[..., None]


def _pe_vjp(Ia, Ib, theta):
    a, b = _as_hwc(Ia), _as_hwc(Ib)
    c = a.shape[2]
    s, ssim_vjp = _ssim_vjp(a, b)
    diff = a - b
    pe = np.mean(theta / 2 * (1 - s) + (1 - theta) * np.abs(diff), axis=2)
    squeeze = np.ndim(Ia) == 2

    def vjp(g):
        gc = g[..., None] / c
        ga_s, gb_s = ssim_vjp(-theta / 2 * gc * np.ones_like(s))
        l1 = (1 - theta) * gc * np.sign(diff)
        ga, gb = ga_s + l1, gb_s - l1
        if squeeze:
            ga, gb = ga[..., 0], gb[..., 0]
        return ga, gb

    return pe, vjp


def photometric_error(Ia, Ib, theta: float = DEFAULT_THETA) -> LossValue:
    """theta/2 (1 - SSIM) + (1 - theta) |Ia - Ib|, channel averaged per pixel."""
    _check_same(Ia, Ib)
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    pe, vjp = _pe_vjp(Ia, Ib, theta)
    ga, gb = vjp(np.full(pe.shape, 1.0 / pe.size))
    return LossValue(float(pe.mean()), {"Ia": ga, "Ib": gb}, pixel=pe)


def photometric_loss(target, views, masks, theta: float = DEFAULT_THETA) -> LossValue:
    """Per-pixel minimum reprojection error over the valid synthesized views.

    Gradients land in ``grads["views"]`` (one per view) and ``grads["target"]``.
    Pixels invalid in every view are dropped from the mean.
    """
    if len(views) == 0:
        raise ValueError("need at least one synthesized view")
    if len(masks) != len(views):
        raise ValueError("one mask per view")
    pes, vjps = [], []
    for view in views:
        _check_same(target, view, "target and view")
        pe, vjp = _pe_vjp(target, view, theta)
        pes.append(pe)
        vjps.append(vjp)
    stack = np.stack(pes)
    valid = np.stack([np.asarray(m, dtype=bool) for m in masks])
    stack = np.where(valid, stack, np.inf)
    best = np.argmin(stack, axis=0)
    any_valid = valid.any(axis=0)
    n = int(any_valid.sum())
    target_grad = np.zeros(np.shape(target))
    view_grads = []
    if n == 0:
        return LossValue(0.0, {"views": [np.zeros(np.shape(v)) for v in views], "target": target_grad},
                         pixel=np.zeros(np.shape(target)[:2]))
    per_pixel = np.where(any_valid, np.take_along_axis(stack, best[None], 0)[0], 0.0)
    for k, vjp in enumerate(vjps):
        g = np.where(any_valid & (best == k), 1.0 / n, 0.0)
        gt, gv = vjp(g)
        target_grad += gt
        view_grads.append(gv)
    return LossValue(float(per_pixel[any_valid].sum() / n),
                     {"views": view_grads, "target": target_grad}, pixel=per_pixel)


def _smoothness_inverse(inv, image):
    img = _as_hwc(image)
    m = inv.mean()
    n = inv / m
    dx = n[:, 1:] - n[:, :-1]
    dy = n[1:, :] - n[:-1, :]
    wx = np.exp(-np.mean(np.abs(img[:, 1:] - img[:, :-1]), axis=2))
    wy = np.exp(-np.mean(np.abs(img[1:, :] - img[:-1, :]), axis=2))
    value = np.mean(np.abs(dx) * wx) + np.mean(np.abs(dy) * wy)
    gx = np.sign(dx) * wx / dx.size
    gy = np.sign(dy) * wy / dy.size
    gn = np.zeros_like(n)
    gn[:, 1:] += gx
    gn[:, :-1] -= gx
    gn[1:, :] += gy
    gn[:-1, :] -= gy
    g_inv = gn / m - np.sum(gn * inv) / (m * m * inv.size)
    return float(value), g_inv


def smoothness_loss(D, image) -> LossValue:
    """Edge-aware smoothness of the mean-normalised inverse depth of ``D``."""
    D = np.asarray(D, dtype=float)
    if np.any(D <= 0):
        raise ValueError("smoothness_loss needs strictly positive depth")
    _check_same(D, np.asarray(image)[..., 0] if np.ndim(image) == 3 else image, "depth and image")
    inv = 1.0 / D
    value, g_inv = _smoothness_inverse(inv, image)
    return LossValue(value, {"D": -g_inv * inv * inv})


def smoothness_loss_inverse(inv_depth, image) -> LossValue:
    """Same as :func:`smoothness_loss` but parameterised by inverse depth."""
    inv = np.asarray(inv_depth, dtype=float)
    if np.any(inv <= 0):
        raise ValueError("inverse depth must be positive")
    value, g_inv = _smoothness_inverse(inv, image)
    return LossValue(value, {"inv_depth": g_inv})


def _check_stacks(A, B):
    if len(A) != len(B) or len(A) == 0:
        raise ValueError(f"feature stacks need equal, nonzero scale counts ({len(A)} vs {len(B)})")
    for a, b in zip(A, B):
        _check_same(a, b, "stack scales")


def distillation_loss(F_T, F_S, eps: float = DISTILL_EPS) -> LossValue:
    """Multi-scale relative L1 between teacher and student stacks."""
    _check_stacks(F_T, F_S)
    S = len(F_S)
    total = 0.0
    g_t, g_s = [], []
    for t, s in zip(F_T, F_S):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        den = s + eps
        diff = t - s
        total += np.mean(np.abs(diff) / den)
        w = 1.0 / (S * s.size)
        sg = np.sign(diff)
        g_t.append(w * sg / den)
        g_s.append(w * (-sg * den - np.abs(diff)) / den**2)
    return LossValue(float(total / S), {"F_T": g_t, "F_S": g_s})


def _stack_l1(A, B):
    _check_stacks(A, B)
    S = len(A)
    value = 0.0
    grads = []
    for a, b in zip(A, B):
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        value += np.mean(np.abs(d))
        grads.append(np.sign(d) / (S * d.size))
    return value / S, grads


def feature_consistency_loss(Fs_h, Fs_e, Ft_e, input_kind: str) -> LossValue:
    """Feature alignment with stop-gradient targets.

    ``Fs_h``: student features on the degraded input, ``Fs_e``: student on the
    clean input, ``Ft_e``: teacher on the clean input. Only the non-target
    argument of each term receives a gradient.
    """
    zeros = lambda stack: [np.zeros(np.shape(x)) for x in stack] if stack is not None else None
    if input_kind == "degraded":
        if Fs_h is None or Fs_e is None:
            raise ValueError("the degraded branch needs both student feature stacks")
        v1, g1 = _stack_l1(Fs_h, Ft_e)
        v2, g2 = _stack_l1(Fs_h, Fs_e)
        grads = {"Fs_h": [a + b for a, b in zip(g1, g2)], "Fs_e": zeros(Fs_e), "Ft_e": zeros(Ft_e)}
        return LossValue(float(v1 + v2), grads)
    if input_kind == "clear":
        if Fs_e is None:
            raise ValueError("the clear branch needs student features on the clean input")
        v, g = _stack_l1(Fs_e, Ft_e)
        return LossValue(float(v), {"Fs_e": g, "Ft_e": zeros(Ft_e)})
    raise ValueError(f"unknown input kind {input_kind!r}")


def _accumulate(parts):
    value = 0.0
    grads = {}
    for weight, loss in parts:
        if isinstance(loss, LossValue):
            value += weight * loss.value
            if weight == 0:
                continue
            for key, g in loss.grads.items():
                if isinstance(g, list):
                    scaled = [weight * x for x in g]
                    if key in grads:
                        grads[key] = [a + b for a, b in zip(grads[key], scaled)]
                    else:
                        grads[key] = scaled
                else:
                    grads[key] = grads[key] + weight * g if key in grads else weight * g
        else:
            value += weight * float(loss)
    return LossValue(float(value), grads)


def total_student_loss(L_d, L_r, L_c, lambda1: float = 0.01, lambda2: float = 0.02) -> LossValue:
    """L_d + lambda1 L_r + lambda2 L_c; components may be floats or LossValues."""
    return _accumulate([(1.0, L_d), (lambda1, L_r), (lambda2, L_c)])


def teacher_loss(L_p, L_e, beta: float = DEFAULT_BETA) -> LossValue:
    return _accumulate([(1.0, L_p), (beta, L_e)])
