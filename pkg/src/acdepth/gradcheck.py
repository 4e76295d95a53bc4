"""Analytic-vs-central-difference checks for every differentiable path.

Each check builds a seeded instance (8x8 by default) and returns the analytic
and numerical gradients over the entries it covers. The relative error is
``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses, model, ogd
from .geometry import CameraIntrinsics, RigidPose, synthesize_view

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    path: str
    rel_error: float
    entries: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < TOLERANCE)


def rel_error(a, n) -> float:
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def central_diff(f, x, h, index=None):
    """Central differences of scalar ``f`` at each entry of ``x`` (or ``index``)."""
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def _camera(size):
    f = 1.2 * size
    return CameraIntrinsics(f, f, (size - 1) / 2, (size - 1) / 2, size, size)


def _warp_instance(rng, size):
    K = _camera(size)
    depth = rng.uniform(4.0, 8.0, size=(size, size))
    src = rng.uniform(0.1, 0.9, size=(size, size, 3))
    pose = RigidPose(tuple(rng.normal(0, 0.01, 3)), (0.15, -0.05, 0.02))
    return K, depth, src, pose


def _interior(coords, margin=1e-2):
    fu = coords.u - np.floor(coords.u)
    fv = coords.v - np.floor(coords.v)
    away = lambda f: (f > margin) & (f < 1 - margin)
    return coords.valid & away(fu) & away(fv)


def check_warp_depth(rng, size):
    K, depth, src, pose = _warp_instance(rng, size)
    g = rng.normal(size=src.shape)
    view = synthesize_view(src, depth, pose, K)
    analytic, _ = view.backward(g)
    h = 1e-4
    # each output pixel depends only on its own depth, so perturb all at once
    plus = synthesize_view(src, depth + h, pose, K).image
    minus = synthesize_view(src, depth - h, pose, K).image
    numeric = np.sum(g * (plus - minus), axis=-1) / (2 * h)
    keep = _interior(view.coords)
    return analytic[keep], numeric[keep]


def check_warp_pose(rng, size):
    K, depth, src, pose = _warp_instance(rng, size)
    g = rng.normal(size=src.shape)
    view = synthesize_view(src, depth, pose, K)
    keep = _interior(view.coords, margin=0.05)
    g = g * keep[..., None]
    _, analytic = view.backward(g)
    f = lambda vec: float(np.sum(g * synthesize_view(src, depth, RigidPose.from_vector(vec), K).image))
    return analytic, central_diff(f, pose.vector, 1e-6)


def check_ssim(rng, size):
    a = rng.uniform(0.05, 0.95, size=(size, size))
    b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
    g = rng.normal(size=a.shape)
    _, vjp = losses.ssim_map(a, b, return_vjp=True)
    ga, gb = vjp(g)
    fa = lambda x: float(np.sum(g * losses.ssim_map(x, b)))
    fb = lambda x: float(np.sum(g * losses.ssim_map(a, x)))
    return np.concatenate([ga.ravel(), gb.ravel()]), np.concatenate(
        [central_diff(fa, a, 1e-5), central_diff(fb, b, 1e-5)])


def check_photometric(rng, size):
    target = rng.uniform(0.05, 0.95, size=(size, size, 3))
    views = [np.clip(target + rng.normal(0, 0.15, size=target.shape), 0, 1) for _ in range(2)]
    masks = [rng.random((size, size)) > 0.2 for _ in range(2)]
    res = losses.photometric_loss(target, views, masks)
    f0 = lambda x: losses.photometric_loss(target, [x, views[1]], masks).value
    f1 = lambda x: losses.photometric_loss(target, [views[0], x], masks).value
    ft = lambda x: losses.photometric_loss(x, views, masks).value
    analytic = np.concatenate([res.grads["views"][0].ravel(), res.grads["views"][1].ravel(),
                               res.grads["target"].ravel()])
    numeric = np.concatenate([central_diff(f0, views[0], 1e-5), central_diff(f1, views[1], 1e-5),
                              central_diff(ft, target, 1e-5)])
    return analytic, numeric


def check_photometric_depth(rng, size):
    """Photometric loss chained through view synthesis to depth and pose."""
    K, depth, src, pose = _warp_instance(rng, size)
    target = np.clip(src + rng.normal(0, 0.05, size=src.shape), 0, 1)

    def loss(d, p):
        view = synthesize_view(src, d, p, K)
        return losses.photometric_loss(target, [view.image], [view.mask]), view

    res, view = loss(depth, pose)
    gd, gp = view.backward(res.grads["views"][0])
    keep = np.flatnonzero(_interior(view.coords, margin=0.05))
    nd = central_diff(lambda d: loss(d, pose)[0].value, depth, 1e-5, index=keep)
    return gd.ravel()[keep], nd


def check_smoothness(rng, size):
    depth = rng.uniform(2.0, 10.0, size=(size, size))
    image = rng.uniform(0, 1, size=(size, size, 3))
    res = losses.smoothness_loss(depth, image)
    f = lambda d: losses.smoothness_loss(d, image).value
    return res.grads["D"], central_diff(f, depth, 1e-5)


def _stack(rng, size, scales, lo=0.05, hi=1.0):
    return [rng.uniform(lo, hi, size=(size >> s, size >> s)) for s in range(scales)]


def check_distillation(rng, size):
    F_T, F_S = _stack(rng, size, 3), _stack(rng, size, 3)
    res = losses.distillation_loss(F_T, F_S)
    flat_s = np.concatenate([x.ravel() for x in F_S])
    flat_t = np.concatenate([x.ravel() for x in F_T])
    shapes = [x.shape for x in F_S]

    def unflat(v):
        out, off = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(v[off : off + n].reshape(s))
            off += n
        return out

    fs = lambda v: losses.distillation_loss(F_T, unflat(v)).value
    ft = lambda v: losses.distillation_loss(unflat(v), F_S).value
    analytic = np.concatenate([np.concatenate([g.ravel() for g in res.grads["F_S"]]),
                               np.concatenate([g.ravel() for g in res.grads["F_T"]])])
    numeric = np.concatenate([central_diff(fs, flat_s, 1e-6), central_diff(ft, flat_t, 1e-6)])
    return analytic, numeric


def check_ranking(rng, size):
    D_S = rng.uniform(0.05, 0.6, size=(size, size))
    D_v = rng.uniform(0.05, 0.6, size=(size, size))
    U = np.zeros((size, size), dtype=bool)
    U.flat[rng.choice(U.size, size=max(2, U.size // 8), replace=False)] = True
    cfg = ogd.SamplingConfig(tau=0.15, local_ratio=1.0, global_ratio=1.0)
    seed = int(rng.integers(1 << 31))

    def loss(d):
        Z_l, Z_g = ogd.sample_pairs(U, d, D_v, cfg, seed)
        return ogd.ranking_loss(Z_l, Z_g, shape=d.shape)

    analytic = loss(D_S).grads["D_S"]
    return analytic, central_diff(lambda d: loss(d).value, D_S, 1e-5)


def check_feature_consistency(rng, size):
    H = 4
    mk = lambda: [rng.normal(size=(size >> s, size >> s, H)) for s in range(2)]
    Fs_h, Fs_e, Ft_e = mk(), mk(), mk()
    flat = lambda st: np.concatenate([x.ravel() for x in st])
    shapes = [x.shape for x in Fs_h]

    def unflat(v):
        out, off = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(v[off : off + n].reshape(s))
            off += n
        return out

    deg = losses.feature_consistency_loss(Fs_h, Fs_e, Ft_e, "degraded")
    clr = losses.feature_consistency_loss(None, Fs_e, Ft_e, "clear")
    fh = lambda v: losses.feature_consistency_loss(unflat(v), Fs_e, Ft_e, "degraded").value
    fe = lambda v: losses.feature_consistency_loss(None, unflat(v), Ft_e, "clear").value
    # stop-gradient arguments: analytic zeros vs the true partials are not compared,
    # the zeros themselves are asserted by the unit tests
    analytic = np.concatenate([flat(deg.grads["Fs_h"]), flat(clr.grads["Fs_e"])])
    numeric = np.concatenate([central_diff(fh, flat(Fs_h), 1e-6), central_diff(fe, flat(Fs_e), 1e-6)])
    return analytic, numeric


def check_model(rng, size):
    net = model.init_weights(int(rng.integers(1 << 31)), model.DEFAULT_HIDDEN)
    net.weights += rng.normal(0, 0.2, size=net.weights.shape)
    image = rng.uniform(0, 1, size=(size, size, 3))
    scales = 3
    inv, hid, cache = model.forward(net, image, scales)
    g_inv = [rng.normal(size=x.shape) for x in inv]
    g_hid = [rng.normal(size=x.shape) for x in hid]
    analytic = model.backward(net, cache, g_inv, g_hid)

    def f(w):
        i2, h2, _ = model.forward(net.with_weights(w), image, scales)
        return sum(float(np.sum(a * b)) for a, b in zip(g_inv, i2)) + sum(
            float(np.sum(a * b)) for a, b in zip(g_hid, h2))

    return analytic, central_diff(f, net.weights, 1e-5)


CHECKS = {
    "warp_depth": check_warp_depth,
    "warp_pose": check_warp_pose,
    "ssim": check_ssim,
    "photometric": check_photometric,
    "photometric_depth": check_photometric_depth,
    "smoothness": check_smoothness,
    "distillation": check_distillation,
    "ranking": check_ranking,
    "feature_consistency": check_feature_consistency,
    "model_backward": check_model,
}


def run_checks(seed: int = 0, size: int = 8, paths=None, inject_fault: str | None = None):
    """Run the named checks (all by default); ``inject_fault`` flips one path's sign."""
    results = []
    for name in paths or CHECKS:
        rng = np.random.default_rng([seed, list(CHECKS).index(name)])
        t0 = time.perf_counter()
        analytic, numeric = CHECKS[name](rng, size)
        if name == inject_fault:
            analytic = -np.asarray(analytic)
        results.append(CheckResult(name, rel_error(analytic, numeric), int(np.size(numeric)),
                                   time.perf_counter() - t0))
    return results
