"""Teacher self-supervised training, student distillation, Adam, and ablations.

All randomness goes through one ``numpy.random.Generator`` (PCG64) seeded from
the config; per-sample streams are derived from it in a fixed order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import losses, model, ogd
from .geometry import RigidPose, synthesize_view
from .metrics import evaluate_depth
from .synth import DegradationParams, degrade, oracle_relative_depth

PRNG_ALGORITHM = "numpy.random.Generator(PCG64)"


@dataclass
class TrainConfig:
    epochs: int = 25
    lr: float = 5e-4
    lr_decay: float = 0.1
    lr_period: int = 15
    batch_size: int = 4
    seed: int = 0
    scales: int = 4
    hidden: int = model.DEFAULT_HIDDEN
    # teacher objective
    theta: float = losses.DEFAULT_THETA
    beta: float = losses.DEFAULT_BETA
    init_depth: float = 10.0
    optimize_pose: bool = False
    pose_noise: float = 0.0
    # student objective
    lambda1: float = 0.01
    lambda2: float = 0.02
    dl: bool = True
    ogd: bool = True
    fcc: bool = True
    use_global: bool = True
    use_local: bool = True
    use_window: bool = True
    fcc_start: int = 15
    tau: float = 0.15
    local_ratio: float = 0.05
    global_ratio: float = 0.01
    gamma_mode: str = "percentile"
    gamma: float = 0.95
    window: int = 5
    clear_fraction: float = 0.5
    distill_clear: bool = True
    student_init: str = "teacher"  # or "random"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.fcc_start > self.epochs:
            raise ValueError("fcc_start must not exceed epochs")
        if self.epochs < 0 or self.batch_size < 1 or self.scales < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and scales >= 1 required")
        if not 0 <= self.clear_fraction <= 1:
            raise ValueError("clear_fraction must lie in [0, 1]")
        if self.student_init not in ("teacher", "random"):
            raise ValueError("student_init must be 'teacher' or 'random'")

    def sampling(self) -> ogd.SamplingConfig:
        return ogd.SamplingConfig(tau=self.tau, local_ratio=self.local_ratio, global_ratio=self.global_ratio,
                                  gamma_mode=self.gamma_mode, gamma=self.gamma,
                                  window=self.window if self.use_window else 1)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_period)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(weights, grad, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new (weights, state)."""
    weights, grad = np.asarray(weights, dtype=float), np.asarray(grad, dtype=float)
    if weights.shape != grad.shape or weights.shape != state.m.shape:
        raise ValueError(f"shape mismatch: weights {weights.shape}, grad {grad.shape}, state {state.m.shape}")
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    new = weights - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def weights_digest(net: model.DepthNet) -> str:
    return hashlib.sha256(net.weights.tobytes()).hexdigest()


def _epoch_batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# teacher


def _teacher_sample_loss(net, triplet, cfg, poses=None):
    """Multi-scale photometric + smoothness loss of one triplet and its gradients."""
    inv_stack, _, cache = model.forward(net, triplet.cur, cfg.scales)
    targets = model.pyramid(triplet.cur, cfg.scales)
    sources = [model.pyramid(img, cfg.scales) for img, _ in triplet.sources]
    poses = poses if poses is not None else [p for _, p in triplet.sources]
    grad_inv = []
    grad_pose = [np.zeros(6) for _ in poses]
    total_p = total_e = 0.0
    S = cfg.scales
    for s in range(S):
        K = triplet.K.scaled(s)
        inv = inv_stack[s]
        depth = 1.0 / inv
        views = [synthesize_view(src[s], depth, pose, K, pose_grad=cfg.optimize_pose)
                 for src, pose in zip(sources, poses)]
        lp = losses.photometric_loss(targets[s], [v.image for v in views], [v.mask for v in views], cfg.theta)
        le = losses.smoothness_loss_inverse(inv, targets[s])
        total_p += lp.value / S
        total_e += le.value / S
        g_depth = np.zeros_like(depth)
        for k, view in enumerate(views):
            gd, gp = view.backward(lp.grads["views"][k])
            g_depth += gd
            if gp is not None:
                grad_pose[k] += gp / S
        g = (-g_depth * depth * depth + cfg.beta * le.grads["inv_depth"]) / S
        grad_inv.append(g)
    grad_w = model.backward(net, cache, grad_inv, None)
    return total_p, total_e, grad_w, grad_pose


def train_teacher(triplets, cfg: TrainConfig, steps: int | None = None, log=None):
    """Self-supervised teacher training on clean triplets.

    Returns ``(net, rows)`` where ``rows`` is the per-step loss curve. ``steps``
    caps the number of optimisation steps (otherwise ``cfg.epochs`` epochs).
    """
    if not triplets:
        raise ValueError("teacher training needs at least one triplet")
    rng = np.random.default_rng(cfg.seed)
    net = model.init_weights(cfg.seed, cfg.hidden, model.bias_for_depth(cfg.init_depth))
    state = AdamState.zeros(net.weights.size)
    n = len(triplets)
    poses = np.array([[p.vector for _, p in t.sources] for t in triplets])
    if cfg.optimize_pose and cfg.pose_noise > 0:
        poses = poses + rng.normal(0.0, cfg.pose_noise, size=poses.shape)
    pose_state = AdamState.zeros(poses.size)
    rows = []
    step = 0
    epoch = 0
    while True:
        if steps is None and epoch >= cfg.epochs:
            break
        lr = cfg.lr_at(epoch)
        for batch in _epoch_batches(rng, n, cfg.batch_size):
            if steps is not None and step >= steps:
                break
            g_total = np.zeros_like(net.weights)
            g_pose = np.zeros_like(poses)
            lp_sum = le_sum = 0.0
            for i in batch:
                cur_poses = [RigidPose.from_vector(v) for v in poses[i]] if cfg.optimize_pose else None
                lp, le, gw, gp = _teacher_sample_loss(net, triplets[i], cfg, cur_poses)
                lp_sum += lp
                le_sum += le
                g_total += gw
                g_pose[i] = gp
            b = len(batch)
            new_w, state = adam_step(net.weights, g_total / b, state, lr)
            net = net.with_weights(new_w)
            if cfg.optimize_pose:
                flat, pose_state = adam_step(poses.ravel(), g_pose.ravel() / b, pose_state, lr)
                poses = flat.reshape(poses.shape)
            row = {"step": step, "epoch": epoch, "L": (lp_sum + cfg.beta * le_sum) / b,
                   "L_p": lp_sum / b, "L_e": le_sum / b, "lr": lr}
            rows.append(row)
            if log is not None:
                log(row)
            step += 1
        if steps is not None and step >= steps:
            break
        epoch += 1
    return net, rows


# ---------------------------------------------------------------------------
# student


@dataclass
class TrainingSample:
    """A clean frame, its degraded variants (same geometry) and ground truth."""

    clean: np.ndarray
    variants: dict
    depth: np.ndarray
    oracle: np.ndarray | None = field(default=None, repr=False)


def make_samples(triplets, kinds=("night", "fog"), seed=0, params=None):
    """Degrade each triplet's target frame once per kind and attach oracle depth."""
    params = params or {}
    out = []
    for i, t in enumerate(triplets):
        variants = {}
        for j, kind in enumerate(kinds):
            p = params.get(kind, DegradationParams(kind))
            variants[kind] = degrade(t.cur, t.depth, p, seed=[seed, i, j])
        oracle = oracle_relative_depth(t.depth, scale_jitter_seed=[seed, i, 1000])
        out.append(TrainingSample(t.cur, variants, t.depth, oracle))
    return out


@dataclass
class _TeacherView:
    inv: list
    hidden: list


def _student_step_sample(student, teacher_view, sample, kind, cfg, epoch, pair_seed, on_pairs=None):
    degraded = kind != "clear"
    x = sample.variants[kind] if degraded else sample.clean
    inv_S, hid_S, cache = model.forward(student, x, cfg.scales)
    L_d = L_r = L_c = 0.0
    if cfg.dl and (degraded or cfg.distill_clear):
        L_d = losses.distillation_loss(teacher_view.inv, inv_S)
    if cfg.ogd:
        D_T, D_S = teacher_view.inv[0], inv_S[0]
        D_hat = ogd.normalize_discrepancy(ogd.depth_discrepancy(D_T, D_S))
        U = ogd.uncertainty_mask(D_hat, cfg.gamma_mode, cfg.gamma)
        oracle = sample.oracle if sample.oracle is not None else oracle_relative_depth(sample.depth, 0)
        Z_l, Z_g = ogd.sample_pairs(U, D_S, oracle, cfg.sampling(), pair_seed)
        if on_pairs is not None:
            on_pairs(Z_l, Z_g)
        L_r = ogd.ranking_loss(Z_l if cfg.use_local else [], Z_g if cfg.use_global else [], shape=D_S.shape)
    if cfg.fcc and epoch >= cfg.fcc_start:
        if degraded:
            _, Fs_e, _ = model.forward(student, sample.clean, cfg.scales)
            L_c = losses.feature_consistency_loss(hid_S, Fs_e, teacher_view.hidden, "degraded")
        else:
            L_c = losses.feature_consistency_loss(None, hid_S, teacher_view.hidden, "clear")
    total = losses.total_student_loss(L_d, L_r, L_c, cfg.lambda1, cfg.lambda2)
    grad_inv = total.grads.get("F_S")
    grad_inv = [g.copy() for g in grad_inv] if grad_inv is not None else [None] * cfg.scales
    if "D_S" in total.grads:
        grad_inv[0] = total.grads["D_S"] if grad_inv[0] is None else grad_inv[0] + total.grads["D_S"]
    grad_hid = total.grads.get("Fs_h" if degraded else "Fs_e")
    parts = tuple(float(x) for x in (total.value, L_d, L_r, L_c))
    if all(g is None for g in grad_inv) and grad_hid is None:
        return parts, np.zeros_like(student.weights)
    return parts, model.backward(student, cache, grad_inv, grad_hid)


def train_student(samples, teacher: model.DepthNet, cfg: TrainConfig, log=None, pair_log=None):
    """Distil a frozen teacher into a student on the mixed clear/degraded set.

    Each epoch draws one sample per training frame in a seeded order; a draw is
    clear with probability ``cfg.clear_fraction`` and otherwise takes a
    uniformly chosen degradation. ``pair_log(step, index, kind, Z_l, Z_g)``
    receives every sampled pair set. Returns ``(student, rows)``.
    """
    if not samples:
        raise ValueError("student training needs samples")
    if cfg.fcc and cfg.fcc_start < cfg.epochs and any(s.clean is None for s in samples):
        raise ValueError("feature consistency needs the clean pair of every degraded sample")
    digest = weights_digest(teacher)
    rng = np.random.default_rng(cfg.seed)
    if cfg.student_init == "teacher":
        student = teacher.copy()
    else:
        student = model.init_weights(cfg.seed, teacher.hidden, model.bias_for_depth(cfg.init_depth))
    views = []
    for s in samples:
        inv, hid, _ = model.forward(teacher, s.clean, cfg.scales)
        views.append(_TeacherView(inv, hid))
    state = AdamState.zeros(student.weights.size)
    rows = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for batch in _epoch_batches(rng, len(samples), cfg.batch_size):
            picks = []
            for i in batch:
                kinds = sorted(samples[i].variants)
                if not kinds or rng.random() < cfg.clear_fraction:
                    kind = "clear"
                else:
                    kind = kinds[int(rng.integers(len(kinds)))]
                picks.append((int(i), kind, int(rng.integers(1 << 62))))
            g = np.zeros_like(student.weights)
            acc = np.zeros(4)
            for i, kind, pair_seed in picks:
                hook = None
                if pair_log is not None:
                    hook = lambda zl, zg, i=i, kind=kind, step=step: pair_log(step, i, kind, zl, zg)
                parts, gw = _student_step_sample(student, views[i], samples[i], kind, cfg, epoch, pair_seed, hook)
                acc += parts
                g += gw
            b = len(picks)
            acc /= b
            if np.any(g):
                new_w, state = adam_step(student.weights, g / b, state, lr)
                student = student.with_weights(new_w)
            else:
                state = dataclasses.replace(state, step=state.step + 1)
            row = {"step": step, "epoch": epoch, "L": acc[0], "L_d": acc[1], "L_r": acc[2], "L_c": acc[3], "lr": lr}
            rows.append(row)
            if log is not None:
                log(row)
            step += 1
    if weights_digest(teacher) != digest:
        raise RuntimeError("teacher weights changed during student training")
    return student, rows


# ---------------------------------------------------------------------------
# evaluation and ablation


def predict_depth(net: model.DepthNet, image, scales: int = 1) -> np.ndarray:
    inv, _, _ = model.forward(net, image, scales)
    return 1.0 / inv[0]


REPORT_KEYS = ("absRel", "sqRel", "RMSE", "delta1", "RMSE_log", "delta2", "delta3")


def evaluate_predictor(predict, eval_set, conditions=("clear", "night", "fog"), scale=True, lo=0.1, hi=80.0):
    """Per-condition metrics averaged over frames (per-frame median scaling).

    ``predict(image, sample)`` returns a depth map; ``eval_set`` is a list of
    :class:`TrainingSample`. Returns {condition: {metric: value}}.
    """
    out = {}
    for cond in conditions:
        reports = []
        for s in eval_set:
            if cond == "clear":
                img = s.clean
            elif cond in s.variants:
                img = s.variants[cond]
            else:
                raise KeyError(f"condition {cond!r} absent from the evaluation set")
            reports.append(evaluate_depth(predict(img, s), s.depth, lo, hi, scale=scale))
        out[cond] = {k: float(np.mean([getattr(r, k) for r in reports])) for k in REPORT_KEYS}
    return out


def evaluate_model(net, eval_set, conditions=("clear", "night", "fog"), scale=True, lo=0.1, hi=80.0):
    return evaluate_predictor(lambda img, _: predict_depth(net, img), eval_set, conditions, scale, lo, hi)


ABLATION_TOGGLES = ("dl", "ogd", "fcc", "use_global", "use_local", "use_window")


def run_ablation(matrix, samples, teacher, eval_set, conditions=("clear", "night", "fog"), seeds=(0,), log=None):
    """Train and evaluate each ``(label, TrainConfig)`` row, averaging over seeds.

    Returns a list of dict rows: label, toggles, then absRel/RMSE/delta1 per
    condition plus the mean absRel over the degraded conditions.
    """
    rows = []
    for label, cfg in matrix:
        per_seed = []
        for seed in seeds:
            student, _ = train_student(samples, teacher, cfg.replace(seed=seed))
            per_seed.append(evaluate_model(student, eval_set, conditions))
            if log is not None:
                log(label, seed, per_seed[-1])
        row = {"label": label}
        for t in ABLATION_TOGGLES:
            row[t] = int(getattr(cfg, t))
        for cond in conditions:
            for k in ("absRel", "RMSE", "delta1"):
                row[f"{cond}_{k}"] = float(np.mean([r[cond][k] for r in per_seed]))
        degraded = [c for c in conditions if c != "clear"]
        if degraded:
            row["degraded_absRel"] = float(np.mean([row[f"{c}_absRel"] for c in degraded]))
        row["seeds"] = len(seeds)
        rows.append(row)
    return rows


def write_rows(path, rows) -> None:
    if not rows:
        raise ValueError("no rows")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
