"""Synthetic scenes with exact depth, parametric weather, and the oracle surrogate.

Scenes are ray cast with point sampling at pixel centres. Albedo comes from
band-limited solid textures and shading is Lambertian under a directional
light, so radiance is view independent and warping between frames is exact up
to interpolation and occlusion.

Trajectory poses are camera-to-world transforms.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, RigidPose, pixel_grid

DEPTH_LIMITS = (0.5, 60.0)
KIND_TAGS = {"clear": "d", "night": "n", "rain": "r", "fog": "f"}


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Texture:
    kind: str = "sines"  # sines | checker | flat
    seed: int = 0
    wavelength: float = 1.0
    contrast: float = 0.3
    color: tuple = (0.6, 0.6, 0.6)
    octaves: int = 6

    def __post_init__(self):
        if self.kind not in ("sines", "checker", "flat"):
            raise SceneError(f"unknown texture kind {self.kind!r}")
        if self.wavelength <= 0:
            raise SceneError("texture wavelength must be positive")

    def albedo(self, points) -> np.ndarray:
        """RGB albedo at world points of shape (..., 3)."""
        base = np.asarray(self.color, dtype=float)
        if self.kind == "flat":
            return np.broadcast_to(base, points.shape[:-1] + (3,)).copy()
        rng = np.random.default_rng(self.seed)
        if self.kind == "checker":
            k = math.pi / self.wavelength
            off = rng.uniform(0, 2 * math.pi, size=3)
            s = np.prod(np.sin(k * points + off), axis=-1)
            t = np.tanh(4.0 * s)[..., None] * np.ones(3)
        else:
            t = np.zeros(points.shape[:-1] + (3,))
            for i in range(self.octaves):
                d = rng.normal(size=3)
                d /= np.linalg.norm(d)
                freq = 2 * math.pi / (self.wavelength * 1.6 ** (i / 2))
                phase = rng.uniform(0, 2 * math.pi, size=3)
                t += np.sin(freq * (points @ d)[..., None] + phase)
            t /= math.sqrt(self.octaves / 2)
            t = np.tanh(t)
        return np.clip(base * (1.0 + self.contrast * t), 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    normal: tuple
    offset: float
    texture: Texture = Texture()

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset / np.linalg.norm(self.normal) - origin @ n) / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        normals = np.broadcast_to(n, dirs.shape)
        return np.where(t > 0, t, np.inf), normals


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture = Texture()

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=float)
        oc = origin - c
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        cc = oc @ oc - self.radius**2
        disc = b * b - 4 * a * cc
        root = np.sqrt(np.maximum(disc, 0.0))
        t = (-b - root) / (2 * a)
        t = np.where((disc >= 0) & (t > 0), t, np.inf)
        hit = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs
        normals = (hit - c) / self.radius
        return t, normals


@dataclass
class Scene:
    primitives: list
    background_depth: float = 25.0
    background_texture: Texture = Texture(wavelength=3.0, seed=99)
    light: tuple = (-0.3, 0.6, 1.0)  # direction the light travels
    ambient: float = 0.35
    trajectory: list = field(default_factory=list)
    intrinsics: CameraIntrinsics | None = None

    def all_primitives(self):
        wall = Plane((0.0, 0.0, 1.0), self.background_depth, self.background_texture)
        return list(self.primitives) + [wall]


def camera_rays(K: CameraIntrinsics, pose: RigidPose):
    """World-space origin and per-pixel directions whose ray parameter is camera z."""
    u, v = pixel_grid(K.height, K.width)
    ray = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    return pose.t, ray @ pose.R.T


def render(scene: Scene, K: CameraIntrinsics, pose: RigidPose):
    """Ray cast one frame; returns (image (h, w, 3), z-depth (h, w))."""
    origin, dirs = camera_rays(K, pose)
    best = np.full(dirs.shape[:2], np.inf)
    normal = np.zeros(dirs.shape)
    owner = np.full(dirs.shape[:2], -1)
    prims = scene.all_primitives()
    for i, prim in enumerate(prims):
        t, n = prim.intersect(origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        normal = np.where(closer[..., None], n, normal)
        owner = np.where(closer, i, owner)
    if not np.all(np.isfinite(best)):
        raise SceneError("some camera rays miss every primitive")
    lo, hi = DEPTH_LIMITS
    if best.min() < lo or best.max() > hi:
        raise SceneError(f"depth range [{best.min():.3g}, {best.max():.3g}] outside {DEPTH_LIMITS}")
    points = origin + best[..., None] * dirs
    # two-sided: orient normals toward the viewer
    facing = np.sum(normal * dirs, axis=-1, keepdims=True)
    normal = np.where(facing > 0, -normal, normal)
    light = np.asarray(scene.light, dtype=float)
    light = light / np.linalg.norm(light)
    lambert = np.clip(-(normal @ light), 0.0, None)
    shade = scene.ambient + (1 - scene.ambient) * lambert
    albedo = np.zeros(dirs.shape)
    for i, prim in enumerate(prims):
        sel = owner == i
        if sel.any():
            albedo[sel] = prim.texture.albedo(points[sel])
    image = np.clip(albedo * shade[..., None], 0.0, 1.0)
    return image, best


@dataclass
class FrameTriplet:
    prev: np.ndarray
    cur: np.ndarray
    next: np.ndarray
    pose_to_prev: RigidPose
    pose_to_next: RigidPose
    depth: np.ndarray
    K: CameraIntrinsics
    index: int = 0

    @property
    def sources(self):
        return [(self.prev, self.pose_to_prev), (self.next, self.pose_to_next)]


def relative_pose(c2w_target: RigidPose, c2w_source: RigidPose) -> RigidPose:
    """Transform taking target-camera points into the source camera."""
    return c2w_source.inverse().compose(c2w_target)


def generate_triplet(scene: Scene, K: CameraIntrinsics, t_index: int, cache=None) -> FrameTriplet:
    traj = scene.trajectory
    if not 1 <= t_index <= len(traj) - 2:
        raise IndexError(f"frame {t_index} needs both neighbours in a {len(traj)}-frame trajectory")

    def frame(i):
        if cache is not None:
            if i not in cache:
                cache[i] = render(scene, K, traj[i])
            return cache[i]
        return render(scene, K, traj[i])

    prev, _ = frame(t_index - 1)
    cur, depth = frame(t_index)
    nxt, _ = frame(t_index + 1)
    return FrameTriplet(
        prev=prev, cur=cur, next=nxt,
        pose_to_prev=relative_pose(traj[t_index], traj[t_index - 1]),
        pose_to_next=relative_pose(traj[t_index], traj[t_index + 1]),
        depth=depth, K=K, index=t_index,
    )


def generate_triplets(scene: Scene, K: CameraIntrinsics | None = None, indices=None):
    K = K or scene.intrinsics
    indices = range(1, len(scene.trajectory) - 1) if indices is None else indices
    cache = {}
    return [generate_triplet(scene, K, i, cache) for i in indices]


def linear_trajectory(frames: int, step=(0.2, 0.0, 0.0), start=(0.0, 0.0, 0.0), rotation_step=(0.0, 0.0, 0.0)):
    step, start, rstep = (np.asarray(x, dtype=float) for x in (step, start, rotation_step))
    return [RigidPose(tuple(rstep * i), tuple(start + step * i)) for i in range(frames)]


@dataclass(frozen=True)
class DegradationParams:
    kind: str
    gamma: float = 2.2
    gain: float = 0.3
    noise: float = 0.02
    contrast: float = 0.7
    streak_density: float = 0.01
    streak_length: int = 7
    streak_angle: float = 0.3  # radians from vertical
    streak_intensity: float = 0.35
    beta: float = 0.06
    airlight: float = 0.8

    def __post_init__(self):
        if self.kind not in ("night", "rain", "fog"):
            raise ValueError(f"unknown degradation {self.kind!r}")
        if self.kind == "night" and not (self.gamma > 1 and 0 < self.gain <= 1 and self.noise >= 0):
            raise ValueError("night needs gamma > 1, gain in (0, 1], noise >= 0")
        if self.kind == "rain" and not (0 < self.contrast <= 1 and self.noise >= 0 and self.streak_length >= 1
                                        and 0 <= self.streak_density <= 1):
            raise ValueError("rain needs contrast in (0, 1], density in [0, 1], length >= 1")
        if self.kind == "fog" and not (self.beta >= 0 and 0 <= self.airlight <= 1):
            raise ValueError("fog needs beta >= 0 and airlight in [0, 1]")


def _streaks(shape, p: DegradationParams, rng):
    h, w = shape
    seeds = (rng.random((h, w)) < p.streak_density).astype(float)
    out = np.zeros((h, w))
    dx, dy = math.sin(p.streak_angle), math.cos(p.streak_angle)
    for k in range(p.streak_length):
        oy, ox = int(round(k * dy)), int(round(k * dx))
        shifted = np.zeros((h, w))
        shifted[oy:, max(ox, 0) : w + min(ox, 0)] = seeds[: h - oy, max(-ox, 0) : w - max(ox, 0)]
        out += shifted
    return np.clip(out, 0.0, 1.0)


def degrade(image, depth, params: DegradationParams, seed=0) -> np.ndarray:
    """Apply a night, rain or fog corruption; deterministic per seed."""
    img = np.asarray(image, dtype=float)
    rng = np.random.default_rng(seed)
    if params.kind == "night":
        out = params.gain * img**params.gamma
        if params.noise > 0:
            out = out + rng.normal(0.0, params.noise, size=img.shape)
    elif params.kind == "rain":
        mean = img.mean(axis=(0, 1), keepdims=True)
        out = mean + params.contrast * (img - mean)
        streak = _streaks(img.shape[:2], params, rng)
        out = out + params.streak_intensity * streak[..., None] * (1.0 - out)
        if params.noise > 0:
            out = out + rng.normal(0.0, params.noise, size=img.shape)
    else:
        trans = np.exp(-params.beta * np.asarray(depth, dtype=float))[..., None]
        out = img * trans + params.airlight * (1.0 - trans)
    return np.clip(out, 0.0, 1.0)


def oracle_relative_depth(depth, scale_jitter_seed=0, scale: float | None = None) -> np.ndarray:
    """Relative inverse depth c / depth with c log-uniform in [0.5, 2]."""
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise ValueError("ground-truth depth must be positive")
    if scale is None:
        rng = np.random.default_rng(scale_jitter_seed)
        scale = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    if scale <= 0:
        raise ValueError("oracle scale must be positive")
    return scale / depth


# ---------------------------------------------------------------------------
# scene files


def _floats(text, n, lineno, what):
    try:
        vals = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise SceneError(f"line {lineno}: {what} expects numbers, got {text!r}") from None
    if len(vals) != n:
        raise SceneError(f"line {lineno}: {what} expects {n} values, got {len(vals)}")
    return vals


def _options(tokens, lineno, allowed):
    opts = {}
    for tok in tokens:
        if "=" not in tok:
            raise SceneError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in allowed:
            raise SceneError(f"line {lineno}: unknown option {k!r}")
        opts[k] = v
    return opts


_TEXTURE_KEYS = {"texture", "seed", "wavelength", "contrast", "color"}


def _texture(opts, lineno, default_seed):
    try:
        return Texture(
            kind=opts.get("texture", "sines"),
            seed=int(opts.get("seed", default_seed)),
            wavelength=float(opts.get("wavelength", 1.0)),
            contrast=float(opts.get("contrast", 0.3)),
            color=_floats(opts["color"], 3, lineno, "color") if "color" in opts else (0.6, 0.6, 0.6),
        )
    except (SceneError, ValueError) as exc:
        msg = str(exc)
        raise SceneError(msg if msg.startswith("line") else f"line {lineno}: {msg}") from None


def parse_scene(text: str) -> Scene:
    """Parse the scene description format documented in the README."""
    scalars = {"width": 80, "height": 64, "fx": None, "fy": None, "cx": None, "cy": None,
               "ambient": 0.35, "light": None}
    prims, poses = [], []
    background = (25.0, Texture(wavelength=3.0, seed=99))
    traj = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split(None, 1)[0]
        if "=" in line and head not in ("plane", "sphere", "background", "trajectory") and line.count("=") == 1:
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in scalars:
                raise SceneError(f"line {lineno}: unknown key {key!r}")
            if key == "light":
                scalars[key] = _floats(value, 3, lineno, key)
            else:
                try:
                    scalars[key] = float(value)
                except ValueError:
                    raise SceneError(f"line {lineno}: {key} expects a number, got {value!r}") from None
            continue
        tokens = shlex.split(line)
        if head == "plane":
            opts = _options(tokens[1:], lineno, {"normal", "offset"} | _TEXTURE_KEYS)
            if "normal" not in opts or "offset" not in opts:
                raise SceneError(f"line {lineno}: plane needs normal= and offset=")
            prims.append(Plane(_floats(opts["normal"], 3, lineno, "normal"),
                               _floats(opts["offset"], 1, lineno, "offset")[0],
                               _texture(opts, lineno, len(prims))))
        elif head == "sphere":
            opts = _options(tokens[1:], lineno, {"center", "radius"} | _TEXTURE_KEYS)
            if "center" not in opts or "radius" not in opts:
                raise SceneError(f"line {lineno}: sphere needs center= and radius=")
            radius = _floats(opts["radius"], 1, lineno, "radius")[0]
            if radius <= 0:
                raise SceneError(f"line {lineno}: radius must be positive")
            prims.append(Sphere(_floats(opts["center"], 3, lineno, "center"), radius,
                                _texture(opts, lineno, len(prims))))
        elif head == "background":
            if len(tokens) < 2:
                raise SceneError(f"line {lineno}: background needs a depth")
            depth = _floats(tokens[1], 1, lineno, "background depth")[0]
            opts = _options(tokens[2:], lineno, _TEXTURE_KEYS)
            background = (depth, _texture(opts, lineno, 99))
        elif head == "trajectory":
            opts = _options(tokens[1:], lineno, {"frames", "step", "start", "rotation_step"})
            try:
                frames = int(opts.get("frames", "10"))
            except ValueError:
                raise SceneError(f"line {lineno}: frames expects an integer") from None
            traj = linear_trajectory(
                frames,
                _floats(opts.get("step", "0.2 0 0"), 3, lineno, "step"),
                _floats(opts.get("start", "0 0 0"), 3, lineno, "start"),
                _floats(opts.get("rotation_step", "0 0 0"), 3, lineno, "rotation_step"),
            )
        elif head == "pose":
            vals = _floats(line[len("pose"):], 6, lineno, "pose")
            poses.append(RigidPose(vals[:3], vals[3:]))
        else:
            raise SceneError(f"line {lineno}: unrecognised statement {head!r}")
    if traj is not None and poses:
        raise SceneError("use either a trajectory line or explicit pose lines, not both")
    w, h = int(scalars["width"]), int(scalars["height"])
    fx = scalars["fx"] if scalars["fx"] is not None else 0.9 * w
    fy = scalars["fy"] if scalars["fy"] is not None else fx
    cx = scalars["cx"] if scalars["cx"] is not None else (w - 1) / 2
    cy = scalars["cy"] if scalars["cy"] is not None else (h - 1) / 2
    try:
        K = CameraIntrinsics(fx, fy, cx, cy, w, h)
    except ValueError as exc:
        raise SceneError(f"intrinsics: {exc}") from None
    scene = Scene(prims, background_depth=background[0], background_texture=background[1],
                  ambient=scalars["ambient"], trajectory=traj if traj is not None else poses,
                  intrinsics=K)
    if scalars["light"] is not None:
        scene.light = scalars["light"]
    return scene


def load_scene(path) -> Scene:
    with open(path) as fh:
        return parse_scene(fh.read())


def occlusion_free_mask(target_depth, source_depth, pose: RigidPose, K: CameraIntrinsics,
                        rtol: float = 0.01, max_jump: float = 1.15):
    """Pixels whose warp lands on the same surface in the source frame.

    The interpolated source depth must match the transformed point's depth to
    ``rtol``, and the four bilinear corners may not straddle a depth
    discontinuity (max/min corner ratio above ``max_jump``).
    """
    from .geometry import _cell, bilinear_sample, warp_coordinates

    coords = warp_coordinates(target_depth, pose, K)
    h, w = source_depth.shape
    u = np.where(coords.valid, coords.u, 0.0)
    v = np.where(coords.valid, coords.v, 0.0)
    x0, _ = _cell(u, w)
    y0, _ = _cell(v, h)
    corners = np.stack([source_depth[y0 + dy, x0 + dx] for dy in (0, 1) for dx in (0, 1)])
    sampled, valid = bilinear_sample(source_depth, coords)
    ok = valid & (np.abs(sampled - coords.z) <= rtol * np.abs(coords.z))
    return ok & (corners.max(axis=0) <= max_jump * corners.min(axis=0))
