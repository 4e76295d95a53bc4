"""Pinhole camera, rigid transforms and differentiable inverse warping.

Grids are numpy arrays indexed ``[row, col]`` (``[v, u]``), optionally with a
trailing channel axis. Pixel centres sit on integer coordinates, x points
right, y points down and the camera looks down +z.

A pose ``T_{t->s}`` maps points expressed in the target camera frame into the
source camera frame, so warping pulls source pixels into the target view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, level: int) -> "CameraIntrinsics":
        """Intrinsics of the image downsampled ``level`` times by 2x2 boxes."""
        f = 0.5**level
        return CameraIntrinsics(
            fx=self.fx * f,
            fy=self.fy * f,
            cx=(self.cx + 0.5) * f - 0.5,
            cy=(self.cy + 0.5) * f - 0.5,
            width=self.width >> level,
            height=self.height >> level,
        )


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (exponential map)."""
    w = np.asarray(rotvec, dtype=float)
    theta2 = float(w @ w)
    K = skew(w)
    if theta2 == 0.0:
        return np.eye(3)
    theta = np.sqrt(theta2)
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta2) * (K @ K)


def rodrigues_jacobian(rotvec) -> np.ndarray:
    """Return ``dR/dw_i`` stacked as an array of shape (3, 3, 3).

    Uses the closed form of Gallego and Yezzi; at the origin the derivative
    reduces to the generators ``[e_i]_x``.
    """
    w = np.asarray(rotvec, dtype=float)
    theta2 = float(w @ w)
    eye = np.eye(3)
    if theta2 < 1e-20:
        return np.stack([skew(eye[i]) for i in range(3)])
    R = rodrigues(w)
    K = skew(w)
    out = np.empty((3, 3, 3))
    for i in range(3):
        c = np.cross(w, (eye - R)[:, i])
        out[i] = (w[i] * K + skew(c)) @ R / theta2
    return out


@dataclass(frozen=True)
class RigidPose:
    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(float(x) for x in self.rotation))
        object.__setattr__(self, "translation", tuple(float(x) for x in self.translation))
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ValueError("pose needs a 3-vector rotation and a 3-vector translation")

    @classmethod
    def from_vector(cls, vec) -> "RigidPose":
        vec = np.asarray(vec, dtype=float)
        return cls(tuple(vec[:3]), tuple(vec[3:6]))

    @classmethod
    def from_matrix(cls, R, t) -> "RigidPose":
        R = np.asarray(R, dtype=float)
        if np.allclose(R, np.eye(3), rtol=0.0, atol=1e-15):
            rot = (0.0, 0.0, 0.0)
        else:
            rot = tuple(Rotation.from_matrix(R).as_rotvec())
        return cls(rot, tuple(np.asarray(t, dtype=float)))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.rotation + self.translation)

    @property
    def R(self) -> np.ndarray:
        return rodrigues(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @property
    def is_identity(self) -> bool:
        return not any(self.rotation) and not any(self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.R.T + self.t

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self * other``: apply ``other`` first, then ``self``."""
        return RigidPose.from_matrix(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidPose":
        Rt = self.R.T
        return RigidPose.from_matrix(Rt, -Rt @ self.t)


def backproject(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise ValueError("backproject needs strictly positive depth")
    x = (np.asarray(u, dtype=float) - K.cx) / K.fx * depth
    y = (np.asarray(v, dtype=float) - K.cy) / K.fy * depth
    return np.stack(np.broadcast_arrays(x, y, depth), axis=-1)


def project(points, K: CameraIntrinsics):
    """Project camera-frame points; returns ``(u, v, z, valid)`` with valid = z > 0."""
    p = np.asarray(points, dtype=float)
    z = p[..., 2]
    valid = z > 0
    safe = np.where(valid, z, 1.0)
    u = K.fx * p[..., 0] / safe + K.cx
    v = K.fy * p[..., 1] / safe + K.cy
    return u, v, z, valid


def pixel_grid(height: int, width: int):
    v, u = np.mgrid[0:height, 0:width]
    return u.astype(float), v.astype(float)


@dataclass
class CoordGrid:
    """Per-pixel source coordinates plus derivatives of (u, v).

    ``du_dd``/``dv_dd`` are derivatives w.r.t. the target depth at the same
    pixel; ``du_dpose``/``dv_dpose`` are derivatives w.r.t. the pose 6-vector
    (rotation first, then translation).
    """

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    valid: np.ndarray
    du_dd: np.ndarray = field(repr=False, default=None)
    dv_dd: np.ndarray = field(repr=False, default=None)
    du_dpose: np.ndarray = field(repr=False, default=None)
    dv_dpose: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self):
        return self.u.shape


def _in_bounds(u, v, width, height):
    return (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)


def warp_coordinates(depth, pose: RigidPose, K: CameraIntrinsics, pose_grad: bool = True) -> CoordGrid:
    """Source coordinates of every target pixel; pose Jacobians only with ``pose_grad``."""
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise ValueError("warp_coordinates needs strictly positive depth")
    h, w = depth.shape
    u0, v0 = pixel_grid(h, w)
    ray = np.stack([(u0 - K.cx) / K.fx, (v0 - K.cy) / K.fy, np.ones_like(u0)], axis=-1)
    R, t = pose.R, pose.t
    Rray = ray @ R.T
    X = ray * depth[..., None]
    Q = Rray * depth[..., None] + t
    qx, qy, qz = Q[..., 0], Q[..., 1], Q[..., 2]
    front = qz > 0
    z = np.where(front, qz, 1.0)
    u = K.fx * qx / z + K.cx
    v = K.fy * qy / z + K.cy

    inv_z = 1.0 / z
    du_dd = K.fx * (Rray[..., 0] - qx * inv_z * Rray[..., 2]) * inv_z
    dv_dd = K.fy * (Rray[..., 1] - qy * inv_z * Rray[..., 2]) * inv_z

    du_dpose = dv_dpose = None
    if pose_grad:
        zero = np.zeros_like(z)
        # d(u, v)/dQ, shape (h, w, 3)
        du_dQ = np.stack([K.fx * inv_z, zero, -K.fx * qx * inv_z**2], axis=-1)
        dv_dQ = np.stack([zero, K.fy * inv_z, -K.fy * qy * inv_z**2], axis=-1)
        dR = rodrigues_jacobian(pose.rotation)
        dQ_drot = np.einsum("kij,hwj->hwik", dR, X)  # (h, w, 3 components, 3 params)
        du_dpose = np.concatenate([np.einsum("hwi,hwik->hwk", du_dQ, dQ_drot), du_dQ], axis=-1)
        dv_dpose = np.concatenate([np.einsum("hwi,hwik->hwk", dv_dQ, dQ_drot), dv_dQ], axis=-1)

    if pose.is_identity:
        u, v = u0, v0
    valid = front & _in_bounds(u, v, w, h)
    return CoordGrid(
        u=u,
        v=v,
        z=qz,
        valid=valid,
        du_dd=du_dd,
        dv_dd=dv_dd,
        du_dpose=du_dpose,
        dv_dpose=dv_dpose,
    )


def _cell(coord, size):
    # left/upper cell on exact integer coordinates, so a = 1 there (except at 0)
    i0 = np.clip(np.ceil(coord) - 1, 0, size - 2).astype(np.intp)
    return i0, coord - i0


def bilinear_sample(src, coords: CoordGrid, return_grad: bool = False):
    """Sample ``src`` (h, w[, c]) at ``coords``; invalid pixels are exactly 0.

    With ``return_grad`` also returns ``dout/du`` and ``dout/dv``, which use
    the left/upper cell's slope on cell boundaries.
    """
    src = np.asarray(src, dtype=float)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    sh, sw, _ = src.shape
    valid = coords.valid & _in_bounds(coords.u, coords.v, sw, sh)
    u = np.where(valid, coords.u, 0.0)
    v = np.where(valid, coords.v, 0.0)
    x0, a = _cell(u, sw)
    y0, b = _cell(v, sh)
    a, b = a[..., None], b[..., None]
    s00 = src[y0, x0]
    s01 = src[y0, x0 + 1]
    s10 = src[y0 + 1, x0]
    s11 = src[y0 + 1, x0 + 1]
    out = (1 - a) * (1 - b) * s00 + a * (1 - b) * s01 + (1 - a) * b * s10 + a * b * s11
    m = valid[..., None]
    out = np.where(m, out, 0.0)
    if squeeze:
        out = out[..., 0]
    if not return_grad:
        return out, valid
    gu = np.where(m, (1 - b) * (s01 - s00) + b * (s11 - s10), 0.0)
    gv = np.where(m, (1 - a) * (s10 - s00) + a * (s11 - s01), 0.0)
    if squeeze:
        gu, gv = gu[..., 0], gv[..., 0]
    return out, valid, gu, gv


@dataclass
class SynthesizedView:
    image: np.ndarray
    mask: np.ndarray
    coords: CoordGrid = field(repr=False)
    dimg_du: np.ndarray = field(repr=False)
    dimg_dv: np.ndarray = field(repr=False)

    def backward(self, upstream):
        """Chain an upstream gradient on ``image`` to (depth grad, pose 6-vector grad)."""
        g = np.asarray(upstream, dtype=float)
        if g.ndim == 2:
            g = g[..., None]
        gu = np.sum(g * _expand(self.dimg_du), axis=-1)
        gv = np.sum(g * _expand(self.dimg_dv), axis=-1)
        c = self.coords
        grad_depth = gu * c.du_dd + gv * c.dv_dd
        if c.du_dpose is None:
            return grad_depth, None
        grad_pose = np.einsum("hw,hwk->k", gu, c.du_dpose) + np.einsum("hw,hwk->k", gv, c.dv_dpose)
        return grad_depth, grad_pose


def _expand(x):
    return x if x.ndim == 3 else x[..., None]


def synthesize_view(src_image, depth, pose: RigidPose, K: CameraIntrinsics,
                    pose_grad: bool = True) -> SynthesizedView:
    """Reconstruct the target view from ``src_image`` using target depth and pose."""
    src_image = np.asarray(src_image, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if src_image.shape[:2] != depth.shape:
        raise ValueError(f"image {src_image.shape[:2]} and depth {depth.shape} disagree")
    coords = warp_coordinates(depth, pose, K, pose_grad)
    out, mask, gu, gv = bilinear_sample(src_image, coords, return_grad=True)
    return SynthesizedView(image=out, mask=mask, coords=coords, dimg_du=gu, dimg_dv=gv)
