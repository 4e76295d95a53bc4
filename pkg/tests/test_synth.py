import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acdepth import geometry, ogd, synth
from acdepth.experiments import CONFIG_DIR
from acdepth.geometry import CameraIntrinsics, RigidPose
from acdepth.synth import DegradationParams, Plane, Scene, SceneError, Sphere, Texture

K = CameraIntrinsics(36.0, 36.0, 19.5, 15.5, 40, 32)
IDENT = RigidPose((0, 0, 0), (0, 0, 0))


def same_pose(a, b, atol=1e-12):
    return np.allclose(a.R, b.R, atol=atol) and np.allclose(a.t, b.t, atol=atol)


def test_fronto_parallel_plane_depth():
    scene = Scene([Plane((0, 0, 1), 10.0)], background_depth=30.0)
    _, depth = synth.render(scene, K, IDENT)
    assert np.allclose(depth, 10.0, rtol=0, atol=1e-12)


def test_tilted_plane_matches_analytic_intersection():
    n = np.array([0.0, 1.0, 0.6])
    scene = Scene([Plane(tuple(n), 3.5)], background_depth=40.0)
    origin = np.array([0.3, -0.2, 0.1])
    _, depth = synth.render(scene, K, RigidPose((0, 0, 0), tuple(origin)))
    u, v = geometry.pixel_grid(K.height, K.width)
    rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], -1)
    z = (3.5 - origin @ n) / (rays @ n)
    expected = np.where((z > 0) & (z < 40.0 - origin[2]), z, 40.0 - origin[2])
    assert np.allclose(depth, expected, rtol=0, atol=1e-9)


def test_sphere_on_axis_is_symmetric():
    k = CameraIntrinsics(30.0, 30.0, 15.5, 15.5, 32, 32)
    scene = Scene([Sphere((0, 0, 6), 1.5)], background_depth=20.0)
    _, depth = synth.render(scene, k, IDENT)
    assert np.allclose(depth, depth[::-1, :], atol=1e-12)
    assert np.allclose(depth, depth[:, ::-1], atol=1e-12)
    assert np.allclose(depth, depth.T, atol=1e-12)
    assert depth[15, 15] == pytest.approx(6 - 1.5, abs=0.02)


def test_render_is_deterministic_and_bounded():
    scene = synth.load_scene(CONFIG_DIR / "desk_train.scene")
    a = synth.render(scene, scene.intrinsics, scene.trajectory[3])
    b = synth.render(scene, scene.intrinsics, scene.trajectory[3])
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].min() >= 0 and a[0].max() <= 1
    lo, hi = synth.DEPTH_LIMITS
    assert a[1].min() >= lo and a[1].max() <= hi


def test_render_rejects_out_of_range():
    with pytest.raises(SceneError):
        synth.render(Scene([Plane((0, 0, 1), 0.2)]), K, IDENT)


def test_warp_cross_oracle():
    scene = synth.load_scene(CONFIG_DIR / "desk_train.scene")
    k = scene.intrinsics
    a, b = scene.trajectory[10], scene.trajectory[11]
    img_a, depth_a = synth.render(scene, k, a)
    img_b, depth_b = synth.render(scene, k, b)
    pose = synth.relative_pose(a, b)
    view = geometry.synthesize_view(img_b, depth_a, pose, k, pose_grad=False)
    mask = synth.occlusion_free_mask(depth_a, depth_b, pose, k)
    assert mask.mean() > 0.7
    assert np.abs(view.image - img_a)[mask].mean() < 1e-3


def test_static_triplet():
    scene = Scene([Plane((0, 0, 1), 8.0, Texture(seed=2))], trajectory=[IDENT] * 3)
    t = synth.generate_triplet(scene, K, 1)
    assert np.array_equal(t.prev, t.cur) and np.array_equal(t.next, t.cur)
    for p in (t.pose_to_prev, t.pose_to_next):
        assert same_pose(p, IDENT)


def test_translating_triplet_poses_and_composition():
    traj = synth.linear_trajectory(5, step=(0.2, 0, 0))
    scene = Scene([Plane((0, 0, 1), 8.0)], trajectory=traj)
    t = synth.generate_triplet(scene, K, 2)
    assert np.allclose(t.pose_to_prev.t, (0.2, 0, 0), atol=1e-15)
    assert np.allclose(t.pose_to_next.t, (-0.2, 0, 0), atol=1e-15)
    # the source camera pose composed with the relative transform recovers the target pose
    for src, rel in ((traj[1], t.pose_to_prev), (traj[3], t.pose_to_next)):
        assert same_pose(src.compose(rel), traj[2])
    with pytest.raises(IndexError):
        synth.generate_triplet(scene, K, 4)


def test_rotating_trajectory_composition():
    traj = synth.linear_trajectory(4, step=(0.1, 0.0, 0.05), rotation_step=(0.0, 0.03, 0.01))
    for i in range(1, 3):
        for j in (i - 1, i + 1):
            rel = synth.relative_pose(traj[i], traj[j])
            assert same_pose(traj[j].compose(rel), traj[i])


def test_generate_triplets_covers_interior_frames():
    scene = Scene([Plane((0, 0, 1), 8.0)], trajectory=synth.linear_trajectory(6), intrinsics=K)
    assert [t.index for t in synth.generate_triplets(scene)] == [1, 2, 3, 4]


# -- degradations -----------------------------------------------------------------


def test_night_closed_form():
    out = synth.degrade(np.full((4, 4, 3), 0.5), np.ones((4, 4)), DegradationParams("night", noise=0.0))
    assert np.allclose(out, 0.3 * 0.5**2.2, rtol=1e-14)
    assert out[0, 0, 0] == pytest.approx(0.0652, abs=1e-4)


def test_fog_limits():
    rng = np.random.default_rng(0)
    img, depth = rng.uniform(size=(5, 5, 3)), rng.uniform(1, 30, (5, 5))
    assert np.array_equal(synth.degrade(img, depth, DegradationParams("fog", beta=0.0)), img)
    assert np.allclose(synth.degrade(img, depth, DegradationParams("fog", beta=1e4, airlight=0.7)), 0.7)


@settings(max_examples=40)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.integers(0, 100))
def test_fog_monotone(b1, b2, seed):
    lo, hi = sorted((b1, b2))
    rng = np.random.default_rng(seed)
    img, depth = rng.uniform(size=(4, 4, 3)), rng.uniform(0.5, 60, (4, 4))
    A = 0.8
    d_lo = np.abs(synth.degrade(img, depth, DegradationParams("fog", beta=lo, airlight=A)) - A)
    d_hi = np.abs(synth.degrade(img, depth, DegradationParams("fog", beta=hi, airlight=A)) - A)
    assert np.all(d_hi <= d_lo + 1e-15)


@pytest.mark.parametrize("kind", ["night", "rain", "fog"])
def test_degrade_deterministic_per_seed(kind):
    rng = np.random.default_rng(1)
    img, depth = rng.uniform(size=(16, 16, 3)), rng.uniform(1, 20, (16, 16))
    p = DegradationParams(kind)
    a, b = synth.degrade(img, depth, p, seed=3), synth.degrade(img, depth, p, seed=3)
    assert np.array_equal(a, b) and a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, img)
    if kind != "fog":
        assert not np.array_equal(a, synth.degrade(img, depth, p, seed=4))


def test_rain_streaks_and_params():
    img = np.full((20, 20, 3), 0.4)
    p = DegradationParams("rain", noise=0.0, streak_density=0.05)
    out = synth.degrade(img, np.ones((20, 20)), p, seed=0)
    assert out.max() > 0.4 and np.isclose(out.min(), 0.4)
    for bad in (dict(kind="snow"), dict(kind="night", gamma=0.5), dict(kind="fog", beta=-1.0),
                dict(kind="rain", contrast=0.0)):
        with pytest.raises(ValueError):
            DegradationParams(**bad)


# -- oracle surrogate ---------------------------------------------------------------


def test_oracle_examples():
    d = np.random.default_rng(2).uniform(1, 30, (4, 4))
    assert np.array_equal(synth.oracle_relative_depth(d, scale=1.0), 1 / d)
    assert np.all(synth.oracle_relative_depth(np.full((3, 3), 4.0), scale=2.0) == 0.5)
    with pytest.raises(ValueError):
        synth.oracle_relative_depth(np.zeros((2, 2)))
    a = synth.oracle_relative_depth(d, scale_jitter_seed=5)
    c = a[0, 0] * d[0, 0]
    assert 0.5 <= c <= 2.0 and np.allclose(a * d, c)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_preserves_every_label(seed):
    d = np.random.default_rng(seed).uniform(0.5, 60, (8, 8)).ravel()
    ref = synth.oracle_relative_depth(d, scale=1.0)
    jit = synth.oracle_relative_depth(d, scale_jitter_seed=seed)
    a0, a1 = np.meshgrid(ref, ref, indexing="ij")
    b0, b1 = np.meshgrid(jit, jit, indexing="ij")
    assert np.array_equal(ogd.ordinal_labels(a0, a1), ogd.ordinal_labels(b0, b1))


# -- scene files --------------------------------------------------------------------


def test_scene_files_load():
    train = synth.load_scene(CONFIG_DIR / "desk_train.scene")
    held = synth.load_scene(CONFIG_DIR / "desk_eval.scene")
    assert (train.intrinsics.width, train.intrinsics.height) == (80, 64)
    assert len(train.trajectory) == 42 and len(held.trajectory) == 14
    assert len(train.primitives) == 4
    assert np.allclose(held.trajectory[0].t, (0.125, 0, 0))


@pytest.mark.parametrize("text,line", [
    ("width = 40\nbogus = 3\n", 2),
    ("plane normal=0,0,1\n", 1),
    ("\nsphere center=0,0,5 radius=-1\n", 2),
    ("sphere center=0,0 radius=1\n", 1),
    ("plane normal=0,0,1 offset=5 shiny=yes\n", 1),
    ("# comment\ncube size=2\n", 2),
    ("fx = wide\n", 1),
    ("plane normal=0,0,1 offset=5 texture=marble\n", 1),
])
def test_scene_parse_errors_name_the_line(text, line):
    with pytest.raises(SceneError, match=f"line {line}:"):
        synth.parse_scene(text)


def test_scene_parse_defaults_and_poses():
    s = synth.parse_scene("width = 40\nheight = 30\npose 0 0 0 0.1 0 0\npose 0 0 0 0.2 0 0\n")
    assert s.intrinsics.fx == 36.0 and s.intrinsics.cx == 19.5
    assert [p.t[0] for p in s.trajectory] == [0.1, 0.2]
    with pytest.raises(SceneError):
        synth.parse_scene("trajectory frames=3\npose 0 0 0 0 0 0\n")
    assert math.isclose(synth.parse_scene("background 40 seed=3").background_depth, 40.0)
