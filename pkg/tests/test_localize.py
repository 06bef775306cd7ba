import numpy as np
import pytest

from primpose.exceptions import EmptyObjectError, NoSolutionError
from primpose.geometry import Pose, project_points
from primpose.localize import (detect_axis_tips, estimate_center, refine_translation,
                               refine_translation_fixed_rotation, translation_from_center)
from primpose.primitive import AXIS_NAMES, tip_face_centers
from primpose.render import render_mesh, render_primitive

from conftest import random_pose


def _true_obs(pose, K, spec):
    P = np.vstack([np.zeros(3), tip_face_centers(spec)]) @ pose.R.T + pose.translation
    uv = project_points(K, P)
    return {"center": tuple(uv[0]), **{n: tuple(uv[i + 1]) for i, n in enumerate(AXIS_NAMES)}}


def test_center_single_pixel():
    img = np.zeros((40, 30, 3))
    img[20, 10] = [1, 0, 0]
    assert estimate_center(img) == (10.0, 20.0)


def test_center_background_only():
    with pytest.raises(EmptyObjectError):
        estimate_center(np.zeros((10, 10, 3)))


def test_center_symmetric_render(K, cube):
    r = render_mesh(cube, Pose(translation=np.array([0, 0, 0.6])), K)
    c = estimate_center(r)
    assert np.hypot(c[0] - K.u_p, c[1] - K.v_p) <= 0.5


def test_tips_red_only():
    img = np.zeros((20, 20, 3))
    img[5:8, 5:15] = [1, 0, 0]
    tips = detect_axis_tips(img, (5, 6))
    assert list(tips) == ["+X"]


def test_tips_background():
    assert detect_axis_tips(np.zeros((8, 8, 3)), (4, 4)) == {}


@pytest.mark.parametrize("tz", [0.5, 0.8, 1.2])
def test_tips_fronto_parallel(K, spec, tz):
    # fronto-parallel: +X and +Y arms in the image plane, +Z toward the camera axis
    for t in ([0, 0, tz], [0.05 * tz, -0.04 * tz, tz]):
        pose = Pose(translation=np.array(t, dtype=float))
        r = render_primitive(spec, pose, K)
        obs = _true_obs(pose, K, spec)
        tips = detect_axis_tips(r, obs["center"], spec)
        for name in ("+X", "+Y"):
            assert np.hypot(*np.subtract(tips[name], obs[name])) <= 3.0


def test_tips_pure_farthest_pixel(K, spec):
    pose = Pose(translation=np.array([0.0, 0.0, 0.8]))
    r = render_primitive(spec, pose, K)
    tips = detect_axis_tips(r, (K.u_p, K.v_p), band=0)
    u, v = tips["+X"]
    assert r.color[int(v), int(u), 0] == 1.0


def test_translation_noise_free(K, spec, rng):
    for _ in range(50):
        pose = random_pose(rng, tz=(0.4, 2.0))
        obs = _true_obs(pose, K, spec)
        T0 = translation_from_center(K, obs["center"], pose.translation[2] * 1.2)
        t = refine_translation_fixed_rotation(pose.R, obs, spec, K, T0)
        assert np.linalg.norm(t - pose.translation) < 1e-6


def test_translation_two_observations(K, spec, rng):
    pose = random_pose(rng)
    obs = _true_obs(pose, K, spec)
    sub = {"center": obs["center"], "+Y": obs["+Y"]}
    t = refine_translation_fixed_rotation(pose.R, sub, spec, K, pose.translation * [1, 1, 0.8])
    assert np.linalg.norm(t - pose.translation) < 1e-6


def test_translation_center_only_is_underdetermined(K, spec):
    pose = Pose(translation=np.array([0, 0, 1.0]))
    with pytest.raises(NoSolutionError):
        refine_translation_fixed_rotation(pose.R, {"center": (320, 240)}, spec, K, pose.translation)


def test_translation_rejects_bad_init(K, spec):
    pose = Pose(translation=np.array([0, 0, 1.0]))
    obs = _true_obs(pose, K, spec)
    with pytest.raises(NoSolutionError):
        refine_translation(pose.R, np.zeros((2, 3)), np.array([obs["center"]] * 2), K, [0, 0, -1])


def test_translation_noisy_depth(K, spec):
    rng = np.random.default_rng(2)
    errs = []
    for _ in range(200):
        pose = Pose(random_pose(rng).rotation, np.array([0.0, 0.0, 1.0]))
        obs = {k: tuple(np.add(v, rng.normal(0, 1.0, 2))) for k, v in _true_obs(pose, K, spec).items()}
        T0 = translation_from_center(K, obs["center"], 1.1)
        t = refine_translation_fixed_rotation(pose.R, obs, spec, K, T0)
        errs.append(abs(t[2] - 1.0))
    assert np.median(errs) <= 0.02
