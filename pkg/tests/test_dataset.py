import json
import shutil
import warnings

import numpy as np
import pytest

from primpose.dataset import (Dataset, GenConfig, augment_domain_randomization, generate_dataset,
                              load_dataset, make_sample, sample_pose, validate_sample)
from primpose.exceptions import ConfigError, DatasetParseError
from primpose.geometry import bbox_from_mask
from primpose.primitive import primitive_corners_3d, project_keypoints


def _bound(cube, spec):
    return np.vstack([cube.vertices, primitive_corners_3d(spec)])


def test_config_validation():
    with pytest.raises(ConfigError):
        GenConfig(n_samples=0).validate()
    with pytest.raises(ConfigError):
        GenConfig(tz_min=0.0).validate()
    with pytest.raises(ConfigError):
        GenConfig(tz_min=1.0, tz_max=0.5).validate()
    with pytest.raises(ConfigError):
        GenConfig(kappa=0.9).validate()
    GenConfig().validate()


def test_config_from_strings():
    c = GenConfig.from_dict({"n_samples": "5", "background": "true", "jitter": "0.1"})
    assert c.n_samples == 5 and c.background is True and c.jitter == 0.1
    assert GenConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"n_sample": 3})
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"n_samples": "2.5"})


def test_sample_pose_infeasible_margin(K, cube, spec):
    with pytest.raises(ConfigError):
        sample_pose(np.random.default_rng(0), GenConfig(margin_px=K.height // 2), K, _bound(cube, spec))


def test_sample_pose_keeps_margin(K, cube, spec):
    cfg = GenConfig(margin_px=10)
    rng = np.random.default_rng(0)
    pts = _bound(cube, spec)
    for _ in range(200):
        pose = sample_pose(rng, cfg, K, pts)
        uv = project_keypoints(pose, K, spec)
        assert uv.min() >= 10 and uv[:, 0].max() <= K.width - 11 and uv[:, 1].max() <= K.height - 11
        assert cfg.tz_min <= pose.translation[2] <= cfg.tz_max


def test_sample_pose_uniform_rotation(K, cube, spec):
    rng = np.random.default_rng(42)
    pts = _bound(cube, spec)
    cfg = GenConfig()
    qs = np.array([sample_pose(rng, cfg, K, pts).rotation for _ in range(10000)])
    # for a uniform unit quaternion, q.r has mean 0 and variance 1/4
    bound = 3 * 0.5 / np.sqrt(len(qs))
    for r in (np.array([1.0, 0, 0, 0]), np.array([0.5, 0.5, -0.5, 0.5])):
        assert abs((qs @ r).mean()) <= bound
    assert np.mean((qs @ np.array([0, 1.0, 0, 0])) ** 2) == pytest.approx(0.25, abs=0.015)


def test_sample_pose_deterministic(K, cube, spec):
    pts = _bound(cube, spec)
    ra, rb = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(20):
        a = sample_pose(ra, GenConfig(), K, pts)
        b = sample_pose(rb, GenConfig(), K, pts)
        assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


def test_augment_identity(rng):
    img = rng.uniform(size=(20, 30, 3))
    out, rects = augment_domain_randomization(img, np.ones((20, 30), bool), rng, GenConfig())
    np.testing.assert_array_equal(out, img)
    assert rects == []


def test_augment_noise_statistics():
    rng = np.random.default_rng(0)
    img = np.full((250, 400, 3), 0.5)
    out, _ = augment_domain_randomization(img, np.ones(img.shape[:2], bool), rng, GenConfig(noise_sigma=0.05))
    d = (out - img)[(out > 0) & (out < 1)]
    assert d.size >= 100000
    assert abs(d.std() - 0.05) <= 0.005


def test_augment_deterministic_and_ordered():
    img = np.zeros((60, 80, 3))
    mask = np.zeros((60, 80), bool)
    mask[20:40, 30:50] = True
    img[mask] = 0.7
    cfg = GenConfig(background=True, jitter=0.1, occluders=2, noise_sigma=0.02)
    a, ra = augment_domain_randomization(img, mask, np.random.default_rng(5), cfg)
    b, rb = augment_domain_randomization(img, mask, np.random.default_rng(5), cfg)
    np.testing.assert_array_equal(a, b)
    assert ra == rb and len(ra) == 2
    assert a.min() >= 0 and a.max() <= 1


def test_background_only_outside_mask():
    img = np.zeros((60, 80, 3))
    mask = np.zeros((60, 80), bool)
    mask[10:30, 10:30] = True
    img[mask] = 0.3
    out, _ = augment_domain_randomization(img, mask, np.random.default_rng(1), GenConfig(background=True))
    np.testing.assert_array_equal(out[mask], img[mask])


def test_make_sample_invariants(K, cube, spec):
    s = make_sample(cube, spec, K, GenConfig(seed=2), 4)
    np.testing.assert_allclose(s.keypoints2d, project_keypoints(s.pose, K, spec), atol=1e-6)
    assert s.bbox.as_tuple() == bbox_from_mask(s.mask).as_tuple()
    assert validate_sample(s, K, spec) == []


def test_roundtrip_exact(tmp_path, K, cube, spec):
    root = tmp_path / "d"
    generate_dataset(cube, spec, K, GenConfig(n_samples=1, seed=9), root)
    s = next(iter(load_dataset(root)))
    ref = make_sample(cube, spec, K, GenConfig(n_samples=1, seed=9), 0)
    np.testing.assert_array_equal(s.pose.rotation, ref.pose.rotation)
    np.testing.assert_array_equal(s.pose.translation, ref.pose.translation)
    np.testing.assert_array_equal(s.keypoints2d, ref.keypoints2d)
    to8 = lambda a: np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)  # noqa: E731
    np.testing.assert_array_equal(to8(s.rgb), to8(ref.rgb))
    np.testing.assert_array_equal(s.mask, ref.mask)


def test_layout_and_meta(small_dataset):
    meta = json.loads((small_dataset / "meta.json").read_text())
    assert meta["format_version"] == "1"
    assert {"intrinsics", "primitive", "config"} <= set(meta)
    sm = json.loads((small_dataset / "samples" / "000003_meta.json").read_text())
    assert len(sm["pose.quat_wxyz"]) == 4 and len(sm["pose.t_m"]) == 3
    assert len(sm["bbox"]) == 4 and np.array(sm["keypoints_px"]).shape == (21, 2)
    for kind in ("rgb", "prim", "mask"):
        assert (small_dataset / "samples" / f"000003_{kind}.png").is_file()


def test_load_ordered_and_valid(small_dataset):
    samples = list(load_dataset(small_dataset))
    assert [s.sample_id for s in samples] == list(range(12))
    assert all(not s.violations for s in samples)
    assert len(Dataset(small_dataset)) == 12


def test_subset_regenerates_identically(tmp_path, small_dataset, K, cube, spec):
    root = tmp_path / "sub"
    generate_dataset(cube, spec, K, GenConfig(n_samples=12, seed=3), root, sample_ids=[5, 7])
    for sid in (5, 7):
        for kind in ("meta.json", "rgb.png", "prim.png", "mask.png"):
            name = f"{sid:06d}_{kind}"
            assert (root / "samples" / name).read_bytes() == (small_dataset / "samples" / name).read_bytes()


def test_regeneration_byte_identical(tmp_path, K, cube, spec):
    cfg = GenConfig(n_samples=4, seed=1, background=True, jitter=0.05, occluders=1, noise_sigma=0.01)
    generate_dataset(cube, spec, K, cfg, tmp_path / "a")
    generate_dataset(cube, spec, K, cfg, tmp_path / "b", n_jobs=3)
    for name in ("meta.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_directory_warns(tmp_path, small_dataset):
    root = tmp_path / "empty"
    root.mkdir()
    shutil.copy(small_dataset / "meta.json", root / "meta.json")
    (root / "samples").mkdir()
    with pytest.warns(UserWarning, match="no samples"):
        assert list(load_dataset(root)) == []


def test_corrupted_field_names_field(tmp_path, small_dataset):
    root = tmp_path / "bad"
    shutil.copytree(small_dataset, root)
    p = root / "samples" / "000002_meta.json"
    d = json.loads(p.read_text())
    d["pose.t_m"] = [0.0, "x"]
    p.write_text(json.dumps(d))
    with pytest.raises(DatasetParseError) as exc:
        list(load_dataset(root))
    assert exc.value.field == "pose.t_m" and "000002_meta.json" in str(exc.value)


def test_missing_file(tmp_path, small_dataset):
    root = tmp_path / "miss"
    shutil.copytree(small_dataset, root)
    (root / "samples" / "000001_rgb.png").unlink()
    with pytest.raises(DatasetParseError, match="000001_rgb.png"):
        list(load_dataset(root))


def test_invariant_violation_reported(tmp_path, small_dataset):
    root = tmp_path / "viol"
    shutil.copytree(small_dataset, root)
    p = root / "samples" / "000000_meta.json"
    d = json.loads(p.read_text())
    d["keypoints_px"][3][0] += 0.5
    p.write_text(json.dumps(d))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        s = next(iter(load_dataset(root, load_images=False)))
    assert s.violations and any("keypoint" in v for v in s.violations)
    assert w


def test_not_a_dataset(tmp_path):
    with pytest.raises(DatasetParseError):
        Dataset(tmp_path / "nope")
