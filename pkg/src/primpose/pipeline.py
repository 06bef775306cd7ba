"""Oracle end-to-end pose pipeline and scikit-learn style estimators.

The learned parts of a primitive-based pose network (reconstruction,
keypoint regression, depth regression) are replaced by controllable noise
models acting on ground truth:

* the detector box is shifted to a requested IoU and inflated by ``kappa``;
* predicted keypoints are ground truth plus Gaussian noise, with a fraction
  replaced by uniform outliers inside the crop and keypoints under random
  occluder rectangles replaced the same way;
* in ``"image"`` mode the center and arm tips come from a primitive rendered
  into the crop camera, relocalized to the full frame and analysed with
  :func:`estimate_center` and :func:`detect_axis_tips`.

Rotation comes from RANSAC PnP on the keypoints; translation from the center
and tip-face centers under that rotation, seeded by back-projecting the
center at the PnP depth.

All random draws for a sample happen up front in a fixed order from
``default_rng(seed + sample_id)``, so runs that differ only in the IoU or
noise amplitudes see the same underlying random numbers.
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import serialization
from ._validation import check_points
from .dataset import _coerce
from .exceptions import (ConfigError, DegenerateInputError, EmptyObjectError, InvalidInputError,
                         NoConsensusError, NoSolutionError, NumericalError)
from .geometry import (BoundingBox, CameraIntrinsics, Pose, backproject_translation, crop_intrinsics,
                       degrade_bbox, inflate_bbox, project_points, relocalize_object)
from .localize import detect_axis_tips, estimate_center, refine_translation_fixed_rotation
from .metrics import evaluate_poses
from .pnp import refine_pnp_lm, solve_pnp_dlt, solve_pnp_ransac
from .primitive import AXIS_NAMES, CENTER_INDEX, N_KEYPOINTS, PrimitiveSpec, primitive_corners_3d
from .render import random_rectangles, render_primitive

ESTIMATES_VERSION = "1"
# Keypoints feeding the translation step must reproject within this many
# RANSAC thresholds under the PnP pose.
TRANSLATION_GATE = 2.0
NONROBUST_MAX_MEDIAN = 3.0
MODES = ("keypoints", "image")


@dataclass
class NoiseModel:
    sigma_px: float = 0.0
    outlier_frac: float = 0.0
    occluders: int = 0
    occluder_min: float = 0.1
    occluder_max: float = 0.3
    iou: float = 1.0
    kappa: float = 1.3
    mode: str = "keypoints"
    crop_size: int = 128

    def __post_init__(self):
        if self.sigma_px < 0:
            raise ConfigError("sigma_px must be non-negative")
        if not 0 <= self.outlier_frac <= 1:
            raise ConfigError("outlier_frac must lie in [0, 1]")
        if self.occluders < 0:
            raise ConfigError("occluders must be non-negative")
        if not 0 < self.occluder_min <= self.occluder_max <= 1:
            raise ConfigError("occluder size range must satisfy 0 < min <= max <= 1")
        if not 0 < self.iou <= 1:
            raise ConfigError(f"iou must lie in (0, 1], got {self.iou}")
        if self.kappa < 1:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.crop_size < 8:
            raise ConfigError("crop_size must be at least 8")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        """Build from a mapping whose values may be strings; unknown keys are
        a :class:`ConfigError`."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown noise-model key {k!r}")
            kw[k] = _coerce(v, type(known[k].default), k)
        return cls(**kw)


@dataclass
class SampleEstimate:
    sample_id: int
    pose: Pose
    pose_pnp: Pose
    status: str
    n_inliers: int
    crop: BoundingBox
    observations: dict


@dataclass
class _Draws:
    direction: float
    noise: np.ndarray
    outliers: np.ndarray
    outlier_pos: np.ndarray
    rects: list
    ransac_seed: int


def _draw(rng, noise, frame):
    direction = float(rng.uniform(0.0, 2.0 * math.pi))
    gauss = rng.normal(0.0, 1.0, (N_KEYPOINTS, 2))
    order = rng.permutation(N_KEYPOINTS)
    outlier_pos = rng.uniform(0.0, 1.0, (N_KEYPOINTS, 2))
    rects = random_rectangles(frame, noise.occluders, (noise.occluder_min, noise.occluder_max), rng)
    ransac_seed = int(rng.integers(0, 2 ** 31 - 1))
    n_out = int(round(noise.outlier_frac * N_KEYPOINTS))
    outliers = np.zeros(N_KEYPOINTS, dtype=bool)
    outliers[order[:n_out]] = True
    return _Draws(direction, noise.sigma_px * gauss, outliers, outlier_pos, rects, ransac_seed)


def detection_crop(bbox, noise, direction, frame):
    """Box shifted to the requested IoU, inflated by ``kappa`` and clipped."""
    det = degrade_bbox(bbox, noise.iou, direction)
    crop = inflate_bbox(det, noise.kappa)
    try:
        return crop.clip(frame)
    except InvalidInputError:
        # shifted entirely off-frame; keep the unclipped box
        return crop


def simulate_keypoints(keypoints, crop, draws):
    """Ground-truth keypoints corrupted by the drawn noise, outliers and
    occluders. Replacement positions are uniform over ``crop``; clean
    keypoints are not clamped to it, since a regressor's output is not bound
    to its input window."""
    kp = np.asarray(keypoints, dtype=np.float64) + draws.noise
    bad = draws.outliers.copy()
    for u0, v0, u1, v1 in draws.rects:
        inside = (kp[:, 0] >= u0) & (kp[:, 0] < u1) & (kp[:, 1] >= v0) & (kp[:, 1] < v1)
        bad |= inside
    lo = np.array([crop.u_min, crop.v_min])
    size = np.array([crop.width, crop.height])
    kp[bad] = lo + draws.outlier_pos[bad] * size
    return kp


def _line_intersection(p1, p2, p3, p4):
    """Intersection of lines p1-p2 and p3-p4, or None if parallel."""
    d1 = p2 - p1
    d2 = p4 - p3
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12 * max(np.dot(d1, d1), np.dot(d2, d2), 1e-300):
        return None
    s = ((p3[0] - p1[0]) * d2[1] - (p3[1] - p1[1]) * d2[0]) / den
    return p1 + s * d1


def tip_centers_from_corners(kp, usable):
    """Projected tip-face centers as the intersection of each face's diagonals.

    The diagonal intersection is preserved by perspective projection, so for
    exact corners this is exactly the projected face center. An axis is
    skipped unless all four of its corners are ``usable``.
    """
    out = {}
    for a, name in enumerate(AXIS_NAMES):
        idx = 8 + 4 * a + np.arange(4)
        if not np.all(usable[idx]):
            continue
        c = kp[idx]
        # block order is (-,-), (-,+), (+,-), (+,+): diagonals 0-3 and 1-2
        p = _line_intersection(c[0], c[3], c[1], c[2])
        if p is not None:
            out[name] = (float(p[0]), float(p[1]))
    return out


def _reprojection(pose, X, kp, K):
    pc = X @ pose.R.T + pose.t
    if np.any(pc[:, 2] <= 0):
        return np.full(len(X), np.inf)
    return np.linalg.norm(project_points(K, pc) - kp, axis=1)


def _solve_rotation(X, kp, K, ransac_seed, iterations, threshold):
    try:
        res = solve_pnp_ransac(X, kp, K, iterations=iterations, inlier_threshold=threshold,
                               seed=ransac_seed)
        return res.pose, res.inliers, "ok"
    except (NoConsensusError, DegenerateInputError, NumericalError, InvalidInputError):
        pass
    try:
        init = solve_pnp_dlt(X, kp, K)
        res = refine_pnp_lm(X, kp, K, init)
    except (DegenerateInputError, NumericalError, InvalidInputError):
        return None, np.zeros(len(X), dtype=bool), "pnp-failed"
    # a least-squares fit through outliers is only kept if it explains the data
    if np.median(_reprojection(res.pose, X, kp, K)) > NONROBUST_MAX_MEDIAN * threshold:
        return None, np.zeros(len(X), dtype=bool), "pnp-failed"
    return res.pose, np.ones(len(X), dtype=bool), "pnp-nonrobust"


def _image_observations(sample_pose, spec, K, crop, noise, rects):
    size = (noise.crop_size, noise.crop_size)
    Kc = crop_intrinsics(K, crop, size)
    prim = render_primitive(spec, sample_pose, Kc)
    full = relocalize_object(prim.color, crop, K.frame, background=0.0)
    for u0, v0, u1, v1 in rects:
        full[v0:v1, u0:u1] = 0.0
    center = estimate_center(full)
    obs = {"center": center}
    obs.update(detect_axis_tips(full, center, spec))
    return obs


def estimate_sample(sample, K, spec, noise=None, seed=0, ransac_iterations=100,
                    inlier_threshold=3.0):
    """Run the oracle pipeline on one :class:`DatasetSample`.

    Always returns a :class:`SampleEstimate`; ``status`` records which
    fallback produced the pose (``"ok"``, ``"pnp-nonrobust"``,
    ``"pnp-translation"``, ``"pnp-failed"``).
    """
    noise = NoiseModel() if noise is None else noise
    rng = np.random.default_rng(int(seed) + int(sample.sample_id))
    draws = _draw(rng, noise, K.frame)
    crop = detection_crop(sample.bbox, noise, draws.direction, K.frame)
    kp = simulate_keypoints(sample.keypoints2d, crop, draws)
    X = primitive_corners_3d(spec)

    pose_pnp, inliers, status = _solve_rotation(X, kp, K, draws.ransac_seed, ransac_iterations,
                                                inlier_threshold)
    if pose_pnp is None:
        # no rotation at all: identity at the crop center, depth from the box size
        tz = K.f_u * 2.0 * spec.extent / max(crop.width, 1.0)
        t = backproject_translation(K, *crop.center, tz)
        pose = Pose(np.array([1.0, 0.0, 0.0, 0.0]), t)
        return SampleEstimate(sample.sample_id, pose, pose, status, 0, crop, {})

    if noise.mode == "image":
        try:
            obs = _image_observations(sample.pose, spec, K, crop, noise, draws.rects)
        except EmptyObjectError:
            obs = {}
    else:
        obs = {}
        usable = _reprojection(pose_pnp, X, kp, K) < TRANSLATION_GATE * inlier_threshold
        if usable[CENTER_INDEX]:
            obs["center"] = (float(kp[CENTER_INDEX, 0]), float(kp[CENTER_INDEX, 1]))
        obs.update(tip_centers_from_corners(kp, usable))

    t_pnp = pose_pnp.t
    if "center" in obs:
        c = obs["center"]
    else:
        c = project_points(K, t_pnp[None])[0]
    t = None
    if len(obs) >= 2:
        try:
            t = refine_translation_fixed_rotation(pose_pnp.R, obs, spec, K,
                                                  backproject_translation(K, c[0], c[1], t_pnp[2]))
        except NoSolutionError:
            t = None
    if t is None:
        t = t_pnp
        status = "pnp-translation" if status == "ok" else status
    pose = Pose(pose_pnp.rotation, t)
    return SampleEstimate(sample.sample_id, pose, pose_pnp, status, int(inliers.sum()), crop, obs)


def estimate_dataset(samples, K, spec, noise=None, seed=0, **kw):
    return [estimate_sample(s, K, spec, noise, seed, **kw) for s in samples]


def evaluate_estimates(samples, estimates, model, K):
    """:class:`MetricReport` of estimates against the samples' ground truth.

    Samples and estimates are matched by ``sample_id``; a missing estimate
    raises :class:`InvalidInputError` listing the ids.
    """
    gt = {s.sample_id: s.pose for s in samples}
    est = {e.sample_id: (e.pose if isinstance(e, SampleEstimate) else e[1]) for e in estimates} \
        if not isinstance(estimates, dict) else estimates
    missing = sorted(set(gt) - set(est))
    extra = sorted(set(est) - set(gt))
    if missing or extra:
        raise InvalidInputError(f"sample ids do not match: missing {missing[:20]}, unexpected {extra[:20]}")
    pairs = [(gt[i], est[i]) for i in sorted(gt)]
    return evaluate_poses(pairs, model.vertices, K, diameter=model.diameter,
                          symmetric=model.is_symmetric)


# -- estimate files -----------------------------------------------------------------


def estimates_to_dict(estimates, noise=None, seed=None):
    return {
        "format_version": ESTIMATES_VERSION,
        "seed": seed,
        "noise": None if noise is None else noise.to_dict(),
        "estimates": [
            {
                "sample_id": int(e.sample_id),
                "pose.quat_wxyz": [float(x) for x in e.pose.rotation],
                "pose.t_m": [float(x) for x in e.pose.translation],
                "status": e.status,
                "n_inliers": int(e.n_inliers),
            }
            for e in estimates
        ],
    }


def write_estimates(path, estimates, noise=None, seed=None):
    serialization.dump(estimates_to_dict(estimates, noise, seed), path)


def read_estimates(path):
    """Map ``sample_id -> Pose`` from an estimates file."""
    import json
    from pathlib import Path

    try:
        d = json.loads(Path(path).read_text())
        out = {}
        for e in d["estimates"]:
            out[int(e["sample_id"])] = Pose(np.asarray(e["pose.quat_wxyz"], dtype=np.float64),
                                            np.asarray(e["pose.t_m"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed estimates file ({exc})") from exc
    return out


# -- scikit-learn style wrappers ------------------------------------------------------


def _check_K(K):
    if K is None:
        return CameraIntrinsics.default()
    if isinstance(K, dict):
        return CameraIntrinsics.from_dict(K)
    if not isinstance(K, CameraIntrinsics):
        raise InvalidInputError("K must be CameraIntrinsics, a dict of its fields, or None")
    return K


class PnPEstimator(BaseEstimator):
    """Pose from 2D-3D correspondences behind the ``fit``/``predict`` API.

    ``fit(points3d)`` stores the model points; ``predict(points2d)`` takes one
    ``(n, 2)`` array or a batch ``(m, n, 2)`` and returns poses. With
    ``robust=True`` the solver is RANSAC, otherwise DLT followed by LM.
    """

    def __init__(self, K=None, robust=True, iterations=100, inlier_threshold=3.0, seed=0,
                 max_iters=50):
        self.K = K
        self.robust = robust
        self.iterations = iterations
        self.inlier_threshold = inlier_threshold
        self.seed = seed
        self.max_iters = max_iters

    def fit(self, X, y=None):
        self.points3d_ = check_points(X, 3, "points3d", min_count=6)
        self.n_points_ = len(self.points3d_)
        self.K_ = _check_K(self.K)
        return self

    def _check_fitted(self):
        if not hasattr(self, "points3d_"):
            raise NotFittedError("PnPEstimator is not fitted; call fit(points3d) first")

    def solve(self, points2d):
        """Full :class:`PnPResult` for one ``(n, 2)`` observation."""
        self._check_fitted()
        x = check_points(points2d, 2, "points2d")
        if len(x) != self.n_points_:
            raise InvalidInputError(f"expected {self.n_points_} points, got {len(x)}")
        if self.robust:
            return solve_pnp_ransac(self.points3d_, x, self.K_, iterations=self.iterations,
                                    inlier_threshold=self.inlier_threshold, seed=self.seed,
                                    max_iters=self.max_iters)
        init = solve_pnp_dlt(self.points3d_, x, self.K_)
        return refine_pnp_lm(self.points3d_, x, self.K_, init, max_iters=self.max_iters)

    def predict(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            return self.solve(X).pose
        if X.ndim != 3:
            raise InvalidInputError(f"expected (n, 2) or (m, n, 2) points, got shape {X.shape}")
        return [self.solve(x).pose for x in X]


class PrimitivePoseEstimator(BaseEstimator):
    """The oracle pipeline as an estimator over :class:`DatasetSample` lists.

    ``fit`` takes the intrinsics and primitive from a
    :class:`~primpose.dataset.Dataset` when given one (explicit ``K`` /
    ``spec`` parameters win); nothing is learned.
    """

    def __init__(self, K=None, spec=None, sigma_px=0.0, outlier_frac=0.0, occluders=0, iou=1.0,
                 kappa=1.3, mode="keypoints", ransac_iterations=100, inlier_threshold=3.0, seed=0):
        self.K = K
        self.spec = spec
        self.sigma_px = sigma_px
        self.outlier_frac = outlier_frac
        self.occluders = occluders
        self.iou = iou
        self.kappa = kappa
        self.mode = mode
        self.ransac_iterations = ransac_iterations
        self.inlier_threshold = inlier_threshold
        self.seed = seed

    def fit(self, X=None, y=None):
        K = self.K if self.K is not None else getattr(X, "K", None)
        spec = self.spec if self.spec is not None else getattr(X, "spec", None)
        if spec is None:
            raise InvalidInputError("a PrimitiveSpec is required (parameter or dataset)")
        if isinstance(spec, dict):
            spec = PrimitiveSpec.from_dict(spec)
        self.K_ = _check_K(K)
        self.spec_ = spec
        self.noise_ = NoiseModel(sigma_px=self.sigma_px, outlier_frac=self.outlier_frac,
                                 occluders=self.occluders, iou=self.iou, kappa=self.kappa,
                                 mode=self.mode)
        return self

    def _check_fitted(self):
        if not hasattr(self, "spec_"):
            raise NotFittedError("PrimitivePoseEstimator is not fitted")

    def estimate(self, X):
        """Per-sample :class:`SampleEstimate` records."""
        self._check_fitted()
        return estimate_dataset(X, self.K_, self.spec_, self.noise_, self.seed,
                                ransac_iterations=self.ransac_iterations,
                                inlier_threshold=self.inlier_threshold)

    def predict(self, X):
        return [e.pose for e in self.estimate(X)]
