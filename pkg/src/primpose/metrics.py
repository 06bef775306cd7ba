"""Pose accuracy metrics: ADD, ADD-S, 2D projection error and rotation /
translation MAE, plus the :class:`MetricReport` summary."""

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial import QhullError

from . import serialization
from .exceptions import InvalidInputError
from .geometry import project_points, rotation_geodesic_deg, transform_points

ADD_THRESHOLD_FRAC = 0.1
PROJ2D_THRESHOLD_PX = 5.0
EXACT_DIAMETER_LIMIT = 5000
ADDS_MAX_POINTS = 2000


def _max_pairwise_distance(pts, chunk=1024):
    best = 0.0
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def model_diameter(vertices, exact_limit=EXACT_DIAMETER_LIMIT):
    """Largest distance between any two vertices.

    Up to ``exact_limit`` distinct vertices the search is brute force; above
    it only convex-hull vertices are compared, which gives the same answer.
    """
    pts = np.unique(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), axis=0)
    if len(np.asarray(vertices).reshape(-1, 3)) < 2:
        raise InvalidInputError("diameter needs at least two vertices")
    if len(pts) > exact_limit:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat or degenerate cloud: fall back to brute force
    return _max_pairwise_distance(pts)


def _subsample(vertices, max_points):
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if max_points is not None and len(v) > max_points:
        stride = int(np.ceil(len(v) / max_points))
        v = v[::stride]
    return v


def add_metric(pose_gt, pose_est, vertices):
    """Mean distance between corresponding model points under the two poses."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise InvalidInputError("ADD needs at least one vertex")
    diff = transform_points(pose_gt, v) - transform_points(pose_est, v)
    return float(np.linalg.norm(diff, axis=1).mean())


def adds_metric(pose_gt, pose_est, vertices, exact=False, accelerate=False,
                max_points=ADDS_MAX_POINTS):
    """Mean distance from each ground-truth point to the closest estimated point.

    Unless ``exact`` is set, models with more than ``max_points`` vertices are
    subsampled with a uniform stride. ``accelerate`` swaps the brute-force
    nearest-neighbour search for a k-d tree (same result).
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise InvalidInputError("ADD-S needs at least one vertex")
    if not exact:
        v = _subsample(v, max_points)
    a = transform_points(pose_gt, v)
    b = transform_points(pose_est, v)
    if accelerate:
        dist, _ = cKDTree(b).query(a)
        return float(dist.mean())
    total = 0.0
    for i in range(0, len(a), 512):
        d2 = ((a[i:i + 512, None, :] - b[None, :, :]) ** 2).sum(-1)
        total += float(np.sqrt(d2.min(axis=1)).sum())
    return total / len(a)


def pose_correct_add(dist, diameter, threshold_frac=ADD_THRESHOLD_FRAC):
    if not diameter > 0:
        raise InvalidInputError("diameter must be positive")
    return bool(dist < threshold_frac * diameter)


def projection2d_error(pose_gt, pose_est, vertices, K, threshold=PROJ2D_THRESHOLD_PX,
                       max_points=None):
    """Mean pixel distance between the model projected under both poses.

    Returns ``(error_px, correct)`` where correct means ``error < threshold``.
    """
    v = _subsample(vertices, max_points)
    if len(v) == 0:
        raise InvalidInputError("projection error needs at least one vertex")
    pa = project_points(K, transform_points(pose_gt, v))
    pb = project_points(K, transform_points(pose_est, v))
    err = float(np.linalg.norm(pa - pb, axis=1).mean())
    return err, bool(err < threshold)


def pose_mae(pairs, exclude_symmetric=None):
    """Mean geodesic rotation error (deg) and translation error (mm).

    Pairs flagged in ``exclude_symmetric`` are skipped, following the usual
    protocol that symmetric objects have no unique pose.
    """
    pairs = list(pairs)
    if exclude_symmetric is None:
        exclude_symmetric = [False] * len(pairs)
    kept = [p for p, sym in zip(pairs, exclude_symmetric) if not sym]
    if not kept:
        raise InvalidInputError("no pose pairs left after excluding symmetric objects")
    rot = np.mean([rotation_geodesic_deg(g.rotation, e.rotation) for g, e in kept])
    trans = np.mean([np.linalg.norm(g.translation - e.translation) for g, e in kept])
    return float(rot), float(trans * 1000.0)


@dataclass
class MetricReport:
    add_mean: float
    add_accuracy: float
    proj2d_mean: float
    proj2d_accuracy: float
    rot_mae: float
    trans_mae: float
    n_samples: int

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        return serialization.format_record(self.to_dict())

    def to_json(self):
        # NaN (MAE with every pair excluded) has no JSON spelling
        d = {k: (None if isinstance(v, float) and np.isnan(v) else v)
             for k, v in self.to_dict().items()}
        return serialization.dumps(d)

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            v = d[f.name]
            if f.name == "n_samples":
                kw[f.name] = int(v)
            else:
                kw[f.name] = float("nan") if v is None else float(v)
        return cls(**kw)


def evaluate_poses(pairs, vertices, K, diameter=None, symmetric=False):
    """Aggregate all metrics over ``(pose_gt, pose_est)`` pairs.

    ``symmetric`` switches ADD to ADD-S and removes the pairs from the MAE;
    when every pair is excluded the MAE fields are NaN.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("no pose pairs to evaluate")
    if diameter is None:
        diameter = model_diameter(vertices)
    dist_fn = adds_metric if symmetric else add_metric
    add_d = np.array([dist_fn(g, e, vertices) for g, e in pairs])
    add_ok = np.array([pose_correct_add(d, diameter) for d in add_d])
    proj = [projection2d_error(g, e, vertices, K) for g, e in pairs]
    proj_e = np.array([p[0] for p in proj])
    proj_ok = np.array([p[1] for p in proj])
    if symmetric:
        rot, trans = float("nan"), float("nan")
    else:
        rot, trans = pose_mae(pairs)
    return MetricReport(
        add_mean=float(add_d.mean()),
        add_accuracy=float(add_ok.mean()),
        proj2d_mean=float(proj_e.mean()),
        proj2d_accuracy=float(proj_ok.mean()),
        rot_mae=rot,
        trans_mae=trans,
        n_samples=len(pairs),
    )
