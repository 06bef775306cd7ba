"""Rigid poses, pinhole projection and bounding-box geometry.

Conventions used throughout the package:

* quaternions are stored ``(w, x, y, z)`` with the Hamilton product;
* pixel coordinates are ``(u, v)``, ``u`` to the right and ``v`` down, with
  pixel centers at integer coordinates;
* a :class:`BoundingBox` is half-open on its max side, so pixel ``k`` lies
  inside iff ``u_min <= k < u_max``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_frame, check_quaternion, check_vector3
from .exceptions import BehindCameraError, InvalidDepthError, InvalidInputError

MIN_DEPTH = 1e-9


# -- quaternions --------------------------------------------------------------


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidInputError("cannot normalize a zero or non-finite quaternion")
    return q / n


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``.

    Raises :class:`InvalidInputError` when ``|q|`` is off by more than 1e-6.
    ``q`` and ``-q`` give bit-identical matrices.
    """
    w, x, y, z = check_quaternion(q) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Unit quaternion (``w >= 0``) of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def quat_multiply(a, b):
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def axis_angle_to_quat(axis, angle_rad):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    h = 0.5 * angle_rad
    return np.concatenate([[np.cos(h)], np.sin(h) * axis / n])


def rotvec_to_matrix(w):
    """Rodrigues formula for a rotation vector (axis times angle).

    Accepts ``(3,)`` or a batch ``(..., 3)``.
    """
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = np.zeros(w.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -w[..., 2], w[..., 1]
    K[..., 1, 0], K[..., 1, 2] = w[..., 2], -w[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -w[..., 1], w[..., 0]
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    Kn = K / safe
    full = np.eye(3) + np.sin(safe) * Kn + (1.0 - np.cos(safe)) * (Kn @ Kn)
    # first-order form below 1e-12 rad
    return np.where(small, np.eye(3) + K, full)


def rotation_geodesic_deg(q1, q2):
    """Angle in degrees of the rotation taking ``q1`` to ``q2``.

    Mathematically ``2 acos(|<q1, q2>|)``; evaluated through ``atan2`` on the
    relative quaternion, which stays accurate for tiny angles.
    """
    q1 = check_quaternion(q1, name="q1")
    q2 = check_quaternion(q2, name="q2")
    rel = quat_multiply(quat_conjugate(q1 / np.linalg.norm(q1)), q2 / np.linalg.norm(q2))
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))))


# -- poses ---------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Object-to-camera rigid transform (rotation quaternion + translation in m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = check_quaternion(self.rotation, name="Pose.rotation")
        t = check_vector3(self.translation, name="Pose.translation")
        q = q / np.linalg.norm(q)
        q.flags.writeable = False
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rt(cls, R, t):
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def R(self):
        return quat_to_matrix(self.rotation)

    @property
    def t(self):
        return np.array(self.translation)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def compose(self, other):
        """``self * other``: apply ``other`` first, then ``self``."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        return Pose(q, self.R @ other.translation + self.translation)

    def inverse(self):
        qi = quat_conjugate(self.rotation)
        return Pose(qi, -(quat_to_matrix(qi) @ self.translation))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def transform_point(pose, p):
    """``R p + t``. Accepts a single 3-vector or an ``(n, 3)`` array."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.R.T + pose.translation


transform_points = transform_point


# -- camera ---------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    f_u: float
    f_v: float
    u_p: float
    v_p: float
    width: int
    height: int
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        vals = [self.f_u, self.f_v, self.u_p, self.v_p]
        if not all(np.isfinite(vals)):
            raise InvalidInputError("intrinsics must be finite")
        if self.f_u <= 0 or self.f_v <= 0:
            raise InvalidInputError(f"focal lengths must be positive, got {self.f_u}, {self.f_v}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image size must be positive")
        if self.strict and not (0 <= self.u_p < self.width and 0 <= self.v_p < self.height):
            raise InvalidInputError(
                f"principal point ({self.u_p}, {self.v_p}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def default(cls):
        """640x480 camera with a 600 px focal length."""
        return cls(600.0, 600.0, 320.0, 240.0, 640, 480)

    @property
    def frame(self):
        return (self.width, self.height)

    def matrix(self):
        return np.array([[self.f_u, 0.0, self.u_p], [0.0, self.f_v, self.v_p], [0.0, 0.0, 1.0]])

    def scaled(self, s):
        """Intrinsics for an image resampled by factor ``s`` in both axes."""
        return CameraIntrinsics(
            self.f_u * s, self.f_v * s, self.u_p * s, self.v_p * s,
            max(1, int(round(self.width * s))), max(1, int(round(self.height * s))),
        )

    def to_dict(self):
        return {
            "f_u": float(self.f_u), "f_v": float(self.f_v),
            "u_p": float(self.u_p), "v_p": float(self.v_p),
            "width": int(self.width), "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["f_u"]), float(d["f_v"]), float(d["u_p"]), float(d["v_p"]),
                   int(d["width"]), int(d["height"]))


def project_points(K, p_cam):
    """Pinhole projection of ``(n, 3)`` camera-frame points to ``(n, 2)`` pixels."""
    p = np.atleast_2d(np.asarray(p_cam, dtype=np.float64))
    z = p[:, 2]
    if np.any(~(z > MIN_DEPTH)):
        raise BehindCameraError(f"point with z={z.min():.3g} is not in front of the camera")
    return np.column_stack([K.f_u * p[:, 0] / z + K.u_p, K.f_v * p[:, 1] / z + K.v_p])


def project_point(K, p_cam):
    """``(u, v)`` pixel of a single camera-frame point."""
    return project_points(K, np.asarray(p_cam, dtype=np.float64).reshape(1, 3))[0]


def backproject_translation(K, u_c, v_c, T_z):
    """Translation whose projection is ``(u_c, v_c)`` at depth ``T_z``."""
    if not T_z > 0:
        raise InvalidDepthError(f"T_z must be positive, got {T_z}")
    return np.array([(u_c - K.u_p) * T_z / K.f_u, (v_c - K.v_p) * T_z / K.f_v, float(T_z)])


# -- bounding boxes -------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        vals = (self.u_min, self.v_min, self.u_max, self.v_max)
        if not all(np.isfinite(vals)):
            raise InvalidInputError("bounding box must be finite")
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise InvalidInputError(f"degenerate bounding box {vals}")

    @property
    def width(self):
        return self.u_max - self.u_min

    @property
    def height(self):
        return self.v_max - self.v_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return np.array([(self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0])

    def as_tuple(self):
        return (float(self.u_min), float(self.v_min), float(self.u_max), float(self.v_max))

    def intersection_area(self, other):
        w = min(self.u_max, other.u_max) - max(self.u_min, other.u_min)
        h = min(self.v_max, other.v_max) - max(self.v_min, other.v_min)
        return max(w, 0.0) * max(h, 0.0)

    def iou(self, other):
        inter = self.intersection_area(other)
        return inter / (self.area + other.area - inter)

    def contains(self, other):
        return (self.u_min <= other.u_min and self.v_min <= other.v_min
                and self.u_max >= other.u_max and self.v_max >= other.v_max)

    def clip(self, frame):
        w, h = check_frame(frame)
        return BoundingBox(max(self.u_min, 0.0), max(self.v_min, 0.0),
                           min(self.u_max, float(w)), min(self.v_max, float(h)))


def bbox_from_mask(mask):
    """Tight half-open box around the true pixels of a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise InvalidInputError("empty mask has no bounding box")
    return BoundingBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def inflate_bbox(b, kappa=1.3, frame=None):
    """Scale ``b`` about its center by ``kappa`` and clip it to ``frame``."""
    if kappa < 1:
        raise InvalidInputError(f"kappa must be >= 1, got {kappa}")
    cu, cv = b.center
    hw, hh = 0.5 * kappa * b.width, 0.5 * kappa * b.height
    out = BoundingBox(cu - hw, cv - hh, cu + hw, cv + hh)
    return out.clip(frame) if frame is not None else out


def degrade_bbox(b, iou, direction):
    """Shift ``b`` along ``direction`` (radians) until its IoU with ``b`` equals ``iou``.

    Used to reproduce detector inaccuracy at a controlled overlap. The shift
    is found by bisection; the result is not clipped to any frame.
    """
    if not 0.0 < iou <= 1.0:
        raise InvalidInputError(f"iou must be in (0, 1], got {iou}")
    if iou == 1.0:
        return b
    c, s = np.cos(direction), np.sin(direction)

    def shifted(k):
        return BoundingBox(b.u_min + k * c, b.v_min + k * s, b.u_max + k * c, b.v_max + k * s)

    lo, hi = 0.0, b.width + b.height
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if b.iou(shifted(mid)) > iou:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * (b.width + b.height):
            break
    return shifted(0.5 * (lo + hi))


def crop_intrinsics(K, bbox, size):
    """Intrinsics of a virtual camera whose ``size = (w, h)`` image spans ``bbox``.

    The crop's pixel ``j`` covers the full-frame interval
    ``[u_min - 0.5 + j * s, u_min - 0.5 + (j + 1) * s)`` with ``s = bbox.width / w``.
    The principal point may fall outside the crop.
    """
    w, h = check_frame(size)
    su, sv = w / bbox.width, h / bbox.height
    return CameraIntrinsics(
        K.f_u * su, K.f_v * sv,
        (K.u_p - bbox.u_min + 0.5) * su - 0.5,
        (K.v_p - bbox.v_min + 0.5) * sv - 0.5,
        w, h, strict=False,
    )


def relocalize_object(crop, inflated_bbox, frame, background=0.0):
    """Paste ``crop`` back into a full ``frame`` over ``inflated_bbox``.

    The crop is stretched bilinearly so that it spans the box exactly (see
    :func:`crop_intrinsics` for the pixel mapping). Pixels outside the box get
    ``background``; parts of the box outside the frame are dropped.
    """
    crop = np.asarray(crop, dtype=np.float64)
    if crop.ndim not in (2, 3) or crop.shape[0] < 1 or crop.shape[1] < 1:
        raise InvalidInputError(f"crop must be a non-empty H x W (x C) image, got {crop.shape}")
    if not isinstance(inflated_bbox, BoundingBox):
        inflated_bbox = BoundingBox(*inflated_bbox)
    W, H = check_frame(frame)
    hc, wc = crop.shape[:2]
    out_shape = (H, W) + crop.shape[2:]
    out = np.empty(out_shape)
    out[...] = background

    b = inflated_bbox
    u0 = max(int(np.ceil(b.u_min - 0.5)), 0)
    u1 = min(int(np.ceil(b.u_max - 0.5)), W)
    v0 = max(int(np.ceil(b.v_min - 0.5)), 0)
    v1 = min(int(np.ceil(b.v_max - 0.5)), H)
    if u0 >= u1 or v0 >= v1:
        return out

    us = np.arange(u0, u1, dtype=np.float64)
    vs = np.arange(v0, v1, dtype=np.float64)
    x = np.clip((us - b.u_min + 0.5) * wc / b.width - 0.5, 0.0, wc - 1)
    y = np.clip((vs - b.v_min + 0.5) * hc / b.height - 0.5, 0.0, hc - 1)
    x0 = np.minimum(np.floor(x).astype(int), wc - 1)
    y0 = np.minimum(np.floor(y).astype(int), hc - 1)
    x1 = np.minimum(x0 + 1, wc - 1)
    y1 = np.minimum(y0 + 1, hc - 1)
    fx = x - x0
    fy = y - y0
    if crop.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None, None]
    else:
        fy = fy[:, None]
    top = crop[y0][:, x0] * (1 - fx) + crop[y0][:, x1] * fx
    bot = crop[y1][:, x0] * (1 - fx) + crop[y1][:, x1] * fx
    out[v0:v1, u0:u1] = top * (1 - fy) + bot * fy
    return out
