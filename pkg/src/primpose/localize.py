"""Image-grounded center and axis-tip detection on primitive renders, and
translation recovery under a known rotation."""

import numpy as np

from ._validation import check_points
from .exceptions import EmptyObjectError, InvalidInputError, NoSolutionError
from .geometry import MIN_DEPTH, CameraIntrinsics, backproject_translation
from .primitive import AXIS_NAMES, tip_face_centers
from .render import RenderOutput

FOREGROUND_THRESHOLD = 0.02
DOMINANCE_MARGIN = 0.2
# Tip pixels within this many pixels of the farthest one are averaged.
TIP_BAND_PX = 1.5


def _color_and_mask(prim, mask=None):
    if isinstance(prim, RenderOutput):
        return np.asarray(prim.color), np.asarray(prim.mask) if mask is None else mask
    img = np.asarray(prim, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected an H x W x 3 image, got shape {img.shape}")
    return img, mask


def estimate_center(prim, mask=None):
    """Centroid ``(u_c, v_c)`` of the foreground.

    The foreground is the render mask when one is available (a
    :class:`RenderOutput` or an explicit ``mask``), otherwise every pixel with
    a channel above 0.02.
    """
    img, mask = _color_and_mask(prim, mask)
    fg = np.asarray(mask, dtype=bool) if mask is not None else np.any(img > FOREGROUND_THRESHOLD, axis=2)
    vs, us = np.nonzero(fg)
    if us.size == 0:
        raise EmptyObjectError("no foreground pixels")
    return float(us.mean()), float(vs.mean())


def detect_axis_tips(prim, center, spec=None, margin=DOMINANCE_MARGIN, band=TIP_BAND_PX):
    """Locate the visible end of each colored arm.

    For axis ``i`` the candidate pixels are those whose channel ``i`` exceeds
    both other channels by more than ``margin``. The farthest candidate from
    ``center`` marks the tip; the returned location is the mean of all
    candidates within ``band`` pixels of that farthest distance, which lands
    on the middle of the tip edge instead of one of its corners. ``band=0``
    returns the single farthest pixel (ties broken by raster order).

    Returns a dict mapping ``"+X"``, ``"+Y"``, ``"+Z"`` to ``(u, v)`` for the
    axes that were found; absent axes are simply missing. ``spec`` is not
    needed beyond the color layout every valid spec guarantees (axis ``i`` is
    dominant in channel ``i``) and may be omitted.
    """
    img, _ = _color_and_mask(prim)
    cu, cv = float(center[0]), float(center[1])
    if not (np.isfinite(cu) and np.isfinite(cv)):
        raise InvalidInputError(f"center must be finite, got {center}")
    tips = {}
    for i, name in enumerate(AXIS_NAMES):
        others = [k for k in range(3) if k != i]
        cand = (img[..., i] - img[..., others[0]] > margin) & (img[..., i] - img[..., others[1]] > margin)
        vs, us = np.nonzero(cand)
        if us.size == 0:
            continue
        dist = np.hypot(us - cu, vs - cv)
        far = dist.max()
        if band > 0:
            sel = dist >= far - band
            tips[name] = (float(us[sel].mean()), float(vs[sel].mean()))
        else:
            k = int(np.argmax(dist))
            tips[name] = (float(us[k]), float(vs[k]))
    return tips


def refine_translation(R, points3d, pixels, K, T_init, max_iters=50, tol=1e-10):
    """Gauss-Newton over ``t`` minimizing the pixel reprojection error of
    ``points3d`` under the fixed rotation ``R``.

    Steps that would put a point behind the camera or raise the cost are
    halved (up to 30 times). Raises :class:`NoSolutionError` if fewer than two
    points are given, if the iteration breaks down, or if the result has
    ``T_z <= 0``.
    """
    X = check_points(points3d, 3, "points3d")
    x = check_points(pixels, 2, "pixels")
    if len(X) != len(x):
        raise InvalidInputError(f"{len(X)} points but {len(x)} pixels")
    if len(X) < 2:
        raise NoSolutionError("a single observation fixes only a ray; need at least 2")
    t = np.array(T_init, dtype=np.float64)
    if t.shape != (3,) or not t[2] > 0:
        raise NoSolutionError("T_init must be a 3-vector with T_z > 0")
    RX = X @ np.asarray(R, dtype=np.float64).T
    f = np.array([K.f_u, K.f_v])
    pp = np.array([K.u_p, K.v_p])

    def residual(t):
        pc = RX + t
        if np.any(pc[:, 2] <= MIN_DEPTH):
            return None, pc
        return (f * pc[:, :2] / pc[:, 2:3] + pp - x).ravel(), pc

    r, pc = residual(t)
    if r is None:
        raise NoSolutionError("T_init puts observed points behind the camera")
    cost = r @ r
    for _ in range(max_iters):
        iz = 1.0 / pc[:, 2]
        J = np.zeros((len(X), 2, 3))
        J[:, 0, 0] = K.f_u * iz
        J[:, 0, 2] = -K.f_u * pc[:, 0] * iz * iz
        J[:, 1, 1] = K.f_v * iz
        J[:, 1, 2] = -K.f_v * pc[:, 1] * iz * iz
        J = J.reshape(-1, 3)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        if not np.all(np.isfinite(step)):
            raise NoSolutionError("Gauss-Newton step is not finite")
        for _ in range(30):
            r_new, pc_new = residual(t + step)
            if r_new is not None and r_new @ r_new <= cost:
                break
            step = step * 0.5
        else:
            break
        t = t + step
        r, pc, cost = r_new, pc_new, r_new @ r_new
        if np.linalg.norm(step) < tol:
            break
    if not (np.all(np.isfinite(t)) and t[2] > 0):
        raise NoSolutionError(f"translation did not converge to a valid depth: {t}")
    return t


def refine_translation_fixed_rotation(R, obs, spec, K, T_init, max_iters=50, tol=1e-10):
    """Translation from the observed center and arm tip-face centers.

    ``obs`` maps any of ``"center"``, ``"+X"``, ``"+Y"``, ``"+Z"`` to a pixel
    ``(u, v)``; the corresponding 3D points are the primitive origin and the
    three tip-face centers. At least two observations are required, since the
    center alone only fixes a viewing ray.
    """
    if not isinstance(K, CameraIntrinsics):
        raise InvalidInputError("K must be CameraIntrinsics")
    tips = tip_face_centers(spec)
    pts, pix = [], []
    for key, uv in obs.items():
        if key == "center":
            pts.append(np.zeros(3))
        elif key in AXIS_NAMES:
            pts.append(tips[AXIS_NAMES.index(key)])
        else:
            raise InvalidInputError(f"unknown observation key {key!r}")
        pix.append(uv)
    if len(pts) < 2:
        raise NoSolutionError("need at least 2 observations (center alone fixes only a ray)")
    return refine_translation(R, np.array(pts), np.array(pix, dtype=np.float64), K, T_init,
                              max_iters=max_iters, tol=tol)


def translation_from_center(K, center, T_z):
    """Back-projected translation of the center pixel at depth ``T_z``."""
    return backproject_translation(K, center[0], center[1], T_z)
