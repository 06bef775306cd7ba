"""Deterministic z-buffer software rasterizer.

Triangles are filled with the top-left rule on pixel centers (integer
coordinates), so two triangles sharing an edge never both cover a pixel.
Depth is interpolated perspective-correctly (linear in ``1/z``). There is no
anti-aliasing: every covered pixel carries one face's exact (shaded) color.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_frame
from .exceptions import BehindCameraError, InvalidInputError
from .geometry import transform_points
from .primitive import primitive_mesh

MIN_RENDER_DEPTH = 1e-6
AMBIENT_FLOOR = 0.2


@dataclass(frozen=True)
class RenderOutput:
    """``color`` is H x W x 3 in [0, 1]; ``depth`` is camera z in meters, +inf where
    ``mask`` is false."""

    color: np.ndarray
    mask: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        for a in (self.color, self.mask, self.depth):
            a.flags.writeable = False

    @property
    def height(self):
        return self.color.shape[0]

    @property
    def width(self):
        return self.color.shape[1]


def _face_shades(cam_vertices, triangles, light_dir):
    a = cam_vertices[triangles[:, 0]]
    n = np.cross(cam_vertices[triangles[:, 1]] - a, cam_vertices[triangles[:, 2]] - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    l = np.asarray(light_dir, dtype=np.float64)
    l = l / np.linalg.norm(l)
    return np.maximum(AMBIENT_FLOOR, n @ l)


def rasterize(uv, z, triangles, face_colors, frame, background=(0.0, 0.0, 0.0)):
    """Rasterize projected triangles.

    :param uv: ``(n, 2)`` vertex pixel coordinates.
    :param z: ``(n,)`` vertex camera depths (all positive).
    :param triangles: ``(m, 3)`` vertex indices.
    :param face_colors: ``(m, 3)`` final per-face colors.
    :returns: :class:`RenderOutput`.
    """
    W, H = check_frame(frame)
    color = np.empty((H, W, 3))
    color[...] = np.asarray(background, dtype=np.float64)
    depth = np.full((H, W), np.inf)
    inv_z = 1.0 / z

    for f, (i0, i1, i2) in enumerate(triangles):
        p0, p1, p2 = uv[i0], uv[i1], uv[i2]
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if area == 0.0 or not np.isfinite(area):
            continue
        if area < 0:
            p1, p2 = p2, p1
            i1, i2 = i2, i1
            area = -area
        us = np.array([p0[0], p1[0], p2[0]])
        vs = np.array([p0[1], p1[1], p2[1]])
        u_lo = max(int(np.ceil(us.min())), 0)
        u_hi = min(int(np.floor(us.max())), W - 1)
        v_lo = max(int(np.ceil(vs.min())), 0)
        v_hi = min(int(np.floor(vs.max())), H - 1)
        if u_lo > u_hi or v_lo > v_hi:
            continue
        gu = np.arange(u_lo, u_hi + 1, dtype=np.float64)[None, :]
        gv = np.arange(v_lo, v_hi + 1, dtype=np.float64)[:, None]

        inside = None
        weights = []
        # edge k is opposite vertex k; w_k > 0 strictly inside
        for a, b in ((p1, p2), (p2, p0), (p0, p1)):
            dx, dy = b[0] - a[0], b[1] - a[1]
            e = dx * (gv - a[1]) - dy * (gu - a[0])
            top_left = dy < 0 or (dy == 0 and dx > 0)
            cov = (e >= 0) if top_left else (e > 0)
            inside = cov if inside is None else inside & cov
            weights.append(e)
        if not inside.any():
            continue
        iz = (weights[0] * inv_z[i0] + weights[1] * inv_z[i1] + weights[2] * inv_z[i2]) / area
        zz = 1.0 / iz
        win = depth[v_lo:v_hi + 1, u_lo:u_hi + 1]
        upd = inside & (zz < win)
        if not upd.any():
            continue
        win[upd] = zz[upd]
        color[v_lo:v_hi + 1, u_lo:u_hi + 1][upd] = face_colors[f]

    mask = np.isfinite(depth)
    return RenderOutput(color, mask, depth)


def render_mesh(mesh, pose, K, frame=None, shading="flat", light_dir=(0.0, 0.0, -1.0),
                background=(0.0, 0.0, 0.0)):
    """Render ``mesh`` seen under ``pose`` by camera ``K``.

    ``shading="lambertian"`` scales each face color by ``max(0.2, n . l)`` where
    ``l`` points from the surface towards the light (default: towards the
    camera). Vertices at ``z <= 1e-6`` raise :class:`BehindCameraError`.
    """
    frame = K.frame if frame is None else check_frame(frame)
    if shading not in ("flat", "lambertian"):
        raise InvalidInputError(f"unknown shading {shading!r}")
    if len(mesh.triangles) == 0:
        return rasterize(np.zeros((0, 2)), np.ones(0), mesh.triangles, mesh.face_colors,
                         frame, background)
    cam = transform_points(pose, mesh.vertices)
    used = np.unique(mesh.triangles)
    if np.any(cam[used, 2] <= MIN_RENDER_DEPTH):
        raise BehindCameraError("mesh vertex behind the camera; clipping is not supported")
    z = np.where(cam[:, 2] > MIN_RENDER_DEPTH, cam[:, 2], 1.0)
    uv = np.column_stack([K.f_u * cam[:, 0] / z + K.u_p, K.f_v * cam[:, 1] / z + K.v_p])
    colors = mesh.face_colors
    if shading == "lambertian":
        colors = np.clip(colors * _face_shades(cam, mesh.triangles, light_dir)[:, None], 0.0, 1.0)
    return rasterize(uv, z, mesh.triangles, colors, frame, background)


_PRIMITIVE_CACHE = {}


def render_primitive(spec, pose, K, frame=None, background=(0.0, 0.0, 0.0)):
    """Flat-shaded render of the primitive; every covered pixel has one of the
    four spec colors exactly."""
    mesh = _PRIMITIVE_CACHE.get(spec)
    if mesh is None:
        mesh = _PRIMITIVE_CACHE.setdefault(spec, primitive_mesh(spec))
    return render_mesh(mesh, pose, K, frame, shading="flat", background=background)


def composite_occlusion(img, count, size_range=(0.1, 0.3), seed=0):
    """Paint ``count`` random solid rectangles over a color image.

    Each rectangle's width and height are drawn as fractions of the frame from
    ``size_range``; its color is uniform in [0, 1]^3. ``img`` may be a
    :class:`RenderOutput` (only its color is used) or an H x W x 3 array.
    """
    color = img.color if isinstance(img, RenderOutput) else np.asarray(img, dtype=np.float64)
    if count < 0:
        raise InvalidInputError("occluder count must be non-negative")
    out = np.array(color, dtype=np.float64, copy=True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    paint_rectangles(out, count, size_range, rng)
    return out


def random_rectangles(frame, count, size_range, rng):
    """Draw ``count`` integer rectangles ``(u0, v0, u1, v1)`` inside ``frame``."""
    W, H = check_frame(frame)
    lo, hi = size_range
    rects = []
    for _ in range(count):
        w = min(W, max(1, int(round(rng.uniform(lo, hi) * W))))
        h = min(H, max(1, int(round(rng.uniform(lo, hi) * H))))
        u0 = int(rng.integers(0, W - w + 1))
        v0 = int(rng.integers(0, H - h + 1))
        rects.append((u0, v0, u0 + w, v0 + h))
    return rects


def paint_rectangles(img, count, size_range, rng):
    """In-place variant used by the augmentation pipeline; returns the rectangles."""
    H, W = img.shape[:2]
    rects = random_rectangles((W, H), count, size_range, rng)
    for u0, v0, u1, v1 in rects:
        img[v0:v1, u0:u1] = rng.uniform(0.0, 1.0, size=img.shape[2:] or None)
    return rects
