"""Rotational primitive: a colored cube with one arm along each positive axis.

The 21 keypoints are ordered as

* 0-7: central cube corners, index bits ``(x << 2) | (y << 1) | z`` with a set
  bit meaning the positive side;
* 8-11, 12-15, 16-19: tip-face corners of the +X, +Y and +Z arms, each block
  enumerating the two remaining coordinates in the same binary order;
* 20: the center (object origin).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .geometry import project_points, transform_points
from .mesh import MeshModel, cuboid, merge_meshes

N_KEYPOINTS = 21
CENTER_INDEX = 20
AXIS_NAMES = ("+X", "+Y", "+Z")

DEFAULT_AXIS_COLORS = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
DEFAULT_CUBE_COLOR = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class PrimitiveSpec:
    cube_half: float
    arm_length: float
    arm_half: float
    axis_colors: tuple = DEFAULT_AXIS_COLORS
    cube_color: tuple = DEFAULT_CUBE_COLOR

    def __post_init__(self):
        if min(self.cube_half, self.arm_length, self.arm_half) <= 0:
            raise InvalidInputError("primitive lengths must be positive")
        if self.arm_half > self.cube_half:
            raise InvalidInputError("arm_half must not exceed cube_half")
        colors = np.asarray(self.axis_colors, dtype=np.float64)
        if colors.shape != (3, 3) or np.asarray(self.cube_color).shape != (3,):
            raise InvalidInputError("need three RGB axis colors and one RGB cube color")
        for i, c in enumerate(colors):
            others = np.delete(c, i)
            if not np.all(c[i] > others):
                raise InvalidInputError(f"axis color {i} must be dominant in channel {i}")
        object.__setattr__(self, "axis_colors", tuple(tuple(map(float, c)) for c in colors))
        object.__setattr__(self, "cube_color", tuple(map(float, self.cube_color)))

    @classmethod
    def from_diameter(cls, d, **kw):
        """Default proportions relative to an object diameter ``d``."""
        return cls(cube_half=0.05 * d, arm_length=0.6 * d, arm_half=0.05 * d, **kw)

    @property
    def tip_distance(self):
        return self.cube_half + self.arm_length

    @property
    def extent(self):
        """Largest distance of any primitive point from the center."""
        return float(np.linalg.norm([self.tip_distance, self.arm_half, self.arm_half]))

    def colors(self):
        """The four flat colors: +X, +Y, +Z, cube."""
        return np.array(list(self.axis_colors) + [self.cube_color])

    def to_dict(self):
        return {
            "cube_half": self.cube_half,
            "arm_length": self.arm_length,
            "arm_half": self.arm_half,
            "axis_colors": [list(c) for c in self.axis_colors],
            "cube_color": list(self.cube_color),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["cube_half"]), float(d["arm_length"]), float(d["arm_half"]),
                   tuple(tuple(c) for c in d["axis_colors"]), tuple(d["cube_color"]))


def _signs2():
    return np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=np.float64)


def primitive_corners_3d(spec):
    """The 21 object-frame keypoints, shape ``(21, 3)``."""
    c, a, L = spec.cube_half, spec.arm_half, spec.tip_distance
    bits = np.array([[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)], dtype=np.float64)
    pts = [c * (2 * bits - 1)]
    for axis in range(3):
        block = np.empty((4, 3))
        others = [k for k in range(3) if k != axis]
        block[:, axis] = L
        block[:, others] = a * _signs2()
        pts.append(block)
    pts.append(np.zeros((1, 3)))
    return np.vstack(pts)


def tip_face_centers(spec):
    """Centers of the three arm tip faces, rows ordered +X, +Y, +Z."""
    return spec.tip_distance * np.eye(3)


def project_keypoints(pose, K, spec):
    """Pixel coordinates ``(21, 2)`` of the keypoints seen under ``pose``."""
    return project_points(K, transform_points(pose, primitive_corners_3d(spec)))


def primitive_mesh(spec):
    """Four cuboids (cube + three arms), 48 triangles, colored per cuboid."""
    c, a, L = spec.cube_half, spec.arm_half, spec.tip_distance
    parts = [cuboid((-c, -c, -c), (c, c, c), spec.cube_color)]
    for axis in range(3):
        lo = np.full(3, -a)
        hi = np.full(3, a)
        lo[axis], hi[axis] = c, L
        parts.append(cuboid(lo, hi, spec.axis_colors[axis]))
    v, t, col = merge_meshes(parts)
    return MeshModel(v, t, col)
