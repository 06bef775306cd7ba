"""Triangle mesh container and the plain-text OBJ subset used for models."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError
from .metrics import model_diameter

SYMMETRY_CLASSES = ("none", "discrete", "axis-continuous")

# Outward-facing (counter-clockwise seen from outside) triangles of a unit
# box whose corners are indexed by bits (x << 2) | (y << 1) | z.
_BOX_TRIANGLES = np.array(
    [
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ]
)


@dataclass
class MeshModel:
    """Object-frame triangle mesh with per-face colors.

    ``symmetry`` is one of ``"none"``, ``"discrete"`` (with ``symmetries``
    holding the group's quaternions) or ``"axis-continuous"``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_colors: np.ndarray = None
    symmetry: str = "none"
    symmetries: list = field(default_factory=list)
    _diameter: float = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise InvalidInputError("triangle index out of range")
        if self.face_colors is None:
            self.face_colors = np.full((len(self.triangles), 3), 0.8)
        self.face_colors = np.asarray(self.face_colors, dtype=np.float64).reshape(-1, 3)
        if len(self.face_colors) != len(self.triangles):
            raise InvalidInputError("need one color per triangle")
        if self.symmetry not in SYMMETRY_CLASSES:
            raise InvalidInputError(f"unknown symmetry class {self.symmetry!r}")

    @property
    def diameter(self):
        if self._diameter is None:
            self._diameter = model_diameter(self.vertices)
        return self._diameter

    @property
    def is_symmetric(self):
        return self.symmetry != "none"

    @property
    def bounding_radius(self):
        """Largest vertex distance from the object origin."""
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))


def cuboid(lo, hi, color=(0.8, 0.8, 0.8)):
    """Axis-aligned box ``[lo, hi]`` as 8 vertices and 12 outward triangles."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    bits = np.array([[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)])
    verts = np.where(bits == 1, hi, lo)
    colors = np.tile(np.asarray(color, dtype=np.float64), (12, 1))
    return verts, _BOX_TRIANGLES.copy(), colors


def merge_meshes(parts):
    verts, tris, cols = [], [], []
    offset = 0
    for v, t, c in parts:
        verts.append(v)
        tris.append(t + offset)
        cols.append(c)
        offset += len(v)
    return np.vstack(verts), np.vstack(tris), np.vstack(cols)


def cube_mesh(side=0.1, color=(0.8, 0.8, 0.8)):
    h = side / 2.0
    v, t, c = cuboid((-h, -h, -h), (h, h, h), color)
    return MeshModel(v, t, c)


def load_obj(path):
    """Read ``v x y z`` and ``f i j k`` lines (1-based, ``i/vt/vn`` tolerated).

    Polygons with more than three vertices are fan-triangulated. Other line
    types are ignored.
    """
    path = Path(path)
    verts, faces = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc
    if len(verts) < 2:
        raise InvalidInputError(f"{path}: model needs at least two vertices")
    return MeshModel(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh, path):
    with Path(path).open("w") as fh:
        for v in mesh.vertices:
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
        for f in mesh.triangles:
            fh.write("f {} {} {}\n".format(*(int(i) + 1 for i in f)))
