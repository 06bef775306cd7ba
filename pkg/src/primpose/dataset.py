"""Synthetic dataset generation, augmentation, persistence and loading.

On-disk layout (format version "1")::

    meta.json                 intrinsics, primitive spec, generation config, model info
    model.obj                 the object model used for rendering
    manifest.json             sha256 of every sample file
    samples/{id:06}_rgb.png   augmented object render (8-bit RGB)
    samples/{id:06}_prim.png  clean primitive render (8-bit RGB)
    samples/{id:06}_mask.png  object coverage (8-bit, 0/255)
    samples/{id:06}_meta.json pose.quat_wxyz, pose.t_m, bbox, keypoints_px

Every sample draws from its own generator seeded with ``seed ^ sample_id``,
so any subset regenerates identically and serial and threaded runs agree.
"""

import hashlib
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import serialization
from .exceptions import ConfigError, DatasetParseError, PrimPoseError
from .geometry import BoundingBox, CameraIntrinsics, Pose, bbox_from_mask, project_points
from .mesh import load_obj, save_obj
from .primitive import CENTER_INDEX, N_KEYPOINTS, PrimitiveSpec, primitive_corners_3d, project_keypoints
from .render import paint_rectangles, render_mesh, render_primitive

log = logging.getLogger(__name__)

FORMAT_VERSION = "1"
KEYPOINT_TOL_PX = 1e-6
KEYPOINT_ORDER = (
    "0-7 cube corners (x<<2|y<<1|z, bit set = positive side); "
    "8-11 +X tip face, 12-15 +Y tip face, 16-19 +Z tip face; 20 center"
)
# Rejection-sampling budget for the in-frame center pixel.
MAX_POSE_TRIES = 1000


@dataclass
class GenConfig:
    n_samples: int = 2000
    seed: int = 0
    tz_min: float = 0.4
    tz_max: float = 1.2
    margin_px: float = 10.0
    background: bool = False
    jitter: float = 0.0
    occluders: int = 0
    occluder_min: float = 0.1
    occluder_max: float = 0.3
    noise_sigma: float = 0.0
    kappa: float = 1.3
    shading: str = "lambertian"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.n_samples) < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0 < self.tz_min <= self.tz_max:
            raise ConfigError(f"need 0 < tz_min <= tz_max, got ({self.tz_min}, {self.tz_max})")
        if self.margin_px < 0:
            raise ConfigError("margin_px must be non-negative")
        if self.kappa < 1:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")
        if self.jitter < 0 or self.noise_sigma < 0 or self.occluders < 0:
            raise ConfigError("augmentation amplitudes and counts must be non-negative")
        if not 0 < self.occluder_min <= self.occluder_max <= 1:
            raise ConfigError("occluder size range must satisfy 0 < min <= max <= 1")
        if self.shading not in ("flat", "lambertian"):
            raise ConfigError(f"unknown shading {self.shading!r}")

    @property
    def augmentation_enabled(self):
        return self.background or self.jitter > 0 or self.occluders > 0 or self.noise_sigma > 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        """Build from a mapping whose values may be strings (config files)."""
        kw = {}
        known = {f.name: f for f in fields(cls)}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(v, type(known[k].default), k)
        return cls(**kw)


def _coerce(v, typ, name):
    try:
        if typ is bool:
            if isinstance(v, str):
                if v.lower() in ("1", "true", "yes", "on"):
                    return True
                if v.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(v)
            return bool(v)
        if typ is int:
            f = float(v)
            if f != int(f):
                raise ValueError(v)
            return int(f)
        return typ(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name!r}: cannot read {v!r} as {typ.__name__}") from exc


@dataclass
class DatasetSample:
    """One generated sample. Images are ``None`` when loaded metadata-only."""

    sample_id: int
    pose: Pose
    keypoints2d: np.ndarray
    bbox: BoundingBox
    rgb: np.ndarray = None
    primitive: np.ndarray = None
    mask: np.ndarray = None
    violations: list = field(default_factory=list)


# -- sampling and augmentation ------------------------------------------------------


def _bound_points(model, spec):
    pts = [primitive_corners_3d(spec)]
    if model is not None and len(model.vertices):
        pts.append(model.vertices)
    return np.vstack(pts)


def sample_pose(rng, config, K, points):
    """Draw a pose with uniform rotation and every point of ``points`` in view.

    The rotation normalizes a 4D standard Gaussian (uniform on SO(3)); ``T_z``
    is uniform in ``[tz_min, tz_max]``; the center pixel is drawn uniformly
    over the frame and redrawn until all projected ``points`` lie at least
    ``margin_px`` inside it. Raises :class:`ConfigError` if even a centered
    bounding sphere cannot fit at ``tz_min``.
    """
    pts = np.asarray(points, dtype=np.float64)
    r = float(np.linalg.norm(pts, axis=1).max())
    m = config.margin_px
    z0 = config.tz_min
    if z0 <= r:
        raise ConfigError(f"tz_min={z0} m is inside the model's bounding sphere (r={r:.4g} m)")
    # silhouette radius of the bounding sphere centered on the optical axis
    s = r / np.sqrt(z0 * z0 - r * r)
    half = K.f_u * s, K.f_v * s
    if (K.u_p - half[0] < m or K.width - 1 - K.u_p - half[0] < m
            or K.v_p - half[1] < m or K.height - 1 - K.v_p - half[1] < m):
        raise ConfigError(
            f"margin {m} px cannot be met at tz_min={z0} m (projected radius ~{max(half):.1f} px)"
        )
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    tz = rng.uniform(config.tz_min, config.tz_max)
    R = Pose(q).R
    cam = pts @ R.T
    for _ in range(MAX_POSE_TRIES):
        u = rng.uniform(m, K.width - 1 - m)
        v = rng.uniform(m, K.height - 1 - m)
        t = np.array([(u - K.u_p) * tz / K.f_u, (v - K.v_p) * tz / K.f_v, tz])
        p = cam + t
        if np.any(p[:, 2] <= 1e-6):
            continue
        uv = project_points(K, p)
        if (uv[:, 0].min() >= m and uv[:, 0].max() <= K.width - 1 - m
                and uv[:, 1].min() >= m and uv[:, 1].max() <= K.height - 1 - m):
            return Pose(q, t)
    # the principal point always works when the sphere test above passes
    return Pose(q, [0.0, 0.0, tz])


def _value_noise(rng, shape, cell=32):
    h, w = shape
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.uniform(0.0, 1.0, (gh, gw, 3))
    vv = np.arange(h) / cell
    uu = np.arange(w) / cell
    coords = np.meshgrid(vv, uu, indexing="ij")
    return np.stack(
        [ndimage.map_coordinates(grid[..., c], coords, order=1, mode="nearest") for c in range(3)],
        axis=2,
    )


def augment_domain_randomization(img, mask, rng, config):
    """Domain randomization applied in a fixed order.

    1. background: pixels outside ``mask`` become a random solid color or
       smooth value noise (equal odds);
    2. color jitter: per channel ``x * g + b`` with ``g`` in ``1 +- jitter`` and
       ``b`` in ``+- jitter``;
    3. ``occluders`` solid rectangles with sides in
       ``[occluder_min, occluder_max]`` of the frame;
    4. additive Gaussian noise of std ``noise_sigma``.

    Values are clipped to [0, 1] after steps 2 and 4. With every toggle off
    the input is returned unchanged (as a copy). Returns ``(image, rects)``.
    """
    out = np.array(img, dtype=np.float64, copy=True)
    rects = []
    if config.background:
        mask = np.asarray(mask, dtype=bool)
        if rng.uniform() < 0.5:
            bg = np.broadcast_to(rng.uniform(0.0, 1.0, 3), out.shape)
        else:
            bg = _value_noise(rng, out.shape[:2])
        out[~mask] = bg[~mask]
    if config.jitter > 0:
        a = config.jitter
        gain = 1.0 + rng.uniform(-a, a, 3)
        bias = rng.uniform(-a, a, 3)
        out = np.clip(out * gain + bias, 0.0, 1.0)
    if config.occluders > 0:
        rects = paint_rectangles(out, config.occluders, (config.occluder_min, config.occluder_max), rng)
    if config.noise_sigma > 0:
        out = np.clip(out + rng.normal(0.0, config.noise_sigma, out.shape), 0.0, 1.0)
    return out, rects


# -- generation ---------------------------------------------------------------------


def sample_rng(seed, sample_id):
    return np.random.default_rng(int(seed) ^ int(sample_id))


def _sample_paths(out_dir, sid):
    base = Path(out_dir) / "samples" / f"{sid:06d}"
    return {
        "rgb": base.with_name(base.name + "_rgb.png"),
        "prim": base.with_name(base.name + "_prim.png"),
        "mask": base.with_name(base.name + "_mask.png"),
        "meta": base.with_name(base.name + "_meta.json"),
    }


def make_sample(model, spec, K, config, sid, bound=None):
    """Render and augment sample ``sid`` in memory."""
    rng = sample_rng(config.seed, sid)
    bound = _bound_points(model, spec) if bound is None else bound
    pose = sample_pose(rng, config, K, bound)
    obj = render_mesh(model, pose, K, shading=config.shading)
    prim = render_primitive(spec, pose, K)
    mask = np.array(obj.mask)
    if not mask.any():
        raise PrimPoseError(f"sample {sid}: object not visible")
    rgb, _ = augment_domain_randomization(obj.color, mask, rng, config)
    return DatasetSample(
        sample_id=sid,
        pose=pose,
        keypoints2d=project_keypoints(pose, K, spec),
        bbox=bbox_from_mask(mask),
        rgb=rgb,
        primitive=np.array(prim.color),
        mask=mask,
    )


def sample_meta(sample):
    return {
        "sample_id": int(sample.sample_id),
        "pose.quat_wxyz": [float(x) for x in sample.pose.rotation],
        "pose.t_m": [float(x) for x in sample.pose.translation],
        "bbox": list(sample.bbox.as_tuple()),
        "keypoints_px": [[float(u), float(v)] for u, v in sample.keypoints2d],
    }


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_sample(out_dir, sample):
    paths = _sample_paths(out_dir, sample.sample_id)
    serialization.write_png(paths["rgb"], sample.rgb)
    serialization.write_png(paths["prim"], sample.primitive)
    serialization.write_png(paths["mask"], sample.mask)
    serialization.dump(sample_meta(sample), paths["meta"])
    return {str(p.relative_to(out_dir)): _sha256(p) for p in paths.values()}


def dataset_meta(model, spec, K, config):
    return {
        "format_version": FORMAT_VERSION,
        "intrinsics": K.to_dict(),
        "primitive": spec.to_dict(),
        "config": config.to_dict(),
        "model": {
            "file": "model.obj",
            "n_vertices": int(len(model.vertices)),
            "diameter_m": float(model.diameter),
            "symmetry": model.symmetry,
        },
        "keypoint_order": KEYPOINT_ORDER,
    }


def generate_dataset(model, spec, K, config, out_dir, n_jobs=1, sample_ids=None):
    """Render ``config.n_samples`` samples to ``out_dir``.

    ``sample_ids`` restricts generation to a subset (each sample is fully
    determined by ``(config.seed, sample_id)``). ``n_jobs > 1`` renders on a
    thread pool; files are identical either way. Returns a manifest summary
    ``{"n_samples", "files": {relative path: sha256}}`` that is also written
    to ``manifest.json``.
    """
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    ids = range(config.n_samples) if sample_ids is None else sorted(int(i) for i in sample_ids)
    serialization.dump(dataset_meta(model, spec, K, config), out_dir / "meta.json")
    save_obj(model, out_dir / "model.obj")
    bound = _bound_points(model, spec)

    def work(sid):
        try:
            sample = make_sample(model, spec, K, config, sid, bound)
        except PrimPoseError as exc:
            raise PrimPoseError(f"sample {sid}: {exc}") from exc
        return _write_sample(out_dir, sample)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, ids))
    else:
        results = [work(sid) for sid in ids]
    files = {}
    for name in ("meta.json", "model.obj"):
        files[name] = _sha256(out_dir / name)
    for r in results:
        files.update(r)
    manifest = {"n_samples": len(results), "files": dict(sorted(files.items()))}
    serialization.dump(manifest, out_dir / "manifest.json")
    log.info("wrote %d samples to %s", len(results), out_dir)
    return manifest


# -- loading ------------------------------------------------------------------------


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DatasetParseError(path, "<file>", "missing") from exc
    except (OSError, ValueError) as exc:
        raise DatasetParseError(path, "<file>", f"unreadable JSON ({exc})") from exc


def _field(d, path, name, shape):
    if name not in d:
        raise DatasetParseError(path, name, "missing")
    try:
        arr = np.asarray(d[name], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetParseError(path, name, "not numeric") from exc
    if arr.shape != shape:
        raise DatasetParseError(path, name, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetParseError(path, name, "non-finite value")
    return arr


class Dataset:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetParseError(self.root, "<dir>", "not a directory")
        meta_path = self.root / "meta.json"
        self.meta = _read_json(meta_path)
        if self.meta.get("format_version") != FORMAT_VERSION:
            raise DatasetParseError(meta_path, "format_version",
                                    f"expected {FORMAT_VERSION!r}, got {self.meta.get('format_version')!r}")
        try:
            self.K = CameraIntrinsics.from_dict(self.meta["intrinsics"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(meta_path, "intrinsics", str(exc)) from exc
        try:
            self.spec = PrimitiveSpec.from_dict(self.meta["primitive"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(meta_path, "primitive", str(exc)) from exc
        try:
            self.config = GenConfig.from_dict(self.meta["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(meta_path, "config", str(exc)) from exc
        self._model = None

    @property
    def model(self):
        if self._model is None:
            info = self.meta.get("model", {})
            path = self.root / info.get("file", "model.obj")
            if not path.exists():
                raise DatasetParseError(path, "<file>", "missing")
            self._model = load_obj(path)
            self._model.symmetry = info.get("symmetry", "none")
        return self._model

    def sample_ids(self):
        ids = []
        for p in (self.root / "samples").glob("*_meta.json"):
            stem = p.name[: -len("_meta.json")]
            if not stem.isdigit():
                raise DatasetParseError(p, "<filename>", "sample id is not an integer")
            ids.append(int(stem))
        return sorted(ids)

    def load_sample(self, sid, load_images=True, validate=True):
        paths = _sample_paths(self.root, sid)
        d = _read_json(paths["meta"])
        q = _field(d, paths["meta"], "pose.quat_wxyz", (4,))
        t = _field(d, paths["meta"], "pose.t_m", (3,))
        bb = _field(d, paths["meta"], "bbox", (4,))
        kp = _field(d, paths["meta"], "keypoints_px", (N_KEYPOINTS, 2))
        try:
            pose = Pose(q, t)
        except ValueError as exc:
            raise DatasetParseError(paths["meta"], "pose.quat_wxyz", str(exc)) from exc
        try:
            bbox = BoundingBox(*bb)
        except ValueError as exc:
            raise DatasetParseError(paths["meta"], "bbox", str(exc)) from exc
        sample = DatasetSample(sid, pose, kp, bbox)
        need_mask = load_images or validate
        for key, attr in (("rgb", "rgb"), ("prim", "primitive"), ("mask", "mask")):
            if key != "mask" and not load_images:
                continue
            if key == "mask" and not need_mask:
                continue
            try:
                img = serialization.read_png(paths[key], as_mask=(key == "mask"))
            except (OSError, ValueError) as exc:
                raise DatasetParseError(paths[key], "<image>", str(exc)) from exc
            setattr(sample, attr, img)
        if validate:
            sample.violations = validate_sample(sample, self.K, self.spec)
            for v in sample.violations:
                warnings.warn(f"sample {sid}: {v}", stacklevel=2)
        return sample

    def __iter__(self):
        return self.iter_samples()

    def iter_samples(self, load_images=True, validate=True):
        ids = self.sample_ids()
        if not ids:
            warnings.warn(f"dataset {self.root} contains no samples", stacklevel=2)
        for sid in ids:
            yield self.load_sample(sid, load_images=load_images, validate=validate)

    def __len__(self):
        return len(self.sample_ids())


def validate_sample(sample, K, spec):
    """Invariant violations of one sample, as messages (empty when valid)."""
    out = []
    try:
        expect = project_keypoints(sample.pose, K, spec)
    except ValueError as exc:
        return [f"keypoints cannot be projected: {exc}"]
    err = np.abs(expect - sample.keypoints2d).max(axis=1)
    if err[CENTER_INDEX] > KEYPOINT_TOL_PX:
        out.append(f"center keypoint off by {err[CENTER_INDEX]:.3g} px")
    if err.max() > KEYPOINT_TOL_PX:
        out.append(f"keypoints deviate from projection by up to {err.max():.3g} px")
    if sample.mask is not None:
        if not sample.mask.any():
            out.append("mask is empty")
        elif bbox_from_mask(sample.mask) != sample.bbox:
            out.append(f"bbox {sample.bbox.as_tuple()} is not the tight mask bound "
                       f"{bbox_from_mask(sample.mask).as_tuple()}")
    return out


def load_dataset(root, load_images=True, validate=True):
    """Iterate the samples of ``root`` in ``sample_id`` order.

    An empty sample directory yields nothing and issues a warning. Malformed
    or missing files raise :class:`DatasetParseError` naming file and field;
    invariant violations are warned about and listed on ``sample.violations``.
    """
    return Dataset(root).iter_samples(load_images=load_images, validate=validate)
