"""Deterministic text serialization: JSON with 17-significant-digit floats,
flat ``key = value`` records, and 8/16-bit PNG images."""

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image


def format_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x}")
    return format(x, ".17g")


def _encode(obj, indent, level):
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric rows stay on one line to keep keypoint tables readable
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + ",".join(pad + _encode(v, indent, level + 1) for v in obj) + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (pad + json.dumps(str(k)) + ": " + _encode(v, indent, level + 1)
                 for k, v in obj.items())
        return "{" + ",".join(items) + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2):
    """JSON text with every float written using 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def dump(obj, path):
    Path(path).write_text(dumps(obj))


def format_record(d):
    """Flat ``key = value`` lines in insertion order."""
    lines = []
    for k, v in d.items():
        if isinstance(v, (float, np.floating)):
            v = format_float(v) if math.isfinite(v) else str(float(v))
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def parse_record(text):
    """Inverse of :func:`format_record`; values are returned as strings.

    Blank lines and ``#`` comments are skipped.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img):
    """Write a float image in [0, 1] (H x W or H x W x 3) or a bool mask as 8-bit PNG."""
    arr = np.asarray(img)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    elif arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Image.fromarray(arr).save(path, format="PNG", compress_level=1)


def read_png(path, as_mask=False):
    """Read an 8-bit PNG as floats in [0, 1], or as a bool mask."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if as_mask:
        return arr > 127
    return arr.astype(np.float64) / 255.0


def write_depth_png(path, depth):
    """Depth in meters to 16-bit millimeters; uncovered (+inf) pixels become 0."""
    d = np.asarray(depth, dtype=np.float64)
    mm = np.where(np.isfinite(d), np.clip(np.round(d * 1000.0), 0, 65535), 0).astype(np.uint16)
    Image.fromarray(mm).save(path, format="PNG")


def read_depth_png(path):
    with Image.open(path) as im:
        mm = np.asarray(im).astype(np.float64)
    return np.where(mm > 0, mm / 1000.0, np.inf)
