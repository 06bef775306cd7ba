"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import InvalidInputError

QUAT_TOL = 1e-6


def check_array_shape(a, shape, name="array", dtype=np.float64):
    """Convert ``a`` to an ndarray and check its shape.

    ``shape`` may contain ``None`` for free dimensions. Non-finite entries
    are rejected.
    """
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != len(shape) or any(
        s is not None and s != d for s, d in zip(shape, arr.shape)
    ):
        raise InvalidInputError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains non-finite values")
    return arr


def check_vector3(v, name="vector"):
    return check_array_shape(v, (3,), name)


def check_quaternion(q, tol=QUAT_TOL, name="quaternion"):
    """Return ``q`` as a float array after checking it has unit norm."""
    q = check_array_shape(q, (4,), name)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > tol:
        raise InvalidInputError(f"{name}: norm {n:.12g} is not within {tol:g} of 1")
    return q


def check_points(X, dim, name="points", min_count=0):
    X = check_array_shape(X, (None, dim), name)
    if X.shape[0] < min_count:
        raise InvalidInputError(
            f"{name}: need at least {min_count} points, got {X.shape[0]}"
        )
    return X


def check_image(img, name="image"):
    """Accept H x W or H x W x C float images; values are not clamped."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (1, 2, 3):
        raise InvalidInputError(f"{name}: expected 1-3 dims, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains non-finite values")
    return arr


def check_same_shape(a, b, names=("target", "prediction")):
    if a.shape != b.shape:
        raise InvalidInputError(
            f"shape mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}"
        )


def check_frame(frame):
    """Normalize a ``(width, height)`` pair."""
    try:
        w, h = (int(x) for x in frame)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"frame must be (width, height), got {frame!r}") from exc
    if w <= 0 or h <= 0:
        raise InvalidInputError(f"frame must be positive, got {(w, h)}")
    return w, h
