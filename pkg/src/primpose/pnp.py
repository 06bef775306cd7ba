"""Perspective-n-point: linear DLT, Levenberg-Marquardt refinement and RANSAC.

All solvers work in normalized image coordinates internally, so results do
not depend on the pixel scale of the intrinsics.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_points
from .exceptions import DegenerateInputError, InvalidInputError, NoConsensusError, NumericalError
from .geometry import Pose, matrix_to_quat, rotvec_to_matrix

MIN_CORRESPONDENCES = 6
RANK_TOL = 1e-8
BATCH_RANK_TOL = 1e-12


@dataclass
class PnPResult:
    pose: Pose
    reprojection_rmse: float
    inliers: np.ndarray = None
    converged: bool = True
    iterations: int = 0
    cost_history: list = field(default_factory=list)


def _check_corrs(points3d, points2d, min_count=MIN_CORRESPONDENCES):
    X = check_points(points3d, 3, "points3d")
    x = check_points(points2d, 2, "points2d")
    if len(X) != len(x):
        raise InvalidInputError(f"{len(X)} 3D points but {len(x)} 2D points")
    if len(X) < min_count:
        raise DegenerateInputError(
            f"need at least {min_count} correspondences, got {len(X)}"
        )
    return X, x


def normalize_pixels(K, x):
    """Pixels to normalized camera coordinates ``(x/z, y/z)``."""
    return np.column_stack([(x[:, 0] - K.u_p) / K.f_u, (x[:, 1] - K.v_p) / K.f_v])


def _normalizing_transform(X):
    c = X.mean(axis=0)
    d = np.sqrt(((X - c) ** 2).sum(axis=1)).mean()
    s = d / np.sqrt(3.0) if d > 0 else 1.0
    T = np.eye(4)
    T[:3, :3] /= s
    T[:3, 3] = -c / s
    return T


def _dlt_design(Xh, xn):
    """Stack the 2n x 12 DLT equations; works on batches (leading dims)."""
    zeros = np.zeros_like(Xh)
    u = xn[..., 0:1]
    v = xn[..., 1:2]
    r1 = np.concatenate([Xh, zeros, -u * Xh], axis=-1)
    r2 = np.concatenate([zeros, Xh, -v * Xh], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def _recover_rt(P, Xh_sample):
    """Batched ``P (B, 3, 4)`` to ``(R, t)`` with positive depth and ``det R = +1``."""
    depth = np.einsum("bj,bnj->bn", P[:, 2, :], Xh_sample)
    sign = np.where(depth.mean(axis=1) < 0, -1.0, 1.0)
    P = P * sign[:, None, None]
    M = P[:, :, :3]
    U, S, Vt = np.linalg.svd(M)
    D = np.ones((len(P), 3))
    D[:, 2] = np.sign(np.linalg.det(U @ Vt))
    R = U @ (D[:, :, None] * Vt)
    scale = S.mean(axis=1)
    t = P[:, :, 3] / scale[:, None]
    return R, t


def _dlt_batch(X, xn, idx):
    """DLT hypotheses for each row of index sets ``idx`` (B, m).

    Returns ``(R, t, valid)``; ``valid`` is false for rank-deficient samples.
    """
    T = _normalizing_transform(X)
    Xh = np.column_stack([X, np.ones(len(X))]) @ T.T
    A = _dlt_design(Xh[idx], xn[idx])
    if len(idx) == 1:
        _, S, Vt = np.linalg.svd(A)
        valid = S[:, -2] > RANK_TOL * S[:, 0]
        null = Vt[:, -1, :]
    else:
        # normal equations are cheaper for many small systems; the rank test
        # moves to squared singular values
        lam, V = np.linalg.eigh(A.transpose(0, 2, 1) @ A)
        valid = lam[:, 1] > BATCH_RANK_TOL * lam[:, -1]
        null = V[:, :, 0]
    P = null.reshape(-1, 3, 4) @ T
    Xh_orig = np.column_stack([X, np.ones(len(X))])[idx]
    R, t = _recover_rt(P, Xh_orig)
    return R, t, valid


def solve_pnp_dlt(points3d, points2d, K):
    """Linear pose from >= 6 correspondences.

    The 3x4 projection is solved in normalized coordinates, its left block is
    projected onto SO(3) through the SVD, and the overall sign is chosen so the
    points lie in front of the camera.
    """
    X, x = _check_corrs(points3d, points2d)
    xn = normalize_pixels(K, x)
    R, t, valid = _dlt_batch(X, xn, np.arange(len(X))[None, :])
    if not valid[0]:
        raise DegenerateInputError("correspondences are degenerate (rank-deficient DLT system)")
    return Pose(matrix_to_quat(R[0]), t[0])


def _residuals(R, t, X, xn):
    pc = X @ R.T + t
    z = pc[:, 2]
    if np.any(z <= 1e-9):
        return None, pc
    return (pc[:, :2] / z[:, None] - xn).ravel(), pc


def _jacobian(pc, t):
    """d(normalized projection)/d(rotation increment, translation).

    ``pc`` are camera-frame points ``R X + t`` of shape ``(..., n, 3)`` and
    ``t`` has shape ``(..., 3)``; returns ``(..., 2n, 6)``. The rotation is
    perturbed on the left, ``R <- exp([w]x) R``, which moves ``R X`` but not ``t``.
    """
    x, y, z = pc[..., 0], pc[..., 1], pc[..., 2]
    iz = 1.0 / z
    dproj = np.zeros(pc.shape[:-1] + (2, 3))
    dproj[..., 0, 0] = iz
    dproj[..., 0, 2] = -x * iz * iz
    dproj[..., 1, 1] = iz
    dproj[..., 1, 2] = -y * iz * iz
    # d(exp(w) p)/dw at w=0 is -[p]x with p = R X
    p = pc - t[..., None, :]
    a, b, c = p[..., 0], p[..., 1], p[..., 2]
    skew = np.zeros(pc.shape[:-1] + (3, 3))
    skew[..., 0, 1], skew[..., 0, 2] = c, -b
    skew[..., 1, 0], skew[..., 1, 2] = -c, a
    skew[..., 2, 0], skew[..., 2, 1] = b, -a
    J = np.concatenate([dproj @ skew, dproj], axis=-1)
    return J.reshape(pc.shape[:-2] + (-1, 6))


def _pixel_rmse(K, R, t, X, x):
    pc = X @ R.T + t
    if np.any(pc[:, 2] <= 1e-9):
        return float("inf")
    u = K.f_u * pc[:, 0] / pc[:, 2] + K.u_p
    v = K.f_v * pc[:, 1] / pc[:, 2] + K.v_p
    return float(np.sqrt(np.mean((u - x[:, 0]) ** 2 + (v - x[:, 1]) ** 2)))


def refine_pnp_lm(points3d, points2d, K, init, max_iters=50, tol=1e-12):
    """Levenberg-Marquardt refinement of the total squared reprojection error.

    The cost is evaluated in pixel units (normalized residuals weighted by the
    focal lengths). Rejected steps only raise the damping, so the accepted
    cost sequence in ``cost_history`` never increases. Iteration stops once the
    step norm drops below ``tol`` or after ``max_iters`` iterations.
    """
    X, x = _check_corrs(points3d, points2d, min_count=3)
    if not init.translation[2] > 0:
        raise InvalidInputError("initial pose must have T_z > 0")
    xn = normalize_pixels(K, x)
    wts = np.tile([K.f_u, K.f_v], len(X))
    R, t = init.R, init.t

    r, pc = _residuals(R, t, X, xn)
    if r is None or not np.all(np.isfinite(r)):
        raise NumericalError("initial pose gives non-finite residuals")
    r = r * wts
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        J = _jacobian(pc, t) * wts[:, None]
        g = J.T @ r
        H = J.T @ J
        if cost == 0.0 or np.max(np.abs(g)) < 1e-15:
            converged = True
            it -= 1
            break
        while True:
            A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                raise NumericalError("non-finite LM step")
            R_new = rotvec_to_matrix(step[:3]) @ R
            t_new = t + step[3:]
            r_new, pc_new = _residuals(R_new, t_new, X, xn)
            new_cost = float("inf") if r_new is None else float((r_new * wts) @ (r_new * wts))
            if new_cost < cost:
                R, t, pc = R_new, t_new, pc_new
                r = r_new * wts
                cost = new_cost
                history.append(cost)
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if lam > 1e16 or np.linalg.norm(step) < tol:
            converged = True
            break
    # re-orthonormalize against drift from repeated left-multiplication
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return PnPResult(
        pose=Pose(matrix_to_quat(R), t),
        reprojection_rmse=_pixel_rmse(K, R, t, X, x),
        inliers=np.ones(len(X), dtype=bool),
        converged=converged,
        iterations=it,
        cost_history=history,
    )


def _reprojection_errors(K, R, t, X, x):
    """Per-hypothesis, per-point pixel errors for batched ``R (B,3,3)``, ``t (B,3)``."""
    pc = X @ R.transpose(0, 2, 1) + t[:, None, :]
    z = pc[..., 2]
    safe = np.where(z > 1e-9, z, 1.0)
    u = K.f_u * pc[..., 0] / safe + K.u_p
    v = K.f_v * pc[..., 1] / safe + K.v_p
    err = np.hypot(u - x[None, :, 0], v - x[None, :, 1])
    return np.where(z > 1e-9, err, np.inf)


def _batch_cost(R, t, Xs, xs, wts):
    pc = Xs @ R.transpose(0, 2, 1) + t[:, None, :]
    z = pc[..., 2]
    ok = np.all(z > 1e-9, axis=1)
    r = (pc[..., :2] / np.where(z > 1e-9, z, 1.0)[..., None] - xs) * wts
    cost = np.where(ok, (r ** 2).sum(axis=(1, 2)), np.inf)
    return r.reshape(len(R), -1), pc, cost


def _polish_batch(R, t, Xs, xs, wts, iters):
    """A fixed number of damped Gauss-Newton steps per hypothesis, in parallel.

    ``Xs (B, m, 3)`` and ``xs (B, m, 2)`` are each hypothesis' own sample.
    Hypotheses that start behind the camera keep an infinite cost.
    """
    r, pc, cost = _batch_cost(R, t, Xs, xs, wts)
    lam = np.full(len(R), 1e-3)
    eye = np.eye(6)
    for _ in range(iters):
        live = np.isfinite(cost)
        if not live.any():
            break
        pcs = np.where(live[:, None, None], pc, 1.0)
        J = _jacobian(pcs, t) * np.tile(wts, pc.shape[1])[None, :, None]
        Jt = J.transpose(0, 2, 1)
        H = Jt @ J
        g = (Jt @ np.where(live[:, None], r, 0.0)[..., None])[..., 0]
        A = H + lam[:, None, None] * (eye * np.maximum(np.diagonal(H, axis1=1, axis2=2), 1e-12)[:, None, :])
        try:
            step = -np.linalg.solve(A, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        step = np.where(np.isfinite(step), step, 0.0)
        R_new = rotvec_to_matrix(step[:, :3]) @ R
        t_new = t + step[:, 3:]
        r_new, pc_new, c_new = _batch_cost(R_new, t_new, Xs, xs, wts)
        acc = live & (c_new < cost)
        R = np.where(acc[:, None, None], R_new, R)
        t = np.where(acc[:, None], t_new, t)
        pc = np.where(acc[:, None, None], pc_new, pc)
        r = np.where(acc[:, None], r_new, r)
        cost = np.where(acc, c_new, cost)
        lam = np.where(acc, lam * 0.1, lam * 10.0)
    return R, t, np.isfinite(cost)


def solve_pnp_ransac(points3d, points2d, K, iterations=100, inlier_threshold=3.0, seed=0,
                     max_iters=50, tol=1e-12, polish_iters=6):
    """Robust PnP: 6-point DLT hypotheses scored by inlier count.

    Each hypothesis gets ``polish_iters`` damped Gauss-Newton steps on its own
    six points before scoring; a bare 6-point DLT has no redundancy and under
    pixel noise is usually too far off to collect inliers at a few pixels.
    The best hypothesis (most inliers, then lowest inlier error) is refined
    with :func:`refine_pnp_lm` on its inliers; inliers are then recomputed
    from the refined pose and the refinement repeated until the set is stable.
    Deterministic for a given ``seed``.
    """
    X, x = _check_corrs(points3d, points2d)
    n = len(X)
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    # a random permutation per row; its first 6 entries are a uniform 6-subset
    idx = np.argsort(rng.random((iterations, n)), axis=1)[:, :MIN_CORRESPONDENCES]
    xn = normalize_pixels(K, x)
    R, t, valid = _dlt_batch(X, xn, idx)
    wts = np.array([K.f_u, K.f_v])
    if polish_iters > 0:
        R, t, ok = _polish_batch(R, t, X[idx], xn[idx], wts, polish_iters)
        valid &= ok
    err = _reprojection_errors(K, R, t, X, x)
    inl = (err < inlier_threshold) & valid[:, None]
    counts = inl.sum(axis=1)
    score = np.where(inl, err, 0.0).sum(axis=1)
    best = np.lexsort((score, -counts))[0]
    if counts[best] < MIN_CORRESPONDENCES:
        raise NoConsensusError(
            f"best hypothesis has {counts[best]} inliers; need {MIN_CORRESPONDENCES}"
        )
    mask = inl[best]
    pose = Pose(matrix_to_quat(R[best]), t[best])
    result = None
    for _ in range(5):
        result = refine_pnp_lm(X[mask], x[mask], K, pose, max_iters=max_iters, tol=tol)
        pose = result.pose
        new_mask = _reprojection_errors(K, pose.R[None], pose.t[None], X, x)[0] < inlier_threshold
        if np.array_equal(new_mask, mask) or new_mask.sum() < MIN_CORRESPONDENCES:
            break
        mask = new_mask
    result.inliers = mask
    return result
