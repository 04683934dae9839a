"""Pose solvers: Kabsch (3D-3D) and EPnP-style PnP (2D-3D).

Both return camera-to-world poses (the convention used throughout the
toolkit). The PnP solver follows the EPnP control-point scheme (beta
cases N=1 and N=2 with a Gauss-Newton polish) and finishes with an
iterative reprojection-error refinement on SE(3).
"""

import numpy as np

from . import geometry
from .errors import BehindCamera, DegenerateConfiguration, TooFewPoints
from .geometry import Pose

KABSCH_RANK_TOL = 1e-12


def kabsch(camera_points, scene_points):
    """Least-squares rigid transform mapping camera points onto scene points.

    Centroid subtraction, SVD of the 3x3 cross-covariance, and the usual
    determinant correction so det(R) = +1.
    """
    x = np.asarray(camera_points, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(scene_points, dtype=np.float64).reshape(-1, 3)
    if x.shape != y.shape:
        raise TooFewPoints("camera and scene point counts differ")
    n = x.shape[0]
    if n < 3:
        raise TooFewPoints(f"kabsch needs at least 3 matches, got {n}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    h = xc.T @ yc
    u, s, vt = np.linalg.svd(h)
    if s[1] < KABSCH_RANK_TOL * s[0]:
        raise DegenerateConfiguration("points are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = y.mean(axis=0) - r @ x.mean(axis=0)
    return Pose(r, t)


def reprojection_error_px(pose, pixels, scene_points, K):
    """Per-match pixel error; points behind the camera are flagged +inf."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    cam = geometry.scene_to_camera(pose, scene_points).reshape(-1, 3)
    errors = np.full(cam.shape[0], np.inf)
    front = cam[:, 2] > 0
    if np.any(front):
        proj = geometry.project(K, cam[front])
        errors[front] = np.linalg.norm(proj - pixels[front], axis=1)
    return errors


def _control_points(world):
    """Centroid + principal directions, scaled by sqrt of eigenvalues."""
    c0 = world.mean(axis=0)
    centered = world - c0
    cov = centered.T @ centered / world.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] < 1e-12 * max(eigval[2], 1e-300):
        raise DegenerateConfiguration("scene points are (near-)coplanar")
    ctrl = [c0]
    for k in range(3):
        ctrl.append(c0 + np.sqrt(eigval[k]) * eigvec[:, k])
    return np.array(ctrl)


def _barycentric(world, ctrl):
    a = np.vstack([ctrl.T, np.ones(4)])
    b = np.vstack([world.T, np.ones(world.shape[0])])
    return np.linalg.solve(a, b).T  # (n, 4)


def _build_m(alphas, pixels, K):
    n = alphas.shape[0]
    m = np.zeros((2 * n, 12))
    for j in range(4):
        a = alphas[:, j]
        m[0::2, 3 * j + 0] = a * K.fx
        m[0::2, 3 * j + 2] = a * (K.cx - pixels[:, 0])
        m[1::2, 3 * j + 1] = a * K.fy
        m[1::2, 3 * j + 2] = a * (K.cy - pixels[:, 1])
    return m


def _ctrl_distances(ctrl):
    idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    return idx, np.array([np.linalg.norm(ctrl[i] - ctrl[j]) for i, j in idx])


def _betas_case1(v1, dist_w, pair_idx):
    num = 0.0
    den = 0.0
    for (i, j), dw in zip(pair_idx, dist_w):
        dv = np.linalg.norm(v1[i] - v1[j])
        num += dv * dw
        den += dv * dv
    return np.array([num / max(den, 1e-300)])


def _betas_case2(v1, v2, dist_w, pair_idx):
    # ||b1*a + b2*b||^2 = d^2 is linear in (b1^2, b1*b2, b2^2)
    rows = []
    rhs = []
    for (i, j), dw in zip(pair_idx, dist_w):
        a = v1[i] - v1[j]
        b = v2[i] - v2[j]
        rows.append([a @ a, 2.0 * (a @ b), b @ b])
        rhs.append(dw * dw)
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    b11, b12, b22 = sol
    b1 = np.sqrt(abs(b11))
    b2 = np.sqrt(abs(b22))
    if b12 < 0:
        b2 = -b2
    return np.array([b1, b2])


def _gauss_newton_betas(vs, betas, dist_w, pair_idx, iters=10):
    """Polish betas so inter-control-point distances match the world ones."""
    betas = betas.copy()
    for _ in range(iters):
        ctrl = np.tensordot(betas, vs, axes=(0, 0))
        res = []
        jac = []
        for (i, j), dw in zip(pair_idx, dist_w):
            diff = ctrl[i] - ctrl[j]
            res.append(diff @ diff - dw * dw)
            jac.append([2.0 * diff @ (vs[k, i] - vs[k, j]) for k in range(len(betas))])
        jac = np.array(jac)
        res = np.array(res)
        try:
            step, *_ = np.linalg.lstsq(jac, res, rcond=None)
        except np.linalg.LinAlgError:
            break
        betas -= step
        if np.max(np.abs(step)) < 1e-12:
            break
    return betas


def _candidate_pose(vs, betas, alphas, world):
    ctrl_cam = np.tensordot(betas, vs, axes=(0, 0))
    cam = alphas @ ctrl_cam
    if cam[:, 2].mean() < 0:
        cam = -cam
    # world->camera alignment, then invert to camera-to-world
    w2c = kabsch(world, cam)
    return Pose(w2c.rotation.T, -w2c.rotation.T @ w2c.translation)


def _refine_reprojection(pose, pixels, world, K, iters=20):
    """Gauss-Newton on SE(3) minimizing squared reprojection error."""
    r = pose.rotation.T.copy()  # world -> camera
    t = -r @ pose.translation
    for _ in range(iters):
        cam = world @ r.T + t
        z = cam[:, 2]
        front = z > 1e-9
        if front.sum() < 3:
            break
        c = cam[front]
        zf = c[:, 2]
        res = np.empty((front.sum(), 2))
        res[:, 0] = K.fx * c[:, 0] / zf + K.cx - pixels[front, 0]
        res[:, 1] = K.fy * c[:, 1] / zf + K.cy - pixels[front, 1]
        # d(pixel)/d(cam point)
        jp = np.zeros((front.sum(), 2, 3))
        jp[:, 0, 0] = K.fx / zf
        jp[:, 0, 2] = -K.fx * c[:, 0] / zf ** 2
        jp[:, 1, 1] = K.fy / zf
        jp[:, 1, 2] = -K.fy * c[:, 1] / zf ** 2
        # cam = R exp([w]) X + t; d(cam)/dw = -R [X]x, d(cam)/dt = I
        xw = world[front]
        jw = np.einsum("nij,njk->nik", jp, -np.einsum("ij,njk->nik", r, _skew_batch(xw)))
        jt = jp
        jac = np.concatenate([jw, jt], axis=2).reshape(-1, 6)
        resv = res.reshape(-1)
        try:
            step, *_ = np.linalg.lstsq(jac, resv, rcond=None)
        except np.linalg.LinAlgError:
            break
        dw, dt = -step[:3], step[3:]
        if np.linalg.norm(dw) > 0:
            r = r @ geometry.rotation_from_axis_angle(dw, np.linalg.norm(dw))
        r = _orthonormalize(r)
        t = t - dt
        if np.linalg.norm(step) < 1e-14:
            break
    return Pose(r.T, -r.T @ t)


def _skew_batch(v):
    n = v.shape[0]
    s = np.zeros((n, 3, 3))
    s[:, 0, 1] = -v[:, 2]
    s[:, 0, 2] = v[:, 1]
    s[:, 1, 0] = v[:, 2]
    s[:, 1, 2] = -v[:, 0]
    s[:, 2, 0] = -v[:, 1]
    s[:, 2, 1] = v[:, 0]
    return s


def _orthonormalize(r):
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, 2] = -u[:, 2]
        q = u @ vt
    return q


def pnp(pixels, scene_points, K):
    """EPnP-style pose from 2D-3D matches, returning a camera-to-world pose.

    Needs at least 6 matches. Raises BehindCamera if the best solution
    leaves more than half of the points at non-positive depth.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    world = np.asarray(scene_points, dtype=np.float64).reshape(-1, 3)
    n = world.shape[0]
    if n < 6:
        raise TooFewPoints(f"pnp needs at least 6 matches, got {n}")
    ctrl_w = _control_points(world)
    alphas = _barycentric(world, ctrl_w)
    m = _build_m(alphas, pixels, K)
    _, _, vt = np.linalg.svd(m, full_matrices=False)
    # 4 smallest right singular vectors, each reshaped to 4 camera control points
    vs = vt[::-1][:4].reshape(4, 4, 3)
    pair_idx, dist_w = _ctrl_distances(ctrl_w)

    candidates = []
    b1 = _betas_case1(vs[0], dist_w, pair_idx)
    candidates.append((vs[:1], _gauss_newton_betas(vs[:1], b1, dist_w, pair_idx)))
    b2 = _betas_case2(vs[0], vs[1], dist_w, pair_idx)
    candidates.append((vs[:2], _gauss_newton_betas(vs[:2], b2, dist_w, pair_idx)))

    best = None
    best_err = np.inf
    for v_sub, betas in candidates:
        try:
            pose = _candidate_pose(v_sub, betas, alphas, world)
        except (DegenerateConfiguration, TooFewPoints, np.linalg.LinAlgError):
            continue
        err = reprojection_error_px(pose, pixels, world, K)
        mean_err = np.mean(np.where(np.isfinite(err), err, 1e6))
        if mean_err < best_err:
            best_err = mean_err
            best = pose
    if best is None:
        raise DegenerateConfiguration("no valid EPnP candidate")
    best = _refine_reprojection(best, pixels, world, K)
    depths = geometry.scene_to_camera(best, world)[:, 2]
    if np.count_nonzero(depths <= 0) > n / 2:
        raise BehindCamera("solution places most points behind the camera")
    return best
