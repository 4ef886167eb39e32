"""Central-difference verification of the analytic gradients.

Backs the ``gradcheck`` CLI subcommand.  Each checker draws random
instances (away from the non-smooth point of the Laplacian log-likelihood
at zero residual and the geodesic endpoints), compares every analytic
gradient against a central finite difference with step ``h``, and reports
the worst relative error, ``max|g - g_fd| / (max|g_fd| + tiny)``.
"""

from __future__ import annotations

import numpy as np

from .geometry import Camera, CameraExtrinsics, CameraSpaceConfig, rot6d_to_matrix
from .landmarks import LandmarkSet2D
from .lifting import MultiViewObservations, ViewObservation, reprojection_cost
from .losses import MultiViewPrediction, PoseTarget, lll_2d, multiframe_loss, multiview_loss

FD_STEP = 1e-6


def central_difference(f, x, h=FD_STEP):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for k in range(xf.size):
        xp, xm = xf.copy(), xf.copy()
        xp[k] += h
        xm[k] -= h
        flat[k] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return grad


def _rel_error(analytic, fd):
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    return float(np.max(np.abs(analytic - fd)) / (np.max(np.abs(fd)) + 1e-12))


def _random_rotation(rng):
    return rot6d_to_matrix(rng.normal(size=6))


def check_lll(rng, draws=1000, h=FD_STEP) -> float:
    worst = 0.0
    for _ in range(draws):
        target = rng.normal(scale=3.0, size=2)
        pred = target + _away_from_zero(rng.normal(scale=2.0, size=2), 0.05)
        params = rng.uniform(-1.0, 1.0, size=3)
        _, g_pred, g_params = lll_2d(pred, target, params)
        fd_pred = central_difference(lambda p: lll_2d(p, target, params)[0], pred, h)
        fd_params = central_difference(lambda q: lll_2d(pred, target, q)[0], params, h)
        worst = max(worst, _rel_error(g_pred, fd_pred), _rel_error(g_params, fd_params))
    return worst


def _away_from_zero(r, floor):
    norm = np.linalg.norm(r)
    if norm < floor:
        r = r + floor * np.sign(r + (r == 0))
    return r


def check_multiframe(rng, draws=1000, h=FD_STEP, n=4) -> float:
    worst = 0.0
    for _ in range(draws):
        target = rng.normal(scale=3.0, size=(n, 2))
        pred = target + np.array([_away_from_zero(v, 0.05) for v in rng.normal(scale=2.0, size=(n, 2))])
        chol = rng.uniform(-1.0, 1.0, size=(n, 3))
        mask = rng.uniform(size=n) < 0.7
        _, g_pred, g_chol = multiframe_loss(pred, chol, target, mask)
        fd_pred = central_difference(lambda p: multiframe_loss(p, chol, target, mask)[0], pred, h)
        fd_chol = central_difference(lambda c: multiframe_loss(pred, c, target, mask)[0], chol, h)
        if mask.any():
            worst = max(worst, _rel_error(g_pred, fd_pred), _rel_error(g_chol, fd_chol))
    return worst


def check_multiview(rng, draws=1000, h=FD_STEP, n=4) -> float:
    worst = 0.0
    for _ in range(draws):
        R_t = _random_rotation(rng)
        # Keep the rotation pair away from the arccos endpoints.
        R_p = rot6d_to_matrix((R_t[:, :2].T.reshape(6) + 0.3 * rng.normal(size=6)))
        target = PoseTarget(rotation=R_t, delta_t=rng.normal(size=3),
                            landmarks3d=rng.normal(size=(n, 3)),
                            landmarks2d=rng.normal(scale=3.0, size=(n, 2)),
                            mask=rng.uniform(size=n) < 0.7)
        pred25 = target.landmarks2d + np.array(
            [_away_from_zero(v, 0.05) for v in rng.normal(scale=2.0, size=(n, 2))])
        pred = MultiViewPrediction(landmarks3d=rng.normal(size=(n, 3)), delta_t=rng.normal(size=3),
                                   rotation=R_p, landmarks25d=pred25,
                                   chol=rng.uniform(-1.0, 1.0, size=(n, 3)))

        res = multiview_loss(pred, target)

        def total(landmarks3d=None, delta_t=None, rotation=None, landmarks25d=None, chol=None):
            q = MultiViewPrediction(
                landmarks3d=pred.landmarks3d if landmarks3d is None else landmarks3d,
                delta_t=pred.delta_t if delta_t is None else delta_t,
                rotation=pred.rotation if rotation is None else rotation,
                landmarks25d=pred.landmarks25d if landmarks25d is None else landmarks25d,
                chol=pred.chol if chol is None else chol)
            return multiview_loss(q, target).total

        checks = [
            (res.grads["landmarks3d"], central_difference(lambda a: total(landmarks3d=a), pred.landmarks3d, h)),
            (res.grads["delta_t"], central_difference(lambda a: total(delta_t=a), pred.delta_t, h)),
            (res.grads["rotation"], central_difference(lambda a: total(rotation=a), pred.rotation, h)),
            (res.grads["landmarks25d"], central_difference(lambda a: total(landmarks25d=a), pred.landmarks25d, h)),
            (res.grads["chol"], central_difference(lambda a: total(chol=a), pred.chol, h)),
        ]
        for g, fd in checks:
            worst = max(worst, _rel_error(g, fd))
    return worst


def check_reprojection(rng, draws=1000, h=FD_STEP, n=3, n_views=3) -> float:
    cfg = CameraSpaceConfig()
    worst = 0.0
    for _ in range(draws):
        pts = rng.normal(scale=0.2, size=(n, 3))
        views = []
        for _v in range(n_views):
            R = _random_rotation(rng)
            t = np.array([0.0, 0.0, cfg.radius]) + rng.normal(scale=0.1, size=3)
            cam = Camera(cfg.intrinsics, CameraExtrinsics(R, t))
            det = LandmarkSet2D(rng.uniform(0, cfg.intrinsics.image_dim, size=(n, 2)))
            views.append(ViewObservation(camera=cam, detections=det,
                                         mask=rng.uniform(size=n) < 0.8))
        obs = MultiViewObservations(views=views)
        ev = reprojection_cost(pts, obs)
        if ev.residuals.size == 0:
            continue
        scale = np.abs(ev.jacobian).max() + 1e-12

        # Difference the full residual vector per input coordinate; rows of
        # other landmarks must not move (per-landmark decomposition).
        for lm in range(n):
            rows = ev.landmark_indices == lm
            for axis in range(3):
                pp, pm = pts.copy(), pts.copy()
                pp[lm, axis] += h
                pm[lm, axis] -= h
                fd = (reprojection_cost(pp, obs).residuals - reprojection_cost(pm, obs).residuals) / (2 * h)
                expected = np.where(rows, ev.jacobian[:, axis], 0.0)
                worst = max(worst, float(np.max(np.abs(fd - expected))) / scale)
    return worst


def run_all(seed: int, draws: int = 1000) -> dict:
    """Every gradient check; returns the worst relative error per loss."""
    return {
        "lll_2d": check_lll(np.random.default_rng(seed), draws),
        "multiframe_loss": check_multiframe(np.random.default_rng(seed + 1), draws),
        "multiview_loss": check_multiview(np.random.default_rng(seed + 2), draws),
        "reprojection_cost": check_reprojection(np.random.default_rng(seed + 3), draws),
    }
