"""Monocular pose-and-shape fitting against a lifted 3D template.

The head is parameterized exactly like the regression targets elsewhere in
the library: per-landmark 3D offsets added to a template, a 6D rotation
encoding, and a translation offset composed with the sphere translation,
``t = sphere_translation(R) + delta_t``.  Fitting minimizes the masked
multi-frame LLL objective plus a quadratic offset prior,

    loss = multiframe_loss(project(template + offsets), detections, mask)
           + lambda_offsets * ||offsets||^2,

with the visibility mask recomputed from the current rotation estimate
before each step and held fixed within it, so every accepted step
decreases the cost it was evaluated under.

Solver
------
The offsets are eliminated in closed form (variable projection): with unit
covariances the LLL term for landmark ``n`` is ``||r_n||``, and the inner
problem ``min_d ||r + P d|| + lambda ||d||^2`` is solved along the
minimum-norm correction ``d = -s P^T (P P^T)^{-1} r`` by the scalar
``s* = min(1, ||r|| / (2 lambda c))`` with ``c = r^T (P P^T)^{-1} r``.  For
practical ``lambda`` this zeroes the residual and leaves the smooth
marginal pose cost ``lambda * sum_n r_n^T (P_n P_n^T)^{-1} r_n``, which a
damped Gauss-Newton iteration with a backtracking line search drives to
the optimum.  Joint first-order descent stalls far short of the
documented recovery tolerance here: the offset/pose exchange direction is
almost flat, differing only through the prior.

The pose is initialized by a coarse grid search over the rig's
azimuth/elevation angles (zero offsets) scored by squared pixel error,
with roll and translation offset completed in closed form per candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UnderdeterminedError, ValidationError
from .geometry import (
    DEPTH_EPSILON,
    Camera,
    CameraExtrinsics,
    CameraSpaceConfig,
    look_at_rotation,
    matrix_to_rot6d,
    roll_matrix,
    rot6d_to_matrix,
    sphere_translation,
)
from .landmarks import LandmarkSet2D, LandmarkSet3D
from .lifting import resolve_excluded_indices
from .masking import FORWARD_DEFAULT, NormalTemplate
from .synthgen import make_default_rig

logger = logging.getLogger(__name__)


@dataclass
class HeadParams:
    """Fit parameters: template offsets, 6D rotation, translation offset, covariances."""

    offsets: np.ndarray
    rot6d: np.ndarray
    delta_t: np.ndarray
    chol: np.ndarray = None

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.rot6d = np.asarray(self.rot6d, dtype=float).reshape(6)
        self.delta_t = np.asarray(self.delta_t, dtype=float).reshape(3)
        if self.chol is None:
            self.chol = np.zeros((self.offsets.shape[0], 3))  # isotropic unit covariance
        self.chol = np.asarray(self.chol, dtype=float)


@dataclass
class FitOptions:
    lambda_offsets: float = 1e-2
    max_iter: int = 500
    tol: float = 1e-9
    min_valid: int = 6
    excluded_indices: object = "auto"
    n_starts: int = 3
    armijo_c: float = 1e-4
    step_shrink: float = 0.5
    max_backtracks: int = 40


@dataclass
class FitResult:
    """Fitted parameters plus diagnostics.

    ``step_costs`` holds one ``(before, after)`` pair per accepted line
    search step, both evaluated under that step's visibility mask; the
    ``after`` value never exceeds ``before``.
    """

    params: HeadParams
    landmarks3d: LandmarkSet3D
    camera: Camera
    final_cost: float
    iterations: int
    step_costs: np.ndarray
    converged: bool

    def to_json(self) -> dict:
        return {
            "offsets": [[float(v) for v in row] for row in self.params.offsets],
            "rot6d": [float(v) for v in self.params.rot6d],
            "rotation": [float(v) for v in self.camera.R.reshape(-1)],
            "delta_t": [float(v) for v in self.params.delta_t],
            "landmarks3d": self.landmarks3d.to_json(),
            "final_cost": float(self.final_cost),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def predict_camera(rot6d, delta_t, cfg: CameraSpaceConfig) -> Camera:
    """Camera from the head parameterization: ``R`` decoded from 6D, ``t`` composed on the sphere."""
    R = rot6d_to_matrix(rot6d)
    t = sphere_translation(R, cfg) + np.asarray(delta_t, dtype=float).reshape(3)
    return Camera(cfg.intrinsics, CameraExtrinsics(R, t))


def rot6d_jacobian(r) -> np.ndarray:
    """Derivative of :func:`flk.geometry.rot6d_to_matrix` w.r.t. its six inputs, shape (3, 3, 6)."""
    r = np.asarray(r, dtype=float).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    b2 = u2 / n2

    eye = np.eye(3)
    db1_da1 = (eye - np.outer(b1, b1)) / n1
    du2_da2 = eye - np.outer(b1, b1)
    du2_da1 = -(np.outer(b1, a2) + (b1 @ a2) * eye) @ db1_da1
    db2_du2 = (eye - np.outer(b2, b2)) / n2
    db2_da1 = db2_du2 @ du2_da1
    db2_da2 = db2_du2 @ du2_da2

    def cross_mat(v):
        return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])

    b1x, b2x = cross_mat(b1), cross_mat(b2)
    db3_da1 = -b2x @ db1_da1 + b1x @ db2_da1
    db3_da2 = b1x @ db2_da2

    J = np.zeros((3, 3, 6))
    J[:, 0, :3] = db1_da1
    J[:, 1, :3] = db2_da1
    J[:, 1, 3:] = db2_da2
    J[:, 2, :3] = db3_da1
    J[:, 2, 3:] = db3_da2
    return J


class _FitProblem:
    """Shared evaluation machinery for one monocular fit."""

    def __init__(self, template_pts, valid_det, det_pts, normals, thresholds, forward, cfg, lam):
        self.template = template_pts
        self.valid_det = valid_det
        self.det = det_pts
        self.normals = normals
        self.thresholds = thresholds
        self.forward = forward
        self.cfg = cfg
        self.lam = lam
        self.p_rel = template_pts - np.asarray(cfg.lookat)
        self.base_t = np.array([0.0, 0.0, cfg.radius])

    def mask_for(self, R):
        return ((self.normals @ R.T) @ self.forward > self.thresholds) & self.valid_det

    def evaluate(self, pose, mask, with_jacobian=False):
        """Marginal cost at ``pose`` (9,) under ``mask``, with inner-optimal offsets.

        Returns ``(cost, info)``; ``info`` carries the per-landmark inner
        offsets and, when requested, the pieces of the Gauss-Newton system.
        """
        rot6d, delta_t = pose[:6], pose[6:]
        R = rot6d_to_matrix(rot6d)
        q = self.p_rel @ R.T + (self.base_t + delta_t)
        front = q[:, 2] > DEPTH_EPSILON
        mask = mask & front
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return 0.0, {"mask": mask, "idx": idx, "offsets": np.zeros_like(self.template)}

        qm = q[idx]
        intr = self.cfg.intrinsics
        fx, fy = intr.fx, intr.fy
        u = fx * qm[:, 0] / qm[:, 2] + intr.cx
        v = fy * qm[:, 1] / qm[:, 2] + intr.cy
        resid = np.stack([u, v], axis=1) - self.det[idx]

        d_uv_dq = np.zeros((idx.size, 2, 3))
        d_uv_dq[:, 0, 0] = fx / qm[:, 2]
        d_uv_dq[:, 0, 2] = -fx * qm[:, 0] / qm[:, 2] ** 2
        d_uv_dq[:, 1, 1] = fy / qm[:, 2]
        d_uv_dq[:, 1, 2] = -fy * qm[:, 1] / qm[:, 2] ** 2
        P = d_uv_dq @ R  # (m, 2, 3), d uv / d offsets

        M = np.einsum("nij,nkj->nik", P, P)  # P P^T, SPD for points in front
        M_inv = np.linalg.inv(M)
        Wr = np.einsum("nij,nj->ni", M_inv, resid)
        c = np.einsum("ni,ni->n", resid, Wr)
        rnorm = np.linalg.norm(resid, axis=1)

        # Inner solution along the minimum-norm zeroing direction.
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(c > 0, rnorm / (2.0 * self.lam * np.maximum(c, 1e-300)), 0.0)
        s = np.minimum(s, 1.0)
        inner = (1.0 - s) * rnorm + self.lam * s**2 * c
        cost = float(inner.sum())

        offsets = np.zeros_like(self.template)
        offsets[idx] = -s[:, None] * np.einsum("nji,nj->ni", P, Wr)

        info = {"mask": mask, "idx": idx, "offsets": offsets}
        if with_jacobian:
            # d uv / d pose: rot6d through dR/drot6d, delta_t directly.
            drot = rot6d_jacobian(rot6d)
            duv_dR = np.einsum("nki,nj->nkij", d_uv_dq, self.p_rel[idx])
            B = np.concatenate([np.einsum("nkij,ijl->nkl", duv_dR, drot), d_uv_dq], axis=2)
            info.update({"resid": resid, "B": B, "M_inv": M_inv})
        return cost, info


def _gauss_newton_direction(info, lam):
    """Step for the marginal pose cost with frozen weights ``lambda * M^{-1}``."""
    B, resid, W = info["B"], info["resid"], info["M_inv"]
    WB = np.einsum("nij,njk->nik", W, B)
    H = np.einsum("nki,nkj->ij", B, WB)
    g = np.einsum("nki,nk->i", WB, resid)
    mu = 1e-12 * (abs(np.trace(H)) / 9.0 + 1.0)
    try:
        step = np.linalg.solve(H + mu * np.eye(9), -g)
    except np.linalg.LinAlgError:
        return None, None
    if not np.all(np.isfinite(step)):
        return None, None
    return step, 2.0 * lam * g  # direction and the frozen-weight gradient


def _descend(pose, problem: _FitProblem, options: FitOptions):
    """Monotone pose descent; returns (cost, pose, offsets, step_costs, iters, converged)."""
    R = rot6d_to_matrix(pose[:6])
    mask = problem.mask_for(R)
    cost, info = problem.evaluate(pose, mask, with_jacobian=True)
    step_costs = []
    converged = False
    it = 0
    for it in range(1, options.max_iter + 1):
        if not np.isfinite(cost):
            break
        if info["idx"].size == 0 or cost == 0.0:
            converged = True
            break
        direction, grad = _gauss_newton_direction(info, problem.lam)
        if direction is None:
            converged = True
            break
        slope = float(grad @ direction)
        if slope >= 0.0:
            direction, slope = -grad, -float(grad @ grad)
            if slope == 0.0:
                converged = True
                break

        accepted = False
        t = 1.0
        for _ in range(options.max_backtracks):
            trial = pose + t * direction
            try:
                trial_cost, _ = problem.evaluate(trial, mask)
            except (ValueError, np.linalg.LinAlgError):
                trial_cost = np.inf
            if np.isfinite(trial_cost) and trial_cost <= cost + options.armijo_c * t * slope:
                accepted = True
                break
            t *= options.step_shrink
        if not accepted:
            converged = True
            break

        step_costs.append((cost, trial_cost))
        drop = cost - trial_cost
        pose = trial
        # Recompute the mask from the accepted rotation for the next step.
        mask = problem.mask_for(rot6d_to_matrix(pose[:6]))
        cost, info = problem.evaluate(pose, mask, with_jacobian=True)
        if drop <= options.tol * max(abs(cost), 1e-30):
            converged = True
            break
    return cost, pose, info["offsets"], step_costs, it, converged


def _grid_initialization(template_pts, valid_det, det_pts, normals, thresholds, forward, cfg):
    """Coarse pose candidates from a grid search over the rig's (azimuth, elevation) angles.

    For each grid angle pair the roll and translation offset are completed
    in closed form: with square pixels, roll is an exact in-plane rotation
    of the principal-point-centered projections and the translation offset
    maps to an image shift and scale, so a 2D similarity Procrustes fit of
    the zero-offset template projections onto the visible detections
    recovers them directly.  Candidates are scored by the squared pixel
    error of that alignment; valid detections the candidate's mask leaves
    unexplained are charged a half-image-size penalty each so that poses
    explaining more of the evidence win.
    """
    fx, fy = cfg.intrinsics.fx, cfg.intrinsics.fy
    center = np.array([cfg.intrinsics.cx, cfg.intrinsics.cy])
    penalty = (cfg.intrinsics.image_dim / 2.0) ** 2
    n_valid = int(valid_det.sum())
    candidates = []
    for pose in make_default_rig():
        if abs(pose.alpha) > cfg.A or abs(pose.beta) > cfg.B:
            continue
        R = look_at_rotation(pose.alpha, pose.beta)
        mask = ((normals @ R.T) @ forward > thresholds) & valid_det  # roll-invariant
        m = int(mask.sum())
        if m < 2:
            continue
        q = (template_pts[mask] - np.asarray(cfg.lookat)) @ R.T + np.array([0.0, 0.0, cfg.radius])
        w = np.maximum(q[:, 2], DEPTH_EPSILON)
        z = np.stack([fx * q[:, 0] / w, fy * q[:, 1] / w], axis=1)
        d = det_pts[mask] - center

        z_mean, d_mean = z.mean(axis=0), d.mean(axis=0)
        zc, dc = z - z_mean, d - d_mean
        a = float(np.sum(zc * dc))
        b = float(np.sum(zc[:, 0] * dc[:, 1] - zc[:, 1] * dc[:, 0]))
        denom = float(np.sum(zc**2))
        if denom <= 0.0 or (a == 0.0 and b == 0.0):
            theta, scale = 0.0, 1.0
        else:
            theta = np.arctan2(b, a)
            scale = float(np.hypot(a, b) / denom)
        scale = min(max(scale, 0.5), 2.0)  # keep the implied depth sane
        c, s = np.cos(theta), np.sin(theta)
        rot2 = np.array([[c, -s], [s, c]])
        shift = d_mean - scale * (rot2 @ z_mean)
        err = float(np.sum((scale * (z @ rot2.T) + shift - d) ** 2))
        score = (err + (n_valid - m) * penalty) / n_valid

        dt_z = cfg.radius * (1.0 - scale) / scale
        depth = cfg.radius + dt_z
        delta_t0 = np.array([shift[0] * depth / fx, shift[1] * depth / fy, dt_z])
        R0 = roll_matrix(np.degrees(theta)) @ R
        candidates.append((score, R0, delta_t0))
    if not candidates:
        raise UnderdeterminedError("every landmark is masked at every candidate pose")
    candidates.sort(key=lambda cand: cand[0])
    return [(R, dt) for _, R, dt in candidates]


def fit_monocular(detections: LandmarkSet2D, template: LandmarkSet3D,
                  normal_template: NormalTemplate, cfg: CameraSpaceConfig = None,
                  options: FitOptions = None, forward=FORWARD_DEFAULT) -> FitResult:
    """Fit pose, per-landmark offsets, and camera to one set of 2D detections.

    Requires at least ``options.min_valid`` valid detections after index
    exclusion.  Raises :class:`UnderdeterminedError` when the problem has
    too few usable constraints and :class:`NumericalError` if the cost
    turns non-finite.
    """
    cfg = cfg if cfg is not None else CameraSpaceConfig()
    options = options or FitOptions()

    n = template.n_points
    if detections.n_points != n:
        raise ValidationError("detections and template must share the landmark count")
    if normal_template.n_points != n:
        raise ValidationError("normal template must share the landmark count")

    valid_det = detections.valid.copy()
    for idx in resolve_excluded_indices(options.excluded_indices, n):
        valid_det[idx] = False
    if valid_det.sum() < options.min_valid:
        raise UnderdeterminedError(
            f"need >= {options.min_valid} valid detections, got {int(valid_det.sum())}")

    det_pts = np.where(valid_det[:, None], detections.points, 0.0)
    forward = np.asarray(forward, dtype=float)
    problem = _FitProblem(template.points.copy(), valid_det, det_pts,
                          normal_template.normals, normal_template.thresholds,
                          forward, cfg, options.lambda_offsets)

    starts = _grid_initialization(problem.template, valid_det, det_pts, problem.normals,
                                  problem.thresholds, forward, cfg)[: max(1, options.n_starts)]

    best = None
    total_iters = 0
    all_steps = []
    for R0, delta_t0 in starts:
        pose0 = np.concatenate([matrix_to_rot6d(R0), delta_t0])
        cost, pose, offsets, step_costs, iters, converged = _descend(pose0, problem, options)
        total_iters += iters
        all_steps.extend(step_costs)
        if best is None or cost < best[0]:
            best = (cost, pose, offsets, converged)

    cost, pose, offsets, converged = best
    if not np.isfinite(cost):
        raise NumericalError(f"fit diverged (cost={cost}); accepted steps: {len(all_steps)}")

    rot6d, delta_t = pose[:6], pose[6:]
    params = HeadParams(offsets=offsets, rot6d=rot6d.copy(), delta_t=delta_t.copy(),
                        chol=np.zeros((n, 3)))
    camera = predict_camera(rot6d, delta_t, cfg)
    fitted = LandmarkSet3D(problem.template + offsets, np.ones(n, dtype=bool))
    return FitResult(params=params, landmarks3d=fitted, camera=camera, final_cost=cost,
                     iterations=total_iters, step_costs=np.asarray(all_steps), converged=converged)
