"""Masked multi-view lifting of 2D landmark detections to 3D.

Given per-view detections, known cameras, and per-view visibility masks,
each landmark is recovered independently by minimizing its masked squared
reprojection error over all views (the joint cost has no cross-landmark
terms, so the per-landmark decomposition is exact).  Landmarks observed in
fewer than two views are flagged invalid and skipped rather than erroring.

The solver is Levenberg-Marquardt with analytic Jacobians, initialized by
two-view linear triangulation from the most frontal visible views.  The
damping loop only ever accepts cost-decreasing steps, so the per-landmark
cost sequence is non-increasing by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, EmptyResultError, ValidationError
from .geometry import DEPTH_EPSILON, Camera
from .landmarks import LandmarkSet2D, LandmarkSet3D
from .synthgen import PUPIL_INDICES_98
from .validation import as_points, as_vector, check_finite

logger = logging.getLogger(__name__)

_TRIANGULATION_CONDITION_LIMIT = 1e8


@dataclass
class ViewObservation:
    """One view: camera, detected landmarks, and a visibility mask."""

    camera: Camera
    detections: LandmarkSet2D
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.shape != (self.detections.n_points,):
            raise ValidationError("mask length must match the detection count")


@dataclass
class MultiViewObservations:
    """All views of one scene; every view must share the landmark count."""

    views: list

    def __post_init__(self):
        if len(self.views) < 1:
            raise ValidationError("need at least one view")
        n = self.views[0].detections.n_points
        if any(v.detections.n_points != n for v in self.views):
            raise ValidationError("all views must share the landmark count")

    @property
    def n_points(self) -> int:
        return self.views[0].detections.n_points

    @property
    def n_views(self) -> int:
        return len(self.views)


def observations_from_scene(scene) -> MultiViewObservations:
    """Bundle a synthetic scene's cameras, detections, and masks."""
    views = [ViewObservation(camera=c, detections=d, mask=m)
             for c, d, m in zip(scene.cameras, scene.detections, scene.masks)]
    return MultiViewObservations(views=views)


@dataclass
class LiftOptions:
    """Solver knobs for :func:`lift_multiview`.

    ``excluded_indices="auto"`` drops the two pupil landmarks of the
    98-point scheme (their detections follow the camera rather than the
    head); pass an explicit tuple to override, or ``()`` to keep everything.
    ``robust_kernel`` enables Huber reweighting of residuals (off by
    default; plain squared loss relies on multi-view averaging).
    """

    max_iter: int = 100
    tol: float = 1e-10
    damping_init: float = 1e-3
    damping_factor: float = 10.0
    damping_max: float = 1e12
    excluded_indices: object = "auto"
    robust_kernel: bool = False
    huber_delta: float = 1.0


def resolve_excluded_indices(excluded, n_points: int) -> tuple:
    if isinstance(excluded, str):
        if excluded != "auto":
            raise ValidationError(f"unknown excluded_indices spec {excluded!r}")
        return PUPIL_INDICES_98 if n_points == 98 else ()
    idx = tuple(int(i) for i in excluded)
    if any(i < 0 or i >= n_points for i in idx):
        raise ValidationError(f"excluded indices out of range for N={n_points}")
    return idx


@dataclass
class LiftResult:
    """Lifted landmarks with per-landmark diagnostics.

    ``per_landmark_rms`` is the pixel-space RMS reprojection distance over
    the views that observed the landmark (NaN where invalid).
    """

    landmarks3d: LandmarkSet3D
    valid: np.ndarray
    per_landmark_rms: np.ndarray
    iterations: int
    final_cost: float

    def to_json(self) -> dict:
        return {
            "landmarks3d": self.landmarks3d.to_json(),
            "valid": [bool(b) for b in self.valid],
            "per_landmark_rms": [None if not np.isfinite(r) else float(r) for r in self.per_landmark_rms],
            "iterations": int(self.iterations),
            "final_cost": float(self.final_cost),
        }


def triangulate_pair(cam_a: Camera, point_a, cam_b: Camera, point_b) -> np.ndarray:
    """Linear two-view triangulation minimizing the algebraic reprojection error.

    Raises :class:`DegenerateGeometryError` for near-parallel rays
    (condition ratio of the homogeneous system above 1e8), which covers
    identical cameras.
    """
    point_a = as_vector(point_a, 2, "point_a")
    point_b = as_vector(point_b, 2, "point_b")
    rows = []
    for cam, uv in ((cam_a, point_a), (cam_b, point_b)):
        P = cam.K @ np.hstack([cam.R, cam.t[:, None]])
        rows.append(uv[0] * P[2] - P[0])
        rows.append(uv[1] * P[2] - P[1])
    A = np.stack(rows)
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    _, s, Vt = np.linalg.svd(A)
    # The solution direction always zeroes the last singular value; a second
    # vanishing one means the rays no longer intersect at a finite point.
    if s[2] <= s[0] / _TRIANGULATION_CONDITION_LIMIT:
        raise DegenerateGeometryError(f"triangulation ill-conditioned (s0/s2 = {s[0] / max(s[2], 1e-300):.3g})")
    X = Vt[-1]
    if abs(X[3]) < 1e-12 * np.linalg.norm(X[:3]):
        raise DegenerateGeometryError("triangulated point at infinity")
    return X[:3] / X[3]


@dataclass
class ReprojectionEval:
    """Cost, stacked residuals, and their Jacobian w.r.t. the 3D points.

    Residuals are ordered view-major, then landmark, then pixel axis;
    ``landmark_indices``/``view_indices`` map rows back to their slot.
    ``jacobian[k]`` is the derivative of residual ``k`` w.r.t. the 3D
    coordinates of its own landmark (all other landmarks have zero
    derivative).  ``clamped_slots`` lists (view, landmark) pairs whose
    active residual was dropped because the point fell behind the camera.
    """

    cost: float
    residuals: np.ndarray
    jacobian: np.ndarray
    landmark_indices: np.ndarray
    view_indices: np.ndarray
    clamped_slots: list


def reprojection_cost(landmarks3d, observations: MultiViewObservations) -> ReprojectionEval:
    """Masked squared reprojection error of ``landmarks3d`` across all views.

    ``cost = sum_views sum_n m_{view,n} || project(l_n) - detection ||^2``
    over slots where the mask is set and the detection is valid.
    """
    pts = check_finite(as_points(landmarks3d, 3, "landmarks3d"), "landmarks3d")
    if pts.shape[0] != observations.n_points:
        raise ValidationError("landmark count does not match the observations")

    residuals, jac_rows, lm_idx, view_idx, clamped = [], [], [], [], []
    for v, view in enumerate(observations.views):
        active = view.mask & view.detections.valid
        if not active.any():
            continue
        cam = view.camera
        idx = np.nonzero(active)[0]
        q = pts[idx] @ cam.R.T + cam.t
        front = q[:, 2] > DEPTH_EPSILON
        for n in idx[~front]:
            clamped.append((v, int(n)))
        if not front.any():
            continue
        idx = idx[front]
        q = q[front]
        fx, fy = cam.intrinsics.fx, cam.intrinsics.fy
        u = fx * q[:, 0] / q[:, 2] + cam.intrinsics.cx
        vpix = fy * q[:, 1] / q[:, 2] + cam.intrinsics.cy
        r = np.stack([u, vpix], axis=1) - view.detections.points[idx]

        d_uv_dq = np.zeros((idx.size, 2, 3))
        d_uv_dq[:, 0, 0] = fx / q[:, 2]
        d_uv_dq[:, 0, 2] = -fx * q[:, 0] / q[:, 2] ** 2
        d_uv_dq[:, 1, 1] = fy / q[:, 2]
        d_uv_dq[:, 1, 2] = -fy * q[:, 1] / q[:, 2] ** 2
        J = d_uv_dq @ cam.R

        residuals.append(r.reshape(-1))
        jac_rows.append(J.reshape(-1, 3))
        lm_idx.append(np.repeat(idx, 2))
        view_idx.append(np.full(idx.size * 2, v))

    if clamped:
        logger.warning("reprojection_cost: %d masked-visible slots behind the camera were clamped out",
                       len(clamped))
    if residuals:
        residuals = np.concatenate(residuals)
        jacobian = np.concatenate(jac_rows)
        lm_idx = np.concatenate(lm_idx)
        view_idx = np.concatenate(view_idx)
    else:
        residuals = np.zeros(0)
        jacobian = np.zeros((0, 3))
        lm_idx = np.zeros(0, dtype=int)
        view_idx = np.zeros(0, dtype=int)
    return ReprojectionEval(cost=float(residuals @ residuals), residuals=residuals, jacobian=jacobian,
                            landmark_indices=lm_idx, view_indices=view_idx, clamped_slots=clamped)


def _view_frontality(cam: Camera) -> float:
    """Alignment of the toward-camera direction with the frontal forward axis."""
    return float(cam.R[2, 2])


def _initial_points(observations, active, liftable):
    """Triangulated starting points from the two most frontal visible views per landmark."""
    n = observations.n_points
    order = np.argsort([-_view_frontality(v.camera) for v in observations.views], kind="stable")
    init = np.zeros((n, 3))
    ok = liftable.copy()
    for lm in np.nonzero(liftable)[0]:
        views = [v for v in order if active[v, lm]]
        point = None
        for i in range(len(views)):
            for j in range(i + 1, len(views)):
                va, vb = observations.views[views[i]], observations.views[views[j]]
                try:
                    point = triangulate_pair(va.camera, va.detections.points[lm],
                                             vb.camera, vb.detections.points[lm])
                    break
                except DegenerateGeometryError:
                    continue
            if point is not None:
                break
        if point is None:
            ok[lm] = False
        else:
            init[lm] = point
    return init, ok


def _per_landmark_cost(pts, observations, active, robust, delta):
    """Masked squared reprojection cost per landmark, plus active view counts."""
    n = observations.n_points
    cost = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    for v, view in enumerate(observations.views):
        act = active[v]
        if not act.any():
            continue
        cam = view.camera
        q = pts[act] @ cam.R.T + cam.t
        w = np.maximum(q[:, 2], DEPTH_EPSILON)
        behind = q[:, 2] <= DEPTH_EPSILON
        u = cam.intrinsics.fx * q[:, 0] / w + cam.intrinsics.cx
        vv = cam.intrinsics.fy * q[:, 1] / w + cam.intrinsics.cy
        r = np.stack([u, vv], axis=1) - view.detections.points[act]
        sq = np.einsum("ij,ij->i", r, r)
        sq[behind] = 0.0  # clamped out
        if robust:
            dist = np.sqrt(sq)
            wgt = np.ones_like(dist)
            big = dist > delta
            wgt[big] = delta / dist[big]
            sq = wgt * sq
        cost[act] += sq
        counts[act] += 1
    return cost, counts


def lift_multiview(observations: MultiViewObservations, options: LiftOptions = None) -> LiftResult:
    """Recover 3D landmarks from masked multi-view 2D detections.

    Each landmark needs a masked, valid detection in at least two views;
    others come back with ``valid = False``.  Raises
    :class:`EmptyResultError` when nothing is liftable.
    """
    options = options or LiftOptions()
    n = observations.n_points
    n_views = observations.n_views

    active = np.zeros((n_views, n), dtype=bool)
    for v, view in enumerate(observations.views):
        active[v] = view.mask & view.detections.valid
    for idx in resolve_excluded_indices(options.excluded_indices, n):
        active[:, idx] = False

    liftable = active.sum(axis=0) >= 2
    if not liftable.any():
        raise EmptyResultError("no landmark is visible with a valid detection in >= 2 views")

    pts, liftable = _initial_points(observations, active, liftable)
    if not liftable.any():
        raise EmptyResultError("triangulation failed for every liftable landmark")
    active = active & liftable[None, :]

    # Batched per-landmark Levenberg-Marquardt: every landmark carries its
    # own damping and convergence state; a step is only applied where it
    # does not increase that landmark's cost.
    robust, delta = options.robust_kernel, options.huber_delta
    cost, counts = _per_landmark_cost(pts, observations, active, robust, delta)
    lam = np.full(n, options.damping_init)
    open_lm = liftable.copy()
    iterations = 0

    for iterations in range(1, options.max_iter + 1):
        if not open_lm.any():
            iterations -= 1
            break
        JtJ, Jtr = _normal_equations(pts, observations, active & open_lm[None, :], robust, delta)

        A = JtJ + lam[:, None, None] * np.eye(3)[None]
        delta_pts = np.zeros((n, 3))
        idx = np.nonzero(open_lm)[0]
        try:
            delta_pts[idx] = np.linalg.solve(A[idx], -Jtr[idx, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            for i in idx:
                delta_pts[i] = np.linalg.lstsq(A[i], -Jtr[i], rcond=None)[0]

        trial = pts + delta_pts
        trial_cost, _ = _per_landmark_cost(trial, observations, active, robust, delta)

        improved = open_lm & (trial_cost <= cost)
        rejected = open_lm & ~improved

        rel_drop = np.zeros(n)
        nz = improved & (cost > 0)
        rel_drop[nz] = (cost[nz] - trial_cost[nz]) / cost[nz]
        converged = improved & ((cost <= 0) | (rel_drop < options.tol))

        pts[improved] = trial[improved]
        cost[improved] = trial_cost[improved]
        lam[improved] = np.maximum(lam[improved] / options.damping_factor, 1e-12)
        lam[rejected] *= options.damping_factor
        stalled = rejected & (lam > options.damping_max)
        open_lm = open_lm & ~converged & ~stalled

    per_rms = np.full(n, np.nan)
    per_rms[liftable] = np.sqrt(cost[liftable] / np.maximum(counts[liftable], 1))
    out_pts = np.full((n, 3), np.nan)
    out_pts[liftable] = pts[liftable]
    return LiftResult(landmarks3d=LandmarkSet3D(out_pts, liftable.copy()), valid=liftable,
                      per_landmark_rms=per_rms, iterations=iterations,
                      final_cost=float(cost[liftable].sum()))


def _normal_equations(pts, observations, active, robust, delta):
    """Per-landmark J^T J and J^T r accumulated over views (clamped slots excluded)."""
    n = observations.n_points
    JtJ = np.zeros((n, 3, 3))
    Jtr = np.zeros((n, 3))
    for v, view in enumerate(observations.views):
        act = active[v]
        if not act.any():
            continue
        cam = view.camera
        idx = np.nonzero(act)[0]
        q = pts[idx] @ cam.R.T + cam.t
        front = q[:, 2] > DEPTH_EPSILON
        idx, q = idx[front], q[front]
        if idx.size == 0:
            continue
        fx, fy = cam.intrinsics.fx, cam.intrinsics.fy
        u = fx * q[:, 0] / q[:, 2] + cam.intrinsics.cx
        vv = fy * q[:, 1] / q[:, 2] + cam.intrinsics.cy
        r = np.stack([u, vv], axis=1) - view.detections.points[idx]
        d_uv_dq = np.zeros((idx.size, 2, 3))
        d_uv_dq[:, 0, 0] = fx / q[:, 2]
        d_uv_dq[:, 0, 2] = -fx * q[:, 0] / q[:, 2] ** 2
        d_uv_dq[:, 1, 1] = fy / q[:, 2]
        d_uv_dq[:, 1, 2] = -fy * q[:, 1] / q[:, 2] ** 2
        J = d_uv_dq @ cam.R
        if robust:
            dist = np.linalg.norm(r, axis=1)
            wgt = np.ones_like(dist)
            big = dist > delta
            wgt[big] = delta / dist[big]
            r = r * wgt[:, None]
            J = J * wgt[:, None, None]
        JtJ[idx] += np.einsum("nki,nkj->nij", J, J)
        Jtr[idx] += np.einsum("nki,nk->ni", J, r)
    return JtJ, Jtr


def template_from_pseudolabels(sets: list[LandmarkSet3D]) -> LandmarkSet3D:
    """Landmark-wise mean over the sets where each landmark is valid.

    Raises :class:`flk.errors.CoverageError` listing any landmark valid in
    no set at all.
    """
    from .errors import CoverageError

    if not sets:
        raise ValidationError("need at least one landmark set")
    n = sets[0].n_points
    if any(s.n_points != n for s in sets):
        raise ValidationError("all landmark sets must share N")
    total = np.zeros((n, 3))
    counts = np.zeros(n)
    for s in sets:
        total[s.valid] += s.points[s.valid]
        counts[s.valid] += 1
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise CoverageError(f"landmarks {missing.tolist()} are valid in no set", indices=missing.tolist())
    return LandmarkSet3D(total / counts[:, None], np.ones(n, dtype=bool))
