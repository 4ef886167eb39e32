"""Perspective camera model on a sphere, rotation encodings, and camera sampling.

Conventions
-----------
* World frame is right-handed and coincides with the frontal camera frame:
  +x right, +y down in the image, +z pointing from the camera toward the
  look-at point.  The frontal camera (``alpha = beta = gamma = 0``,
  ``delta_t = 0``) therefore sits at ``lookat - (0, 0, radius)`` with
  identity rotation and translation ``(0, 0, radius)``.
* Extrinsics map world to camera: ``x_cam = R @ x_world + t``.
* ``alpha`` (azimuth) swings the camera around the vertical axis toward +x
  for positive values, ``beta`` (elevation) lifts it toward -y, ``gamma``
  (roll) spins it about the optical axis.  Roll is applied after the
  look-at rotation: ``R = R_roll(gamma) @ R_lookat(alpha, beta)``.
* Angles are degrees at every API surface and radians internally.
* Projection follows the pinhole model ``[u, v, w] = K (R p + t)`` with the
  pixel position ``[u, v] / w``; ``w`` is the projective depth and must be
  positive for points in front of the camera.

All functions are pure; the only stateful object is the caller's random
generator handed to :func:`sample_camera`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    BoundsError,
    DegenerateRotationError,
    InsufficientPointsError,
    SamplingExhaustedError,
    SchemaError,
    ValidationError,
)
from .landmarks import LandmarkSet2D, LandmarkSet3D
from .validation import as_vector, check_finite, check_rotation

DEPTH_EPSILON = 1e-8

_LOOKAT_SINGULARITY = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for a square image of side ``image_dim`` pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    image_dim: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.image_dim and 0 <= self.cy <= self.image_dim):
            raise ValidationError("principal point must lie inside [0, image_dim]^2")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "image_dim": self.image_dim}

    @classmethod
    def from_json(cls, obj: dict) -> "CameraIntrinsics":
        try:
            return cls(fx=float(obj["fx"]), fy=float(obj["fy"]), cx=float(obj["cx"]),
                       cy=float(obj["cy"]), image_dim=float(obj["image_dim"]))
        except KeyError as exc:
            raise SchemaError(f"intrinsics JSON missing field {exc}") from exc


class CameraExtrinsics:
    """World-to-camera rigid transform: ``x_cam = R @ x_world + t``."""

    __slots__ = ("R", "t")

    def __init__(self, R, t):
        R = np.asarray(R, dtype=float)
        if R.shape != (3, 3):
            raise ValidationError(f"R must be 3x3, got {R.shape}")
        check_finite(R, "R")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise DegenerateRotationError("extrinsic R must be a rotation matrix within 1e-9")
        self.R = R
        self.t = check_finite(as_vector(t, 3, "t"), "t")

    def to_json(self) -> dict:
        return {"R": [float(x) for x in self.R.reshape(-1)], "t": [float(x) for x in self.t]}

    @classmethod
    def from_json(cls, obj: dict) -> "CameraExtrinsics":
        try:
            return cls(np.asarray(obj["R"], dtype=float).reshape(3, 3), obj["t"])
        except KeyError as exc:
            raise SchemaError(f"extrinsics JSON missing field {exc}") from exc


@dataclass(frozen=True)
class Camera:
    """Intrinsics plus extrinsics; everything projection needs."""

    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics.matrix

    @property
    def R(self) -> np.ndarray:
        return self.extrinsics.R

    @property
    def t(self) -> np.ndarray:
        return self.extrinsics.t

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``C = -R^T t``."""
        return -self.extrinsics.R.T @ self.extrinsics.t

    def to_json(self) -> dict:
        return {"intrinsics": self.intrinsics.to_json(), **self.extrinsics.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "Camera":
        return cls(CameraIntrinsics.from_json(obj.get("intrinsics", obj)), CameraExtrinsics.from_json(obj))


@dataclass(frozen=True)
class SphereCameraPose:
    """Sphere camera coordinates: azimuth/elevation/roll in degrees plus a translation offset."""

    alpha: float
    beta: float
    gamma: float
    delta_t: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "delta_t", tuple(float(x) for x in as_vector(self.delta_t, 3, "delta_t")))

    def to_json(self) -> dict:
        return {"alpha_deg": self.alpha, "beta_deg": self.beta, "gamma_deg": self.gamma,
                "delta_t": list(self.delta_t)}

    @classmethod
    def from_json(cls, obj: dict) -> "SphereCameraPose":
        try:
            return cls(alpha=float(obj["alpha_deg"]), beta=float(obj["beta_deg"]),
                       gamma=float(obj["gamma_deg"]), delta_t=obj.get("delta_t", (0.0, 0.0, 0.0)))
        except KeyError as exc:
            raise SchemaError(f"pose JSON missing field {exc}") from exc


@dataclass(frozen=True)
class CameraSpaceConfig:
    """Bounds and geometry of the admissible camera space.

    ``A``, ``B``, ``Gamma`` bound azimuth, elevation, and roll in degrees;
    cameras live on a sphere of ``radius`` centered on ``lookat``.
    """

    A: float = 110.0
    B: float = 60.0
    Gamma: float = 90.0
    radius: float = 2.7
    lookat: tuple = (0.0, 0.0, 0.0)
    intrinsics: CameraIntrinsics = None

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0 and self.Gamma > 0):
            raise ValidationError("angle bounds A, B, Gamma must be positive")
        if not self.radius > 0:
            raise ValidationError("sphere radius must be positive")
        object.__setattr__(self, "lookat", tuple(float(x) for x in as_vector(self.lookat, 3, "lookat")))
        if self.intrinsics is None:
            object.__setattr__(self, "intrinsics", default_intrinsics())

    def contains(self, pose: SphereCameraPose) -> bool:
        return abs(pose.alpha) <= self.A and abs(pose.beta) <= self.B and abs(pose.gamma) <= self.Gamma

    def to_json(self) -> dict:
        intr = self.intrinsics
        return {"A": self.A, "B": self.B, "Gamma": self.Gamma, "radius": self.radius,
                "lookat": list(self.lookat), "fx": intr.fx, "fy": intr.fy,
                "cx": intr.cx, "cy": intr.cy, "image_dim": intr.image_dim}

    @classmethod
    def from_json(cls, obj: dict) -> "CameraSpaceConfig":
        try:
            intr = CameraIntrinsics(fx=float(obj["fx"]), fy=float(obj["fy"]), cx=float(obj["cx"]),
                                    cy=float(obj["cy"]), image_dim=float(obj["image_dim"]))
            return cls(A=float(obj["A"]), B=float(obj["B"]), Gamma=float(obj["Gamma"]),
                       radius=float(obj["radius"]), lookat=obj["lookat"], intrinsics=intr)
        except KeyError as exc:
            raise SchemaError(f"camera-space config JSON missing field {exc}") from exc


@dataclass(frozen=True)
class HomogeneousScreenPoint:
    """Scaled screen coordinates before the perspective divide."""

    u: float
    v: float
    w: float


@dataclass
class SamplerStats:
    """Proposal/acceptance counters accumulated by :func:`sample_camera`."""

    angle_proposals: int = 0
    angle_accepts: int = 0
    dt_proposals: int = 0
    dt_accepts: int = 0


def default_intrinsics(image_dim: float = 224.0, focal_scale: float = 4.26) -> CameraIntrinsics:
    """Square-pixel intrinsics with the focal length tied to the image size."""
    return CameraIntrinsics(fx=focal_scale * image_dim, fy=focal_scale * image_dim,
                            cx=image_dim / 2.0, cy=image_dim / 2.0, image_dim=image_dim)


def sphere_direction(alpha_deg: float, beta_deg: float) -> np.ndarray:
    """Unit vector from the look-at point toward the camera center."""
    a = math.radians(alpha_deg)
    b = math.radians(beta_deg)
    return np.array([math.sin(a) * math.cos(b), -math.sin(b), -math.cos(a) * math.cos(b)])


def look_at_rotation(alpha_deg: float, beta_deg: float) -> np.ndarray:
    """World-to-camera rotation of a sphere camera aimed at the look-at point."""
    d = sphere_direction(alpha_deg, beta_deg)
    forward = -d  # camera +z, from center toward lookat
    # right = world-down x forward, with world down = (0, 1, 0)
    right = np.array([forward[2], 0.0, -forward[0]])
    norm = math.hypot(right[0], right[2])
    if norm < _LOOKAT_SINGULARITY:
        raise DegenerateRotationError("camera looks along the vertical axis; look-at frame undefined")
    right /= norm
    cam_down = np.array([forward[1] * right[2] - forward[2] * right[1],
                         forward[2] * right[0] - forward[0] * right[2],
                         forward[0] * right[1] - forward[1] * right[0]])
    return np.stack([right, cam_down, forward])


def roll_matrix(gamma_deg: float) -> np.ndarray:
    """In-plane rotation about the optical axis."""
    g = math.radians(gamma_deg)
    c, s = math.cos(g), math.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sphere_translation(R, cfg: CameraSpaceConfig) -> np.ndarray:
    """Translation placing a camera with rotation ``R`` on the config sphere.

    The camera center is put at distance ``radius`` from ``lookat`` along the
    negative optical axis, which gives ``t = -R @ lookat + (0, 0, radius)``;
    for a look-at point at the origin this is ``(0, 0, radius)`` for every R.
    """
    R = check_rotation(R, "R")
    t = -R @ np.asarray(cfg.lookat)
    t[2] += cfg.radius
    return t


def camera_from_pose(pose: SphereCameraPose, cfg: CameraSpaceConfig) -> Camera:
    """Build the camera for sphere coordinates ``pose`` within ``cfg``.

    Raises :class:`BoundsError` if any angle exceeds the configured bounds.
    """
    if not cfg.contains(pose):
        raise BoundsError(
            f"pose angles ({pose.alpha}, {pose.beta}, {pose.gamma}) exceed bounds "
            f"(A={cfg.A}, B={cfg.B}, Gamma={cfg.Gamma})")
    R = roll_matrix(pose.gamma) @ look_at_rotation(pose.alpha, pose.beta)
    t = sphere_translation(R, cfg) + np.asarray(pose.delta_t)
    return Camera(cfg.intrinsics, CameraExtrinsics(R, t))


def project_homogeneous(p, cam: Camera) -> HomogeneousScreenPoint:
    """Scaled screen coordinates ``K (R p + t)`` without the divide."""
    p = check_finite(as_vector(p, 3, "p"), "p")
    q = cam.R @ p + cam.t
    return HomogeneousScreenPoint(u=cam.intrinsics.fx * q[0] + cam.intrinsics.cx * q[2],
                                  v=cam.intrinsics.fy * q[1] + cam.intrinsics.cy * q[2],
                                  w=q[2])


def project(p, cam: Camera, eps_depth: float = DEPTH_EPSILON) -> np.ndarray:
    """Perspective-project a world point to pixels.

    Raises :class:`BehindCameraError` when the projective depth is at or
    below ``eps_depth``.
    """
    h = project_homogeneous(p, cam)
    if h.w <= eps_depth:
        raise BehindCameraError(f"point has projective depth {h.w:.3g} <= {eps_depth:.3g}")
    return np.array([h.u / h.w, h.v / h.w])


def project_array(points: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of an (N, 3) array.

    Returns pixel coordinates (N, 2) and projective depths (N,); no depth
    check is applied, callers interpret non-positive depths themselves.
    """
    q = points @ cam.R.T + cam.t
    w = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([cam.intrinsics.fx * q[:, 0] / w + cam.intrinsics.cx,
                       cam.intrinsics.fy * q[:, 1] / w + cam.intrinsics.cy], axis=1)
    return uv, w


def projection_jacobian(points: np.ndarray, cam: Camera) -> np.ndarray:
    """Jacobian of the pixel projection w.r.t. each world point, shape (N, 2, 3)."""
    q = points @ cam.R.T + cam.t
    x, y, w = q[:, 0], q[:, 1], q[:, 2]
    fx, fy = cam.intrinsics.fx, cam.intrinsics.fy
    n = points.shape[0]
    d_uv_dq = np.zeros((n, 2, 3))
    d_uv_dq[:, 0, 0] = fx / w
    d_uv_dq[:, 0, 2] = -fx * x / w**2
    d_uv_dq[:, 1, 1] = fy / w
    d_uv_dq[:, 1, 2] = -fy * y / w**2
    return d_uv_dq @ cam.R


def project_set(landmarks: LandmarkSet3D, cam: Camera, eps_depth: float = DEPTH_EPSILON) -> LandmarkSet2D:
    """Project a landmark set; behind-camera points become invalid, not errors."""
    if landmarks.n_points == 0:
        return LandmarkSet2D(np.zeros((0, 2)), np.zeros(0, dtype=bool))
    uv, w = project_array(landmarks.points, cam)
    valid = landmarks.valid & (w > eps_depth) & np.all(np.isfinite(uv) | ~landmarks.valid[:, None], axis=1)
    uv = uv.copy()
    uv[~valid] = np.nan
    return LandmarkSet2D(uv, valid)


def rot6d_to_matrix(r) -> np.ndarray:
    """Decode a 6D rotation encoding into a rotation matrix.

    The six values are read as two 3-vectors; Gram-Schmidt gives the first
    two columns and their cross product the third.  Zero or parallel input
    vectors raise :class:`DegenerateRotationError`.
    """
    r = check_finite(as_vector(r, 6, "rot6d"), "rot6d")
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-12:
        raise DegenerateRotationError("first 6D rotation vector is zero")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    if n2 < 1e-12 * max(1.0, np.linalg.norm(a2)) or np.linalg.norm(a2) < 1e-12:
        raise DegenerateRotationError("6D rotation vectors are parallel or zero")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R) -> np.ndarray:
    """Encode a rotation matrix as its first two columns (inverse of :func:`rot6d_to_matrix`)."""
    R = check_rotation(R, "R")
    return R[:, :2].T.reshape(6).copy()


def bbox_valid(landmarks: LandmarkSet2D, image_dim: float) -> bool:
    """Containment-and-size rule for a projected landmark bounding box.

    True iff the axis-aligned box of the valid points lies inside
    ``[0, image_dim]^2`` and its smaller side exceeds ``image_dim / 2``.
    """
    pts = landmarks.valid_points()
    if pts.shape[0] < 2:
        raise InsufficientPointsError(f"bbox check needs >= 2 valid points, got {pts.shape[0]}")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    if lo[0] < 0 or lo[1] < 0 or hi[0] > image_dim or hi[1] > image_dim:
        return False
    w, h = hi - lo
    return min(h, w) > image_dim / 2.0


def angle_acceptance_probability(alpha_deg: float, beta_deg: float, gamma_deg: float,
                                 cfg: CameraSpaceConfig) -> float:
    """Soft pose-balancing acceptance probability for sampled rotations.

    ``exp(-((alpha/A)^2 + (beta/B)^2 + (gamma/Gamma)^2))``: 1 at the frontal
    pose and ``exp(-3)`` at the corners of the bound box.
    """
    return math.exp(-((alpha_deg / cfg.A) ** 2 + (beta_deg / cfg.B) ** 2 + (gamma_deg / cfg.Gamma) ** 2))


def _accept_angles(rng: np.random.Generator, alpha: float, beta: float, gamma: float,
                   cfg: CameraSpaceConfig) -> bool:
    return rng.uniform() < angle_acceptance_probability(alpha, beta, gamma, cfg)


def sample_camera(rng: np.random.Generator, cfg: CameraSpaceConfig, template: LandmarkSet3D,
                  dt_half_extent: float = None, max_attempts: int = 10_000,
                  stats: SamplerStats = None) -> SphereCameraPose:
    """Draw one admissible camera pose.

    Angles are drawn uniformly inside the bounds and thinned by
    :func:`angle_acceptance_probability`; the translation offset is then
    drawn uniformly from a box of half-extent ``dt_half_extent`` (default
    ``0.3 * radius``) per axis until the projected template bounding box
    satisfies :func:`bbox_valid`.  Deterministic for a given ``rng`` state.

    Raises :class:`SamplingExhaustedError` after ``max_attempts`` combined
    proposals.
    """
    if template.n_valid < 2:
        raise InsufficientPointsError("camera sampling needs a template with >= 2 valid points")
    if dt_half_extent is None:
        dt_half_extent = 0.3 * cfg.radius
    attempts = 0

    while True:
        alpha = rng.uniform(-cfg.A, cfg.A)
        beta = rng.uniform(-cfg.B, cfg.B)
        gamma = rng.uniform(-cfg.Gamma, cfg.Gamma)
        attempts += 1
        if stats is not None:
            stats.angle_proposals += 1
        if _accept_angles(rng, alpha, beta, gamma, cfg):
            if stats is not None:
                stats.angle_accepts += 1
            break
        if attempts >= max_attempts:
            raise SamplingExhaustedError(f"no accepted rotation after {attempts} proposals")

    base_rotation = roll_matrix(gamma) @ look_at_rotation(alpha, beta)
    base_t = -base_rotation @ np.asarray(cfg.lookat)  # sphere_translation, R known valid
    base_t[2] += cfg.radius
    pts = template.points[template.valid]
    intr = cfg.intrinsics
    q_base = pts @ base_rotation.T + base_t

    # Offsets are proposed in batches and evaluated vectorized; the first
    # admissible one in draw order is taken, matching one-at-a-time
    # semantics (inline project_set + bbox_valid on the valid points).
    # Batches grow geometrically so easy (near-frontal) poses stay cheap.
    batch = 8
    while True:
        remaining = max_attempts - attempts
        if remaining <= 0:
            raise SamplingExhaustedError(f"no admissible translation offset after {attempts} proposals")
        size = min(batch, remaining)
        batch = min(batch * 4, 1024)
        offsets = rng.uniform(-dt_half_extent, dt_half_extent, size=(size, 3))
        q = q_base[None, :, :] + offsets[:, None, :]
        w = q[:, :, 2]
        if np.all(w > DEPTH_EPSILON):
            u = intr.fx * q[:, :, 0] / w + intr.cx
            v = intr.fy * q[:, :, 1] / w + intr.cy
            span_u = u.max(axis=1) - u.min(axis=1)
            span_v = v.max(axis=1) - v.min(axis=1)
            ok = ((u.min(axis=1) >= 0) & (v.min(axis=1) >= 0)
                  & (u.max(axis=1) <= intr.image_dim) & (v.max(axis=1) <= intr.image_dim)
                  & (np.minimum(span_u, span_v) > intr.image_dim / 2.0))
        else:
            ok = np.zeros(size, dtype=bool)
            for i in range(size):
                front = w[i] > DEPTH_EPSILON
                if front.sum() < 2:
                    continue
                qf = q[i, front]
                u = intr.fx * qf[:, 0] / qf[:, 2] + intr.cx
                v = intr.fy * qf[:, 1] / qf[:, 2] + intr.cy
                ok[i] = (u.min() >= 0 and v.min() >= 0 and u.max() <= intr.image_dim
                         and v.max() <= intr.image_dim
                         and min(u.max() - u.min(), v.max() - v.min()) > intr.image_dim / 2.0)
        hits = np.nonzero(ok)[0]
        if hits.size:
            first = int(hits[0])
            attempts += first + 1
            if stats is not None:
                stats.dt_proposals += first + 1
                stats.dt_accepts += 1
            return SphereCameraPose(alpha=alpha, beta=beta, gamma=gamma, delta_t=tuple(offsets[first]))
        attempts += size
        if stats is not None:
            stats.dt_proposals += size
