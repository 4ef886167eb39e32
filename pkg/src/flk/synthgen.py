"""Synthetic scene generation with known ground truth.

Stands in for a photorealistic multi-view source: deterministic face-like
3D landmark layouts, a fixed camera rig, rendered 2D detections with
configurable noise and dropout, and per-view visibility masks.  Every scene
is reproducible from its integer seed.

The 98-point scheme mirrors the common 2D detector layout: face contour
(0-32), brows (33-41 left, 42-50 right), nose bridge (51-54), nose bottom
(55-59), eyes (60-67 left, 68-75 right), outer lips (76-87), inner lips
(88-95), pupils (96, 97).  Landmarks sit on an ellipsoidal head shell with
group-specific protrusions (nose, lips) and recessions (eyes); normals come
from the shell gradient blended toward the viewing direction so that
frontal landmarks clear the 0.5 visibility threshold at the frontal pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import SchemaError, ValidationError
from .geometry import (
    DEPTH_EPSILON,
    Camera,
    CameraSpaceConfig,
    SphereCameraPose,
    camera_from_pose,
    project_array,
)
from .landmarks import LandmarkSet2D, LandmarkSet3D
from .masking import NOSE_BRIDGE_THRESHOLD, NormalTemplate, rig_masks

# Head shell semi-axes (world units).  Sized so that the projected face
# under the default intrinsics spans 112..224 px over the admissible
# camera space: frontal extent ~0.42 in x/y, depth extent ~0.30 in z.
SHELL_AX = 0.21
SHELL_AY = 0.26
SHELL_AZ = 0.16

NOSE_BRIDGE_INDICES_98 = (51, 52, 53, 54)
PUPIL_INDICES_98 = (96, 97)

_FORWARD_BLEND = 0.5
_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _shell_z(x, y):
    """Front-surface depth of the head ellipsoid at lateral position (x, y)."""
    s = 1.0 - (np.asarray(x) / SHELL_AX) ** 2 - (np.asarray(y) / SHELL_AY) ** 2
    return -SHELL_AZ * np.sqrt(np.maximum(s, 0.0))


def _base_layout_98() -> np.ndarray:
    pts = np.zeros((98, 3))

    # Face contour: ear level on both sides, wrapping under the chin.
    psi = np.linspace(0.0, np.pi, 33)
    pts[0:33, 0] = SHELL_AX * np.cos(psi)
    pts[0:33, 1] = SHELL_AY * np.sin(psi)
    pts[0:33, 2] = 0.10 - 0.15 * np.sin(psi)

    # Left brow; the right brow is its exact mirror.
    t = np.linspace(0.0, 1.0, 9)
    bx = np.linspace(-0.165, -0.045, 9)
    by = -0.135 - 0.025 * np.sin(np.pi * t)
    pts[33:42] = np.stack([bx, by, _shell_z(bx, by) - 0.004], axis=1)
    pts[42:51] = pts[33:42] * np.array([-1.0, 1.0, 1.0])

    # Nose bridge down the midline, protruding toward the tip.
    ny = np.linspace(-0.075, 0.015, 4)
    pts[51:55, 1] = ny
    pts[51:55, 2] = _shell_z(0.0, ny) - np.array([0.005, 0.015, 0.025, 0.035])

    # Nose bottom.
    nx = np.linspace(-0.045, 0.045, 5)
    pts[55:60, 0] = nx
    pts[55:60, 1] = 0.045
    pts[55:60, 2] = _shell_z(nx, 0.045) - 0.015

    # Left eye ring plus mirrored right eye; both slightly recessed.
    theta = np.arange(8) * (2.0 * np.pi / 8.0)
    ex = -0.085 + 0.032 * np.cos(theta)
    ey = -0.075 + 0.016 * np.sin(theta)
    pts[60:68] = np.stack([ex, ey, _shell_z(ex, ey) + 0.004], axis=1)
    pts[68:76] = pts[60:68] * np.array([-1.0, 1.0, 1.0])

    # Outer lips: corners, upper arc left-to-right, lower arc right-to-left.
    cy, rx, ry = 0.140, 0.052, 0.026
    fracs = np.array([-0.66, -0.33, 0.0, 0.33, 0.66])
    lx = np.concatenate([[-rx], fracs * rx, [rx], fracs[::-1] * rx])
    ly = cy + np.concatenate([[0.0], -ry * np.sqrt(1 - fracs**2), [0.0], ry * np.sqrt(1 - fracs[::-1] ** 2)])
    pts[76:88] = np.stack([lx, ly, _shell_z(lx, ly) - 0.008], axis=1)

    # Inner lips, same traversal with a tighter ellipse.
    rx, ry = 0.030, 0.012
    fracs = np.array([-0.5, 0.0, 0.5])
    lx = np.concatenate([[-rx], fracs * rx, [rx], fracs[::-1] * rx])
    ly = cy + np.concatenate([[0.0], -ry * np.sqrt(1 - fracs**2), [0.0], ry * np.sqrt(1 - fracs[::-1] ** 2)])
    pts[88:96] = np.stack([lx, ly, _shell_z(lx, ly) - 0.005], axis=1)

    # Pupils at the eye centers, recessed behind the lid ring.
    pts[96] = (-0.085, -0.075, _shell_z(-0.085, -0.075) + 0.006)
    pts[97] = (0.085, -0.075, _shell_z(0.085, -0.075) + 0.006)
    return pts


def _normals_from_points(pts: np.ndarray) -> np.ndarray:
    """Ellipsoid-gradient normals blended toward the frontal view direction."""
    grad = pts / np.array([SHELL_AX**2, SHELL_AY**2, SHELL_AZ**2])
    norms = np.linalg.norm(grad, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    n = grad / norms
    n[:, 2] -= _FORWARD_BLEND
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def mirror_permutation_98() -> np.ndarray:
    """Index permutation pairing each landmark with its bilateral mirror."""
    perm = np.arange(98)
    perm[0:33] = np.arange(32, -1, -1)
    perm[33:42], perm[42:51] = np.arange(42, 51), np.arange(33, 42)
    perm[55:60] = np.arange(59, 54, -1)
    perm[60:68], perm[68:76] = np.arange(68, 76), np.arange(60, 68)
    for a, b in ((76, 82), (77, 81), (78, 80), (83, 87), (84, 86),
                 (88, 92), (89, 91), (93, 95), (96, 97)):
        perm[a], perm[b] = b, a
    return perm


def _generic_layout(n_points: int) -> np.ndarray:
    """Golden-spiral spread over the front shell for non-standard point counts."""
    k = np.arange(n_points)
    rad = 0.9 * np.sqrt((k + 0.5) / n_points)
    ang = k * _GOLDEN_ANGLE
    x = SHELL_AX * rad * np.cos(ang)
    y = SHELL_AY * rad * np.sin(ang)
    return np.stack([x, y, _shell_z(x, y)], axis=1)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def make_face_layout(rng, n_points: int = 98, jitter: float = 0.01):
    """Deterministic face-like 3D landmark layout plus its normal template.

    ``rng`` may be a seed or a generator; the same state always yields the
    same layout.  ``jitter`` perturbs positions per seed to vary identity;
    normals and thresholds come from the unjittered base so the template is
    stable across identities.  Returns ``(LandmarkSet3D, NormalTemplate)``.
    """
    if n_points < 6:
        raise ValidationError(f"layout needs >= 6 points, got {n_points}")
    if jitter < 0:
        raise ValidationError("jitter must be non-negative")
    rng = _as_rng(rng)
    base = _base_layout_98() if n_points == 98 else _generic_layout(n_points)
    bridge = NOSE_BRIDGE_INDICES_98 if n_points == 98 else ()
    template = NormalTemplate(normals=_normals_from_points(base), nose_bridge_indices=bridge)
    pts = base + rng.normal(0.0, jitter, size=base.shape) if jitter > 0 else base.copy()
    return LandmarkSet3D(pts, np.ones(n_points, dtype=bool)), template


def make_default_rig() -> list[SphereCameraPose]:
    """The fixed 41-view rig: an azimuth/elevation grid spanning the default bounds.

    Five elevation rows (+-60, +-30, 0) with 7/9/9/9/7 azimuth stops over
    [-110, 110]; includes the frontal view and is mirror-symmetric in
    azimuth.  Roll and translation offsets are zero.
    """
    rows = [(-60.0, 7), (-30.0, 9), (0.0, 9), (30.0, 9), (60.0, 7)]
    poses = []
    for beta, n_alpha in rows:
        for alpha in np.linspace(-110.0, 110.0, n_alpha):
            poses.append(SphereCameraPose(alpha=float(alpha), beta=beta, gamma=0.0))
    return poses


def load_default_rig() -> list[SphereCameraPose]:
    """The 41-view rig as shipped in package data (identical to :func:`make_default_rig`)."""
    with resources.files("flk.data").joinpath("rig.json").open("r") as fh:
        return rig_from_json(json.load(fh))


def rig_to_json(rig: list[SphereCameraPose]) -> dict:
    return {"schema_version": 1, "poses": [p.to_json() for p in rig]}


def rig_from_json(obj: dict) -> list[SphereCameraPose]:
    try:
        return [SphereCameraPose.from_json(p) for p in obj["poses"]]
    except KeyError as exc:
        raise SchemaError(f"rig JSON missing field {exc}") from exc


def load_map_98_to_68() -> np.ndarray:
    """Index map from the 68-point scheme into the 98-point scheme."""
    with resources.files("flk.data").joinpath("map_98_to_68.json").open("r") as fh:
        obj = json.load(fh)
    return np.asarray(obj["map"], dtype=int)


@dataclass(frozen=True)
class NoiseConfig:
    """Detector-noise model applied to rendered detections."""

    kind: str = "none"
    sigma: float = 0.0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "laplacian"):
            raise ValidationError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValidationError("dropout_rate must lie in [0, 1)")

    def to_json(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "dropout_rate": self.dropout_rate}

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseConfig":
        return cls(kind=obj.get("kind", "none"), sigma=float(obj.get("sigma", 0.0)),
                   dropout_rate=float(obj.get("dropout_rate", 0.0)))

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Noise sample with per-axis standard deviation ``sigma`` (both kinds)."""
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size=shape)
        if self.kind == "laplacian":
            return rng.laplace(0.0, self.sigma / np.sqrt(2.0), size=shape)
        return np.zeros(shape)


@dataclass
class Scene:
    """Ground-truthed synthetic multi-view bundle."""

    gt_landmarks3d: LandmarkSet3D
    rig: list
    cameras: list
    detections: list
    masks: list
    noise: NoiseConfig
    seed: int
    config: CameraSpaceConfig
    normal_template: NormalTemplate = None

    @property
    def n_points(self) -> int:
        return self.gt_landmarks3d.n_points

    @property
    def n_views(self) -> int:
        return len(self.rig)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "config": self.config.to_json(),
            "noise": self.noise.to_json(),
            "rig": [p.to_json() for p in self.rig],
            "gt_landmarks3d": self.gt_landmarks3d.to_json(),
            "masks": [[bool(b) for b in m] for m in self.masks],
            "detections": [d.to_json() for d in self.detections],
            "normal_template": self.normal_template.to_json() if self.normal_template else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scene":
        try:
            config = CameraSpaceConfig.from_json(obj["config"])
            rig = [SphereCameraPose.from_json(p) for p in obj["rig"]]
            gt = LandmarkSet3D.from_json(obj["gt_landmarks3d"])
            masks = [np.asarray(m, dtype=bool) for m in obj["masks"]]
            detections = [LandmarkSet2D.from_json(d) for d in obj["detections"]]
            noise = NoiseConfig.from_json(obj["noise"])
            seed = int(obj["seed"])
        except KeyError as exc:
            raise SchemaError(f"scene JSON missing field {exc}") from exc
        tpl = obj.get("normal_template")
        cameras = [camera_from_pose(p, config) for p in rig]
        if len(masks) != len(rig) or len(detections) != len(rig):
            raise SchemaError("scene masks/detections must have one entry per rig view")
        return cls(gt_landmarks3d=gt, rig=rig, cameras=cameras, detections=detections,
                   masks=masks, noise=noise, seed=seed, config=config,
                   normal_template=NormalTemplate.from_json(tpl) if tpl else None)


def make_scene(seed: int, rig: list[SphereCameraPose] = None, noise: NoiseConfig = None,
               cfg: CameraSpaceConfig = None, n_points: int = 98, jitter: float = 0.01) -> Scene:
    """Render one synthetic scene.

    Detections equal the exact projection of the ground truth plus noise at
    every slot where the view's visibility mask is set; mask-hidden slots
    are absent (invalid), never zero-filled.  Dropout then invalidates each
    visible detection independently with ``dropout_rate``.
    """
    rig = list(rig) if rig is not None else make_default_rig()
    noise = noise if noise is not None else NoiseConfig()
    cfg = cfg if cfg is not None else CameraSpaceConfig()
    rng = np.random.default_rng(seed)

    layout, template = make_face_layout(rng, n_points=n_points, jitter=jitter)
    cameras = [camera_from_pose(p, cfg) for p in rig]
    masks = rig_masks(rig, template, cfg)

    detections = []
    for cam, mask in zip(cameras, masks):
        uv, w = project_array(layout.points, cam)
        visible = mask & layout.valid & (w > DEPTH_EPSILON)
        pts = uv + noise.draw(rng, uv.shape)
        keep = rng.uniform(size=n_points) >= noise.dropout_rate
        visible = visible & keep
        pts[~visible] = np.nan
        detections.append(LandmarkSet2D(pts, visible))

    return Scene(gt_landmarks3d=layout, rig=rig, cameras=cameras, detections=detections,
                 masks=masks, noise=noise, seed=seed, config=cfg, normal_template=template)
