"""Self-occlusion visibility masks from a per-landmark normal template.

A landmark counts as visible under rotation ``R`` when its rotated template
normal points toward the viewer: ``(R @ normal) . forward > threshold``.
The default forward vector is ``(0, 0, -1)``, the direction from the face
toward the camera at the frontal pose under the conventions of
:mod:`flk.geometry`.  Ties are hidden: visibility is a strict inequality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import SchemaError, ValidationError
from .geometry import CameraSpaceConfig, SphereCameraPose, look_at_rotation, roll_matrix
from .validation import as_points, as_vector, check_rotation, check_unit_vector

FORWARD_DEFAULT = np.array([0.0, 0.0, -1.0])

VISIBILITY_THRESHOLD = 0.5
NOSE_BRIDGE_THRESHOLD = -0.1


@dataclass
class NormalTemplate:
    """Unit normals and visibility thresholds for one landmark scheme.

    ``thresholds`` defaults to 0.5 everywhere except the nose-bridge
    indices, which use the forgiving -0.1 so the bridge stays usable over a
    wide yaw range.
    """

    normals: np.ndarray
    thresholds: np.ndarray = None
    nose_bridge_indices: tuple = ()

    def __post_init__(self):
        self.normals = as_points(self.normals, 3, "normals")
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValidationError("template normals must be unit length within 1e-9")
        n = self.normals.shape[0]
        self.nose_bridge_indices = tuple(int(i) for i in self.nose_bridge_indices)
        if any(i < 0 or i >= n for i in self.nose_bridge_indices):
            raise ValidationError("nose_bridge_indices out of range")
        if self.thresholds is None:
            thresholds = np.full(n, VISIBILITY_THRESHOLD)
            thresholds[list(self.nose_bridge_indices)] = NOSE_BRIDGE_THRESHOLD
            self.thresholds = thresholds
        else:
            self.thresholds = as_vector(self.thresholds, n, "thresholds")
            if np.any(self.thresholds < -1.0) or np.any(self.thresholds > 1.0):
                raise ValidationError("thresholds must lie in [-1, 1]")

    @property
    def n_points(self) -> int:
        return self.normals.shape[0]

    def to_json(self) -> dict:
        return {"normals": [[float(x) for x in n] for n in self.normals],
                "thresholds": [float(t) for t in self.thresholds],
                "nose_bridge_indices": list(self.nose_bridge_indices)}

    @classmethod
    def from_json(cls, obj: dict) -> "NormalTemplate":
        try:
            return cls(normals=np.asarray(obj["normals"], dtype=float),
                       thresholds=np.asarray(obj["thresholds"], dtype=float),
                       nose_bridge_indices=obj.get("nose_bridge_indices", ()))
        except KeyError as exc:
            raise SchemaError(f"normal template JSON missing field {exc}") from exc


def visibility_mask(R, template: NormalTemplate, forward=FORWARD_DEFAULT) -> np.ndarray:
    """Boolean visibility per landmark under rotation ``R``.

    ``m_n = (R @ normal_n) . forward > threshold_n``.  ``forward`` must be
    unit length (raises otherwise).
    """
    R = check_rotation(R, "R")
    forward = check_unit_vector(forward, "forward")
    dots = (template.normals @ R.T) @ forward
    return dots > template.thresholds


def rig_masks(rig: list[SphereCameraPose], template: NormalTemplate,
              cfg: CameraSpaceConfig) -> list[np.ndarray]:
    """Per-view visibility masks for a fixed camera rig.

    Uses each view's world-to-camera rotation with the same normal-threshold
    rule as :func:`visibility_mask`; the translation offset plays no role.
    """
    masks = []
    for pose in rig:
        if not cfg.contains(pose):
            raise ValidationError(f"rig pose {pose} outside camera-space bounds")
        R = roll_matrix(pose.gamma) @ look_at_rotation(pose.alpha, pose.beta)
        masks.append(visibility_mask(R, template))
    return masks


def default_normal_template() -> NormalTemplate:
    """The normal template shipped for the 98-point scheme.

    Computed once from the canonical (unjittered) face layout of
    :func:`flk.synthgen.make_face_layout` and stored as package data.
    """
    with resources.files("flk.data").joinpath("normal_template.json").open("r") as fh:
        return NormalTemplate.from_json(json.load(fh))
