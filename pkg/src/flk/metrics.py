"""Definition-agnostic landmark evaluation metrics.

For a test set of M images with predictions ``preds_m`` (N x 2), projected
vertex labels ``verts_m`` (|V| x 2), and face-box sizes ``(h, w)``, the
normalized mean error under a vertex assignment ``K`` is

    NME(K) = 1/(M N) * sum_m sum_n z_m * || preds_{m,n} - verts_{m,K_n} ||,
    z_m = (h_m * w_m)^(-1/2).

NMLC minimizes NME over the assignment.  Because the sum decomposes over
landmarks, the optimal ``K_n`` is the per-landmark argmin of the
z-weighted mean distance over the whole sample set (one global assignment,
never per image); a consistent per-landmark offset between prediction and
vertex conventions therefore costs nothing, while per-image noise still
counts.  Ties break to the lowest vertex index.  Values are reported both
raw and scaled by 100 at the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .validation import as_points


@dataclass
class EvalSample:
    """One image: predicted landmarks, candidate vertices, and the face box."""

    preds: np.ndarray
    verts: np.ndarray
    bbox: tuple

    def __post_init__(self):
        self.preds = as_points(self.preds, 2, "preds")
        self.verts = as_points(self.verts, 2, "verts")
        h, w = self.bbox
        if not (h > 0 and w > 0):
            raise ValidationError(f"bbox sides must be positive, got {self.bbox}")
        self.bbox = (float(h), float(w))
        if self.verts.shape[0] < self.preds.shape[0]:
            raise ValidationError("need at least as many vertices as predicted landmarks")

    @property
    def z(self) -> float:
        return 1.0 / np.sqrt(self.bbox[0] * self.bbox[1])


def _check_samples(samples):
    if not samples:
        raise ValidationError("need at least one evaluation sample")
    n = samples[0].preds.shape[0]
    v = samples[0].verts.shape[0]
    if any(s.preds.shape[0] != n or s.verts.shape[0] != v for s in samples):
        raise ValidationError("all samples must share N and |V|")
    return n, v


def nme(samples: list[EvalSample], assignment) -> float:
    """Normalized mean error under a fixed vertex assignment."""
    n, v = _check_samples(samples)
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != (n,):
        raise ValidationError(f"assignment must have shape ({n},)")
    if np.any(assignment < 0) or np.any(assignment >= v):
        raise ValidationError("assignment index out of vertex range")
    total = 0.0
    for s in samples:
        total += s.z * float(np.linalg.norm(s.preds - s.verts[assignment], axis=1).sum())
    return total / (len(samples) * n)


def nmlc(samples: list[EvalSample]) -> tuple[float, np.ndarray]:
    """Normalized mean local consistency: NME minimized over the assignment.

    Returns ``(value, assignment)``; the assignment is the same for every
    sample and may repeat vertex indices.
    """
    n, v = _check_samples(samples)
    # Sum of z-weighted distances per (landmark, vertex) over the test set.
    dist = np.zeros((n, v))
    for s in samples:
        dist += s.z * np.linalg.norm(s.preds[:, None, :] - s.verts[None, :, :], axis=2)
    assignment = np.argmin(dist, axis=1)  # first minimum wins ties
    value = float(dist[np.arange(n), assignment].sum()) / (len(samples) * n)
    return value, assignment


def cross_dataset_nme(samples: list[EvalSample], definition, landmark_map=None) -> float:
    """NME of remapped predictions against a foreign dataset definition.

    ``landmark_map[j]`` names the prediction column that plays evaluation
    landmark ``j``; predictions not referenced by the map drop out of the
    average.  ``None`` keeps the native indexing.  ``definition`` is the
    evaluation dataset's vertex assignment (length matches the map).
    """
    n, _ = _check_samples(samples)
    if landmark_map is None:
        remapped = samples
    else:
        landmark_map = np.asarray(landmark_map)
        if landmark_map.ndim != 1:
            raise ValidationError("landmark_map must be a flat index array")
        unmapped = (landmark_map == None)  # noqa: E711  (object arrays carry None entries)
        if landmark_map.dtype == object and unmapped.any():
            raise ValidationError(f"landmark_map has unmapped entries at {np.nonzero(unmapped)[0].tolist()}")
        landmark_map = landmark_map.astype(int)
        if np.any(landmark_map < 0) or np.any(landmark_map >= n):
            raise ValidationError("landmark_map index out of prediction range")
        remapped = [EvalSample(preds=s.preds[landmark_map], verts=s.verts, bbox=s.bbox)
                    for s in samples]
    return nme(remapped, definition)
