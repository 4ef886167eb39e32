"""Landmark set containers.

A landmark set is an (N, d) coordinate array plus a per-point validity mask.
Invalid slots keep a coordinate value (NaN after JSON round-trips) but must
never be read by consumers; everything downstream filters on ``valid``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ValidationError
from .validation import as_bool_mask, as_points


def _coerce(points, valid, dim, name):
    pts = as_points(points, dim, name)
    if valid is None:
        valid = np.all(np.isfinite(pts), axis=1)
    mask = as_bool_mask(valid, pts.shape[0], f"{name}.valid")
    bad = mask & ~np.all(np.isfinite(pts), axis=1)
    if np.any(bad):
        raise ValidationError(f"{name} has non-finite coordinates at valid indices {np.nonzero(bad)[0].tolist()}")
    return pts, mask


@dataclass
class LandmarkSet2D:
    """N pixel-space points with per-point validity."""

    points: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.points, self.valid = _coerce(self.points, self.valid, 2, "LandmarkSet2D")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def to_json(self) -> list:
        return [([float(p[0]), float(p[1])] if ok else None) for p, ok in zip(self.points, self.valid)]

    @classmethod
    def from_json(cls, entries) -> "LandmarkSet2D":
        return cls(*_points_from_json(entries, 2))


@dataclass
class LandmarkSet3D:
    """N world-space points with per-point validity."""

    points: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.points, self.valid = _coerce(self.points, self.valid, 3, "LandmarkSet3D")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def to_json(self) -> list:
        return [([float(p[0]), float(p[1]), float(p[2])] if ok else None) for p, ok in zip(self.points, self.valid)]

    @classmethod
    def from_json(cls, entries) -> "LandmarkSet3D":
        return cls(*_points_from_json(entries, 3))


def _points_from_json(entries, dim):
    if not isinstance(entries, list):
        raise SchemaError(f"landmark list must be a JSON array, got {type(entries).__name__}")
    points = np.full((len(entries), dim), np.nan)
    valid = np.zeros(len(entries), dtype=bool)
    for i, entry in enumerate(entries):
        if entry is None:
            continue
        if not isinstance(entry, (list, tuple)) or len(entry) != dim:
            raise SchemaError(f"landmark entry {i} must be null or a {dim}-element array")
        points[i] = entry
        valid[i] = True
    return points, valid
