"""Loss library with analytic gradients.

The 2D Laplacian log-likelihood (LLL) is parameterized by a per-landmark
Cholesky factor

    L = [[exp(d1), 0], [off, exp(d2)]],   Sigma = L @ L.T,

which keeps ``Sigma`` symmetric positive definite for every finite raw
parameter triple ``(d1, off, d2)``.  With residual ``r = pred - target`` the
negative log-likelihood is

    nll = 0.5 * log det Sigma + sqrt(r^T Sigma^{-1} r),

with the density's constant offset dropped; constant offsets and scales on
the Mahalanobis term do not move minimizers and are absorbed by fitted
covariances.  The Mahalanobis square root is non-smooth at ``r = 0``; there
the reported gradient is the zero subgradient.

All gradients are analytic and verified against central finite differences
in the test suite (away from the non-smooth point).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .validation import as_points, as_vector, check_rotation

_GEODESIC_INPUT_TOL = 1e-4  # loose enough for finite-difference probes


def cholesky_factor(params: np.ndarray) -> np.ndarray:
    """Lower-triangular factors for raw parameter rows ``(d1, off, d2)``, shape (N, 2, 2)."""
    params = as_points(params, 3, "cholesky params")
    L = np.zeros((params.shape[0], 2, 2))
    L[:, 0, 0] = np.exp(params[:, 0])
    L[:, 1, 0] = params[:, 1]
    L[:, 1, 1] = np.exp(params[:, 2])
    return L


def cholesky_to_covariance(params: np.ndarray) -> np.ndarray:
    """Covariance matrices ``Sigma = L L^T`` for raw parameter rows, shape (N, 2, 2)."""
    L = cholesky_factor(params)
    return L @ np.transpose(L, (0, 2, 1))


def lll_2d_batch(pred: np.ndarray, target: np.ndarray, params: np.ndarray):
    """Per-landmark LLL values and gradients.

    Returns ``(values (N,), grad_pred (N, 2), grad_params (N, 3))``.
    """
    pred = as_points(pred, 2, "pred")
    target = as_points(target, 2, "target")
    params = as_points(params, 3, "params")
    if not (pred.shape[0] == target.shape[0] == params.shape[0]):
        raise ValidationError("pred, target, and params must share N")

    d1 = np.exp(params[:, 0])
    off = params[:, 1]
    d2 = np.exp(params[:, 2])
    r = pred - target

    # Forward/backward triangular solves, unrolled for the 2x2 case.
    y0 = r[:, 0] / d1
    y1 = (r[:, 1] - off * y0) / d2
    m = np.sqrt(y0**2 + y1**2)
    values = params[:, 0] + params[:, 2] + m

    # g = Sigma^{-1} r via L^T z = y.
    g1 = y1 / d2
    g0 = (y0 - off * g1) / d1

    grad_pred = np.zeros_like(r)
    grad_params = np.zeros_like(params)
    grad_params[:, 0] = 1.0
    grad_params[:, 2] = 1.0
    nz = m > 0
    grad_pred[nz, 0] = g0[nz] / m[nz]
    grad_pred[nz, 1] = g1[nz] / m[nz]
    # d(sqrt(r^T Sigma^{-1} r))/dL = -g y^T / m, chained through the raw triple.
    grad_params[nz, 0] -= g0[nz] * y0[nz] * d1[nz] / m[nz]
    grad_params[nz, 1] -= g1[nz] * y0[nz] / m[nz]
    grad_params[nz, 2] -= g1[nz] * y1[nz] * d2[nz] / m[nz]
    return values, grad_pred, grad_params


def lll_2d(pred, target, params):
    """LLL for a single landmark: ``(value, grad_pred (2,), grad_params (3,))``."""
    values, grad_pred, grad_params = lll_2d_batch(
        as_vector(pred, 2, "pred")[None], as_vector(target, 2, "target")[None],
        as_vector(params, 3, "params")[None])
    return float(values[0]), grad_pred[0], grad_params[0]


def geodesic_loss(R1, R2) -> float:
    """Angular distance between two rotations, in radians.

    ``arccos(clamp((trace(R1 R2^T) - 1) / 2, -1, 1))``, in ``[0, pi]``.
    """
    R1 = check_rotation(R1, "R1", tol=_GEODESIC_INPUT_TOL)
    R2 = check_rotation(R2, "R2", tol=_GEODESIC_INPUT_TOL)
    c = (np.trace(R1 @ R2.T) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def geodesic_loss_grad(R1, R2) -> np.ndarray:
    """Gradient of :func:`geodesic_loss` w.r.t. the entries of ``R1``.

    Undefined (returned as zeros) at the clamp endpoints where the angle is
    exactly 0 or pi.
    """
    R1 = check_rotation(R1, "R1", tol=_GEODESIC_INPUT_TOL)
    R2 = check_rotation(R2, "R2", tol=_GEODESIC_INPUT_TOL)
    c = (np.trace(R1 @ R2.T) - 1.0) / 2.0
    if abs(c) >= 1.0:
        return np.zeros((3, 3))
    return -0.5 / math.sqrt(1.0 - c * c) * R2


def mse_loss(a, b):
    """Mean squared error over all elements: ``(value, grad_a)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def l1_loss(a, b):
    """Mean absolute error over all elements: ``(value, grad_a)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


@dataclass
class PoseTarget:
    """Supervision bundle for one multi-view sample."""

    rotation: np.ndarray
    delta_t: np.ndarray
    landmarks3d: np.ndarray
    landmarks2d: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.rotation = check_rotation(self.rotation, "target rotation", tol=_GEODESIC_INPUT_TOL)
        self.delta_t = as_vector(self.delta_t, 3, "target delta_t")
        self.landmarks3d = as_points(self.landmarks3d, 3, "target landmarks3d")
        self.landmarks2d = as_points(self.landmarks2d, 2, "target landmarks2d")
        n = self.landmarks3d.shape[0]
        if self.landmarks2d.shape[0] != n:
            raise ValidationError("target landmark sets must share N")
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.shape != (n,):
            raise ValidationError(f"mask must have shape ({n},)")


@dataclass
class MultiViewPrediction:
    """Head outputs entering the multi-view objective."""

    landmarks3d: np.ndarray
    delta_t: np.ndarray
    rotation: np.ndarray
    landmarks25d: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        self.landmarks3d = as_points(self.landmarks3d, 3, "pred landmarks3d")
        self.delta_t = as_vector(self.delta_t, 3, "pred delta_t")
        self.rotation = check_rotation(self.rotation, "pred rotation", tol=_GEODESIC_INPUT_TOL)
        self.landmarks25d = as_points(self.landmarks25d, 2, "pred landmarks25d")
        self.chol = as_points(self.chol, 3, "pred chol")
        n = self.landmarks3d.shape[0]
        if self.landmarks25d.shape[0] != n or self.chol.shape[0] != n:
            raise ValidationError("prediction landmark arrays must share N")


@dataclass
class MultiViewLossResult:
    total: float
    terms: dict
    grads: dict


def multiframe_loss(pred25d, chol, target2d, mask):
    """Masked sum of per-landmark LLL terms.

    Returns ``(value, grad_pred (N, 2), grad_chol (N, 3))``; masked-out
    landmarks contribute nothing and receive zero gradients, so any change
    at those slots leaves the result untouched.
    """
    pred25d = as_points(pred25d, 2, "pred25d")
    chol = as_points(chol, 3, "chol")
    target2d = as_points(target2d, 2, "target2d")
    n = pred25d.shape[0]
    if target2d.shape[0] != n or chol.shape[0] != n:
        raise ValidationError("multiframe_loss arrays must share N")
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (n,):
        raise ValidationError(f"mask must have shape ({n},)")

    grad_pred = np.zeros((n, 2))
    grad_chol = np.zeros((n, 3))
    if not mask.any():
        return 0.0, grad_pred, grad_chol
    values, gp, gc = lll_2d_batch(pred25d[mask], target2d[mask], chol[mask])
    grad_pred[mask] = gp
    grad_chol[mask] = gc
    return float(values.sum()), grad_pred, grad_chol


def multiview_loss(pred: MultiViewPrediction, target: PoseTarget) -> MultiViewLossResult:
    """Combined multi-view objective.

    Unweighted sum of four terms: MSE on 3D landmarks, MSE on the
    translation offset, the masked LLL on projected 2.5D landmarks, and the
    geodesic rotation distance.  Term values are returned separately for
    logging, and analytic gradients w.r.t. every prediction field.
    """
    if pred.landmarks3d.shape != target.landmarks3d.shape:
        raise ValidationError("prediction/target 3D landmark shape mismatch")
    if pred.landmarks25d.shape != target.landmarks2d.shape:
        raise ValidationError("prediction/target 2D landmark shape mismatch")

    mse3d, g3d = mse_loss(pred.landmarks3d, target.landmarks3d)
    mse_dt, gdt = mse_loss(pred.delta_t, target.delta_t)
    lll, gp25, gchol = multiframe_loss(pred.landmarks25d, pred.chol, target.landmarks2d, target.mask)
    geo = geodesic_loss(pred.rotation, target.rotation)
    grot = geodesic_loss_grad(pred.rotation, target.rotation)

    terms = {"mse_landmarks3d": mse3d, "mse_delta_t": mse_dt,
             "lll_landmarks25d": lll, "geodesic_rotation": geo}
    grads = {"landmarks3d": g3d, "delta_t": gdt, "rotation": grot,
             "landmarks25d": gp25, "chol": gchol}
    return MultiViewLossResult(total=mse3d + mse_dt + lll + geo, terms=terms, grads=grads)
