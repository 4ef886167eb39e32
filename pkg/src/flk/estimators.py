"""Scikit-learn style estimator wrappers around the functional core.

Both estimators follow the usual conventions: hyperparameters live on the
constructor (so ``get_params`` / ``set_params`` / ``clone`` work), ``fit``
validates its inputs and stores results in trailing-underscore attributes,
and querying an unfitted estimator raises ``NotFittedError``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .fitter import FitOptions, fit_monocular
from .geometry import project_set
from .landmarks import LandmarkSet2D
from .lifting import LiftOptions, MultiViewObservations, lift_multiview


class MultiViewLifter(BaseEstimator):
    """Estimator interface for masked multi-view landmark lifting.

    Parameters mirror :class:`flk.lifting.LiftOptions`.

    Attributes (after ``fit``)
    --------------------------
    landmarks3d_ : (N, 3) array with NaN rows where invalid
    valid_ : (N,) bool
    per_landmark_rms_ : (N,) pixel RMS reprojection error (NaN where invalid)
    iterations_ : int
    final_cost_ : float
    result_ : the underlying :class:`flk.lifting.LiftResult`
    """

    def __init__(self, max_iter=100, tol=1e-10, damping_init=1e-3, damping_factor=10.0,
                 excluded_indices="auto", robust_kernel=False, huber_delta=1.0):
        self.max_iter = max_iter
        self.tol = tol
        self.damping_init = damping_init
        self.damping_factor = damping_factor
        self.excluded_indices = excluded_indices
        self.robust_kernel = robust_kernel
        self.huber_delta = huber_delta

    def _options(self) -> LiftOptions:
        return LiftOptions(max_iter=self.max_iter, tol=self.tol, damping_init=self.damping_init,
                           damping_factor=self.damping_factor,
                           excluded_indices=self.excluded_indices,
                           robust_kernel=self.robust_kernel, huber_delta=self.huber_delta)

    def fit(self, X, y=None):
        """Lift the observations in ``X`` (a :class:`MultiViewObservations`)."""
        if not isinstance(X, MultiViewObservations):
            X = MultiViewObservations(views=list(X))
        result = lift_multiview(X, self._options())
        self.result_ = result
        self.landmarks3d_ = result.landmarks3d.points
        self.valid_ = result.valid
        self.per_landmark_rms_ = result.per_landmark_rms
        self.iterations_ = result.iterations
        self.final_cost_ = result.final_cost
        return self

    def fit_transform(self, X, y=None):
        """Fit and return the lifted (N, 3) landmark array."""
        return self.fit(X).landmarks3d_


class MonocularPoseFitter(BaseEstimator):
    """Estimator interface for monocular pose-and-shape fitting.

    The template geometry and camera-space configuration are constructor
    parameters; ``fit`` consumes one detection set.

    Attributes (after ``fit``)
    --------------------------
    rotation_ : (3, 3) fitted rotation
    delta_t_ : (3,) fitted translation offset
    offsets_ : (N, 3) fitted template offsets
    landmarks3d_ : (N, 3) fitted landmarks
    camera_ : the fitted :class:`flk.geometry.Camera`
    final_cost_, iterations_, result_
    """

    def __init__(self, template=None, normal_template=None, camera_config=None,
                 lambda_offsets=1e-2, max_iter=500, tol=1e-9, min_valid=6,
                 excluded_indices="auto", n_starts=3):
        self.template = template
        self.normal_template = normal_template
        self.camera_config = camera_config
        self.lambda_offsets = lambda_offsets
        self.max_iter = max_iter
        self.tol = tol
        self.min_valid = min_valid
        self.excluded_indices = excluded_indices
        self.n_starts = n_starts

    def _options(self) -> FitOptions:
        return FitOptions(lambda_offsets=self.lambda_offsets, max_iter=self.max_iter,
                          tol=self.tol, min_valid=self.min_valid,
                          excluded_indices=self.excluded_indices, n_starts=self.n_starts)

    def fit(self, X, y=None):
        """Fit against ``X``: a :class:`LandmarkSet2D` or an (N, 2) array."""
        if self.template is None or self.normal_template is None:
            raise ValueError("MonocularPoseFitter requires template and normal_template")
        detections = X if isinstance(X, LandmarkSet2D) else LandmarkSet2D(np.asarray(X, dtype=float))
        result = fit_monocular(detections, self.template, self.normal_template,
                               self.camera_config, self._options())
        self.result_ = result
        self.rotation_ = result.camera.R
        self.delta_t_ = result.params.delta_t
        self.offsets_ = result.params.offsets
        self.landmarks3d_ = result.landmarks3d.points
        self.camera_ = result.camera
        self.final_cost_ = result.final_cost
        self.iterations_ = result.iterations
        return self

    def predict(self, X=None):
        """Project the fitted landmarks through the fitted camera, (N, 2) pixels."""
        check_is_fitted(self, "result_")
        return project_set(self.result_.landmarks3d, self.camera_).points
