"""flk: multi-view facial landmark lifting, pose fitting, and evaluation.

The library covers the full geometric pipeline around a sphere-mounted
perspective camera rig: constrained camera sampling, occlusion-aware
visibility masks from a landmark normal template, masked multi-view
lifting of 2D detections to 3D, monocular pose/shape fitting against a
lifted template, uncertainty-aware losses with analytic gradients, and
definition-agnostic evaluation metrics (NME, NMLC) — all verified against
synthetic scenes with known ground truth.
"""

from .errors import FlkError
from .estimators import MonocularPoseFitter, MultiViewLifter
from .fitter import FitOptions, FitResult, HeadParams, fit_monocular, predict_camera
from .geometry import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraSpaceConfig,
    SphereCameraPose,
    bbox_valid,
    camera_from_pose,
    matrix_to_rot6d,
    project,
    project_set,
    rot6d_to_matrix,
    sample_camera,
    sphere_translation,
)
from .landmarks import LandmarkSet2D, LandmarkSet3D
from .lifting import (
    LiftOptions,
    LiftResult,
    MultiViewObservations,
    ViewObservation,
    lift_multiview,
    observations_from_scene,
    reprojection_cost,
    template_from_pseudolabels,
    triangulate_pair,
)
from .losses import (
    MultiViewPrediction,
    PoseTarget,
    geodesic_loss,
    l1_loss,
    lll_2d,
    mse_loss,
    multiframe_loss,
    multiview_loss,
)
from .masking import NormalTemplate, default_normal_template, rig_masks, visibility_mask
from .metrics import EvalSample, cross_dataset_nme, nme, nmlc
from .synthgen import (
    NoiseConfig,
    Scene,
    load_default_rig,
    load_map_98_to_68,
    make_default_rig,
    make_face_layout,
    make_scene,
    mirror_permutation_98,
)

__version__ = "0.1.0"

__all__ = [
    "Camera", "CameraExtrinsics", "CameraIntrinsics", "CameraSpaceConfig", "EvalSample",
    "FitOptions", "FitResult", "FlkError", "HeadParams", "LandmarkSet2D", "LandmarkSet3D",
    "LiftOptions", "LiftResult", "MonocularPoseFitter", "MultiViewLifter",
    "MultiViewObservations", "MultiViewPrediction", "NoiseConfig", "NormalTemplate",
    "PoseTarget", "Scene", "SphereCameraPose", "ViewObservation", "bbox_valid",
    "camera_from_pose", "cross_dataset_nme", "default_normal_template", "fit_monocular",
    "geodesic_loss", "l1_loss", "lift_multiview", "lll_2d", "load_default_rig",
    "load_map_98_to_68", "make_default_rig", "make_face_layout", "make_scene",
    "matrix_to_rot6d", "mirror_permutation_98", "mse_loss", "multiframe_loss",
    "multiview_loss", "nme", "nmlc", "observations_from_scene", "predict_camera", "project",
    "project_set", "reprojection_cost", "rig_masks", "rot6d_to_matrix", "sample_camera",
    "sphere_translation", "template_from_pseudolabels", "triangulate_pair", "visibility_mask",
]
