import numpy as np
import numpy.testing as npt
import pytest

from flk.errors import CoverageError, DegenerateGeometryError, EmptyResultError, ValidationError
from flk.geometry import CameraSpaceConfig, SphereCameraPose, camera_from_pose, project
from flk.landmarks import LandmarkSet2D, LandmarkSet3D
from flk.lifting import (
    LiftOptions,
    MultiViewObservations,
    ViewObservation,
    lift_multiview,
    observations_from_scene,
    reprojection_cost,
    template_from_pseudolabels,
    triangulate_pair,
)
from flk.synthgen import NoiseConfig, make_scene

from conftest import random_rotation


def rig_camera(alpha, beta, cfg):
    return camera_from_pose(SphereCameraPose(alpha, beta, 0.0), cfg)


class TestTriangulatePair:
    def test_exact_recovery(self, cfg):
        rng = np.random.default_rng(0)
        cam_a, cam_b = rig_camera(-20.0, 5.0, cfg), rig_camera(25.0, -10.0, cfg)
        for _ in range(50):
            p = rng.normal(scale=0.15, size=3)
            X = triangulate_pair(cam_a, project(p, cam_a), cam_b, project(p, cam_b))
            assert np.linalg.norm(X - p) < 1e-6

    def test_identical_cameras_degenerate(self, cfg):
        cam = rig_camera(0.0, 0.0, cfg)
        with pytest.raises(DegenerateGeometryError):
            triangulate_pair(cam, [100.0, 100.0], cam, [100.0, 100.0])

    def test_noise_regression_bound(self, cfg):
        # +-0.5 px uniform noise over a ~30 degree baseline; bounds frozen
        # from a 2000-trial measurement (mean 0.0021, max 0.0058).
        rng = np.random.default_rng(0)
        cam_a, cam_b = rig_camera(-15.0, 0.0, cfg), rig_camera(15.0, 5.0, cfg)
        errs = []
        for _ in range(500):
            p = rng.normal(scale=0.15, size=3)
            ua = project(p, cam_a) + rng.uniform(-0.5, 0.5, size=2)
            ub = project(p, cam_b) + rng.uniform(-0.5, 0.5, size=2)
            errs.append(np.linalg.norm(triangulate_pair(cam_a, ua, cam_b, ub) - p))
        assert np.mean(errs) < 0.004
        assert np.max(errs) < 0.012


def _tiny_observations(cfg, pts, angles=((-20.0, 0.0), (15.0, 10.0), (0.0, -20.0)), mask=None):
    n = pts.shape[0]
    views = []
    for a, b in angles:
        cam = rig_camera(a, b, cfg)
        det = LandmarkSet2D(np.stack([project(p, cam) for p in pts]))
        m = np.ones(n, dtype=bool) if mask is None else mask.copy()
        views.append(ViewObservation(camera=cam, detections=det, mask=m))
    return MultiViewObservations(views=views)


class TestReprojectionCost:
    def test_zero_at_ground_truth(self, cfg):
        pts = np.random.default_rng(1).normal(scale=0.1, size=(4, 3))
        ev = reprojection_cost(pts, _tiny_observations(cfg, pts))
        assert ev.cost == pytest.approx(0.0, abs=1e-18)
        assert ev.residuals.shape == (4 * 3 * 2,)

    def test_all_masked_gives_empty(self, cfg):
        pts = np.random.default_rng(2).normal(scale=0.1, size=(3, 3))
        obs = _tiny_observations(cfg, pts, mask=np.zeros(3, dtype=bool))
        ev = reprojection_cost(pts, obs)
        assert ev.cost == 0.0
        assert ev.residuals.size == 0

    def test_jacobian_matches_finite_differences(self, cfg):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(10):
            gt = rng.normal(scale=0.1, size=(3, 3))
            obs = _tiny_observations(cfg, gt, mask=rng.uniform(size=3) < 0.8)
            pts = gt + rng.normal(scale=0.05, size=gt.shape)
            ev = reprojection_cost(pts, obs)
            scale = np.abs(ev.jacobian).max() + 1e-12
            for lm in range(3):
                rows = ev.landmark_indices == lm
                for axis in range(3):
                    pp, pm = pts.copy(), pts.copy()
                    pp[lm, axis] += h
                    pm[lm, axis] -= h
                    fd = (reprojection_cost(pp, obs).residuals
                          - reprojection_cost(pm, obs).residuals) / (2 * h)
                    expected = np.where(rows, ev.jacobian[:, axis], 0.0)
                    assert np.max(np.abs(fd - expected)) / scale < 1e-5

    def test_behind_camera_slot_clamped_with_flag(self, cfg):
        pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -10.0]])  # second point behind every rig camera
        obs = _tiny_observations(cfg, np.zeros((2, 3)))
        ev = reprojection_cost(pts, obs)
        assert len(ev.clamped_slots) == 3  # one per view
        assert all(lm == 1 for _, lm in ev.clamped_slots)


class TestLiftMultiview:
    def test_noiseless_scene_recovers_ground_truth(self, noiseless_scene):
        res = lift_multiview(observations_from_scene(noiseless_scene))
        gt = noiseless_scene.gt_landmarks3d.points
        err = np.linalg.norm(res.landmarks3d.points[res.valid] - gt[res.valid], axis=1)
        assert err.max() < 1e-6
        assert np.nanmax(res.per_landmark_rms[res.valid]) < 1e-6
        # pupils are excluded by default on the 98-point scheme
        assert not res.valid[96] and not res.valid[97]
        assert res.valid.sum() == 96

    def test_single_view_landmark_is_invalid(self, cfg):
        rng = np.random.default_rng(4)
        pts = rng.normal(scale=0.1, size=(3, 3))
        obs = _tiny_observations(cfg, pts)
        for v, view in enumerate(obs.views):
            if v > 0:
                view.mask[0] = False  # landmark 0 seen only in view 0
        res = lift_multiview(obs, LiftOptions(excluded_indices=()))
        assert not res.valid[0]
        assert res.valid[1] and res.valid[2]
        npt.assert_allclose(res.landmarks3d.points[1:], pts[1:], atol=1e-6)

    def test_mask_independence_is_bit_exact(self, cfg):
        rng = np.random.default_rng(5)
        pts = rng.normal(scale=0.1, size=(4, 3))
        mask = np.array([True, True, False, True])
        obs_a = _tiny_observations(cfg, pts, mask=mask)
        obs_b = _tiny_observations(cfg, pts, mask=mask)
        for view in obs_b.views:
            view.detections.points[~mask] = rng.normal(scale=1e6, size=(1, 2))
            # masked-out slots may hold arbitrary garbage
        opts = LiftOptions(excluded_indices=())
        res_a, res_b = lift_multiview(obs_a, opts), lift_multiview(obs_b, opts)
        npt.assert_array_equal(res_a.landmarks3d.points[res_a.valid],
                               res_b.landmarks3d.points[res_b.valid])
        npt.assert_array_equal(res_a.valid, res_b.valid)
        assert res_a.final_cost == res_b.final_cost

    def test_nothing_liftable_raises(self, cfg):
        pts = np.random.default_rng(6).normal(scale=0.1, size=(3, 3))
        obs = _tiny_observations(cfg, pts, mask=np.zeros(3, dtype=bool))
        with pytest.raises(EmptyResultError):
            lift_multiview(obs, LiftOptions(excluded_indices=()))

    def test_world_rotation_equivariance(self, cfg):
        from flk.geometry import Camera, CameraExtrinsics

        scene = make_scene(seed=3)
        obs = observations_from_scene(scene)
        Q = random_rotation(np.random.default_rng(7))
        rotated_views = []
        for view in obs.views:
            cam = view.camera
            rotated_views.append(ViewObservation(
                camera=Camera(cam.intrinsics, CameraExtrinsics(cam.R @ Q.T, cam.t)),
                detections=view.detections, mask=view.mask))
        res = lift_multiview(obs)
        res_rot = lift_multiview(MultiViewObservations(views=rotated_views))
        npt.assert_array_equal(res.valid, res_rot.valid)
        npt.assert_allclose(res_rot.landmarks3d.points[res.valid],
                            res.landmarks3d.points[res.valid] @ Q.T, atol=1e-8)

    def test_noise_reduces_with_more_views(self):
        scene = make_scene(seed=5, noise=NoiseConfig(kind="gaussian", sigma=1.0))
        obs = observations_from_scene(scene)
        res_all = lift_multiview(obs)
        obs_few = MultiViewObservations(views=obs.views[18:23])
        res_few = lift_multiview(obs_few)
        gt = scene.gt_landmarks3d.points
        both = res_all.valid & res_few.valid
        e_all = np.linalg.norm(res_all.landmarks3d.points[both] - gt[both], axis=1).mean()
        e_few = np.linalg.norm(res_few.landmarks3d.points[both] - gt[both], axis=1).mean()
        assert e_all < e_few

    def test_robust_kernel_flag_runs(self, noiseless_scene):
        res = lift_multiview(observations_from_scene(noiseless_scene),
                             LiftOptions(robust_kernel=True))
        gt = noiseless_scene.gt_landmarks3d.points
        err = np.linalg.norm(res.landmarks3d.points[res.valid] - gt[res.valid], axis=1)
        assert err.max() < 1e-6


class TestTemplateFromPseudolabels:
    def test_single_set_is_identity(self):
        pts = np.random.default_rng(8).normal(size=(4, 3))
        s = LandmarkSet3D(pts)
        out = template_from_pseudolabels([s])
        npt.assert_array_equal(out.points, pts)

    def test_two_sets_give_midpoint(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        out = template_from_pseudolabels([LandmarkSet3D(a), LandmarkSet3D(b)])
        npt.assert_allclose(out.points, (a + b) / 2.0)

    def test_invalid_landmark_uses_remaining_sets(self):
        rng = np.random.default_rng(10)
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        valid_a = np.array([True, False, True])
        out = template_from_pseudolabels([LandmarkSet3D(a, valid_a), LandmarkSet3D(b)])
        npt.assert_allclose(out.points[0], (a[0] + b[0]) / 2.0)
        npt.assert_allclose(out.points[1], b[1])

    def test_uncovered_landmark_raises_with_indices(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(3, 3))
        valid = np.array([True, False, True])
        with pytest.raises(CoverageError) as excinfo:
            template_from_pseudolabels([LandmarkSet3D(a, valid), LandmarkSet3D(a, valid)])
        assert excinfo.value.indices == (1,)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            template_from_pseudolabels([LandmarkSet3D(np.zeros((3, 3))),
                                        LandmarkSet3D(np.zeros((4, 3)))])
