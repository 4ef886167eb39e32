import numpy as np
import numpy.testing as npt
import pytest

from flk.errors import ValidationError
from flk.geometry import CameraSpaceConfig, look_at_rotation, roll_matrix
from flk.masking import (
    NOSE_BRIDGE_THRESHOLD,
    VISIBILITY_THRESHOLD,
    NormalTemplate,
    default_normal_template,
    rig_masks,
    visibility_mask,
)
from flk.synthgen import (
    NOSE_BRIDGE_INDICES_98,
    make_default_rig,
    make_face_layout,
    mirror_permutation_98,
)


def yaw(deg):
    return look_at_rotation(deg, 0.0)


class TestVisibilityMask:
    def test_frontal_normal_visible_at_identity(self):
        tpl = NormalTemplate(normals=np.array([[0.0, 0.0, -1.0]]))
        assert visibility_mask(np.eye(3), tpl)[0]

    def test_ninety_degree_yaw_hides_frontal_normal(self):
        tpl = NormalTemplate(normals=np.array([[0.0, 0.0, -1.0]]))
        assert not visibility_mask(yaw(90.0), tpl)[0]

    def test_nose_bridge_threshold_admits_grazing_normals(self):
        # A rotated normal whose forward dot product is ~0.2: hidden at the
        # default threshold, visible at the nose-bridge threshold.
        normals = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
        tpl_plain = NormalTemplate(normals=normals)
        tpl_bridge = NormalTemplate(normals=normals, nose_bridge_indices=(0, 1))
        R = yaw(np.degrees(np.arccos(0.2)))
        dots = (normals @ R.T) @ np.array([0.0, 0.0, -1.0])
        npt.assert_allclose(dots, 0.2, atol=1e-12)
        assert not visibility_mask(R, tpl_plain).any()
        assert visibility_mask(R, tpl_bridge).all()

    def test_non_unit_forward_raises(self):
        tpl = NormalTemplate(normals=np.array([[0.0, 0.0, -1.0]]))
        with pytest.raises(ValidationError):
            visibility_mask(np.eye(3), tpl, forward=np.array([0.0, 0.0, -2.0]))

    def test_tie_is_hidden(self):
        tpl = NormalTemplate(normals=np.array([[0.0, 0.0, -1.0]]), thresholds=np.array([1.0]))
        assert not visibility_mask(np.eye(3), tpl)[0]  # dot == threshold == 1

    def test_deterministic(self, canonical_layout):
        _, tpl = canonical_layout
        R = roll_matrix(17.0) @ yaw(40.0)
        npt.assert_array_equal(visibility_mask(R, tpl), visibility_mask(R, tpl))

    def test_lowering_threshold_is_monotone(self, canonical_layout):
        _, tpl = canonical_layout
        rng = np.random.default_rng(0)
        for _ in range(20):
            R = roll_matrix(rng.uniform(-90, 90)) @ look_at_rotation(
                rng.uniform(-110, 110), rng.uniform(-60, 60))
            m_hi = visibility_mask(R, tpl)
            lowered = NormalTemplate(normals=tpl.normals, thresholds=tpl.thresholds - 0.3,
                                     nose_bridge_indices=tpl.nose_bridge_indices)
            m_lo = visibility_mask(R, lowered)
            assert np.all(m_lo | ~m_hi)  # visible stays visible


class TestNormalTemplate:
    def test_default_thresholds(self):
        normals = np.tile([0.0, 0.0, -1.0], (5, 1))
        tpl = NormalTemplate(normals=normals, nose_bridge_indices=(2,))
        expected = np.full(5, VISIBILITY_THRESHOLD)
        expected[2] = NOSE_BRIDGE_THRESHOLD
        npt.assert_array_equal(tpl.thresholds, expected)

    def test_rejects_non_unit_normals(self):
        with pytest.raises(ValidationError):
            NormalTemplate(normals=np.array([[0.0, 0.0, -2.0]]))

    def test_json_round_trip(self, canonical_layout):
        _, tpl = canonical_layout
        tpl2 = NormalTemplate.from_json(tpl.to_json())
        npt.assert_allclose(tpl2.normals, tpl.normals)
        npt.assert_allclose(tpl2.thresholds, tpl.thresholds)
        assert tpl2.nose_bridge_indices == tpl.nose_bridge_indices

    def test_shipped_template_matches_generator(self, canonical_layout):
        _, tpl = canonical_layout
        shipped = default_normal_template()
        npt.assert_allclose(shipped.normals, tpl.normals, atol=1e-12)
        npt.assert_allclose(shipped.thresholds, tpl.thresholds, atol=1e-12)
        assert shipped.nose_bridge_indices == NOSE_BRIDGE_INDICES_98


class TestRigMasks:
    def test_frontal_view_shows_frontal_landmarks(self, cfg, canonical_layout):
        _, tpl = canonical_layout
        rig = make_default_rig()
        masks = rig_masks(rig, tpl, cfg)
        frontal = next(m for p, m in zip(rig, masks) if p.alpha == 0.0 and p.beta == 0.0)
        forward_facing = (tpl.normals @ np.array([0.0, 0.0, -1.0])) > tpl.thresholds
        npt.assert_array_equal(frontal, forward_facing)
        assert frontal.sum() > 60  # eyes, nose, mouth, most of the brow/jaw

    def test_mirrored_views_swap_masks_under_permutation(self, cfg, canonical_layout):
        _, tpl = canonical_layout
        perm = mirror_permutation_98()
        rig = make_default_rig()
        masks = rig_masks(rig, tpl, cfg)
        by_angles = {(p.alpha, p.beta): m for p, m in zip(rig, masks)}
        for (a, b), m in by_angles.items():
            npt.assert_array_equal(by_angles[(-a, b)], m[perm], err_msg=f"views +-{a}, {b}")

    def test_every_landmark_liftable_from_default_rig(self, cfg, canonical_layout):
        _, tpl = canonical_layout
        counts = np.stack(rig_masks(make_default_rig(), tpl, cfg)).sum(axis=0)
        assert counts.min() >= 2

    def test_rejects_out_of_bounds_pose(self, canonical_layout):
        _, tpl = canonical_layout
        small = CameraSpaceConfig(A=10.0, B=10.0, Gamma=10.0)
        with pytest.raises(ValidationError):
            rig_masks(make_default_rig(), tpl, small)
