import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial.transform import Rotation

from flk.errors import DegenerateRotationError, ValidationError
from flk.losses import (
    MultiViewPrediction,
    PoseTarget,
    cholesky_to_covariance,
    geodesic_loss,
    l1_loss,
    lll_2d,
    mse_loss,
    multiframe_loss,
    multiview_loss,
)

from conftest import random_rotation


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        xp, xm = x.copy().reshape(-1), x.copy().reshape(-1)
        xp[k] += h
        xm[k] -= h
        g.reshape(-1)[k] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


class TestLLL:
    def test_zero_residual_identity_covariance(self):
        value, _, _ = lll_2d([3.0, 4.0], [3.0, 4.0], [0.0, 0.0, 0.0])
        assert value == 0.0

    def test_covariance_scaling_closed_form(self):
        r = np.array([1.3, -0.4])
        params = np.array([0.2, 0.5, -0.1])
        v1, _, _ = lll_2d(r, [0.0, 0.0], params)
        # Sigma -> 4 Sigma means L -> 2 L: raw diagonals shift by ln 2, the
        # off-diagonal doubles.
        params4 = np.array([params[0] + np.log(2.0), 2.0 * params[1], params[2] + np.log(2.0)])
        v4, _, _ = lll_2d(r, [0.0, 0.0], params4)
        L = np.array([[np.exp(params[0]), 0.0], [params[1], np.exp(params[2])]])
        sigma = L @ L.T
        maha = np.sqrt(r @ np.linalg.solve(sigma, r))
        assert v4 - v1 == pytest.approx(0.5 * np.log(16.0) - 0.5 * maha, rel=1e-12)

    def test_value_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            pred, target = rng.normal(size=2), rng.normal(size=2)
            params = rng.uniform(-1, 1, size=3)
            value, _, _ = lll_2d(pred, target, params)
            sigma = cholesky_to_covariance(params[None])[0]
            r = pred - target
            expected = 0.5 * np.log(np.linalg.det(sigma)) + np.sqrt(r @ np.linalg.solve(sigma, r))
            assert value == pytest.approx(expected, rel=1e-10)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            target = rng.normal(scale=3.0, size=2)
            r = rng.normal(scale=2.0, size=2)
            if np.linalg.norm(r) < 0.05:
                r += 0.1
            pred = target + r
            params = rng.uniform(-1, 1, size=3)
            _, g_pred, g_params = lll_2d(pred, target, params)
            npt.assert_allclose(g_pred, fd_grad(lambda p: lll_2d(p, target, params)[0], pred),
                                rtol=1e-5, atol=1e-7)
            npt.assert_allclose(g_params, fd_grad(lambda q: lll_2d(pred, target, q)[0], params),
                                rtol=1e-5, atol=1e-7)

    def test_covariance_is_spd_for_any_finite_params(self):
        rng = np.random.default_rng(3)
        params = rng.uniform(-5, 5, size=(500, 3))
        sigmas = cholesky_to_covariance(params)
        eigs = np.linalg.eigvalsh(sigmas)
        assert eigs.min() > 0.0
        npt.assert_allclose(sigmas, np.transpose(sigmas, (0, 2, 1)))


class TestGeodesic:
    def test_identical_rotations(self):
        R = random_rotation(np.random.default_rng(0))
        assert geodesic_loss(R, R) == 0.0

    def test_half_turn_about_z(self):
        Rz = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
        assert geodesic_loss(np.eye(3), Rz) == pytest.approx(np.pi, abs=1e-15)

    def test_matches_quaternion_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            R1, R2 = random_rotation(rng), random_rotation(rng)
            q1 = Rotation.from_matrix(R1).as_quat()
            q2 = Rotation.from_matrix(R2).as_quat()
            expected = 2.0 * np.arccos(min(1.0, abs(float(q1 @ q2))))
            assert abs(geodesic_loss(R1, R2) - expected) < 1e-9

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            R1, R2 = random_rotation(rng), random_rotation(rng)
            d = geodesic_loss(R1, R2)
            assert 0.0 <= d <= np.pi
            assert d == pytest.approx(geodesic_loss(R2, R1), abs=1e-12)

    def test_rejects_non_rotation(self):
        with pytest.raises(DegenerateRotationError):
            geodesic_loss(np.eye(3) * 1.5, np.eye(3))


class TestMseL1:
    def test_identical_inputs(self):
        x = np.arange(6.0).reshape(2, 3)
        assert mse_loss(x, x)[0] == 0.0
        assert l1_loss(x, x)[0] == 0.0

    def test_scalar_examples(self):
        assert mse_loss(np.array(0.0), np.array(2.0))[0] == 4.0
        assert l1_loss(np.array(0.0), np.array(2.0))[0] == 2.0

    def test_gradients(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        _, g = mse_loss(a, b)
        npt.assert_allclose(g, fd_grad(lambda x: mse_loss(x, b)[0], a), rtol=1e-6, atol=1e-9)
        _, g1 = l1_loss(a, b)
        npt.assert_allclose(g1, fd_grad(lambda x: l1_loss(x, b)[0], a), rtol=1e-5, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            mse_loss(np.zeros(3), np.zeros(4))


def _random_instance(rng, n=5):
    target = PoseTarget(rotation=random_rotation(rng), delta_t=rng.normal(size=3),
                        landmarks3d=rng.normal(size=(n, 3)),
                        landmarks2d=rng.normal(scale=2.0, size=(n, 2)),
                        mask=rng.uniform(size=n) < 0.7)
    pred = MultiViewPrediction(landmarks3d=rng.normal(size=(n, 3)), delta_t=rng.normal(size=3),
                               rotation=random_rotation(rng),
                               landmarks25d=target.landmarks2d + rng.normal(scale=2.0, size=(n, 2)),
                               chol=rng.uniform(-1, 1, size=(n, 3)))
    return pred, target


class TestMultiViewLoss:
    def test_zero_at_target_with_identity_covariance(self):
        rng = np.random.default_rng(7)
        n = 4
        R = random_rotation(rng)
        target = PoseTarget(rotation=R, delta_t=rng.normal(size=3),
                            landmarks3d=rng.normal(size=(n, 3)),
                            landmarks2d=rng.normal(size=(n, 2)), mask=np.ones(n, dtype=bool))
        pred = MultiViewPrediction(landmarks3d=target.landmarks3d, delta_t=target.delta_t,
                                   rotation=R, landmarks25d=target.landmarks2d,
                                   chol=np.zeros((n, 3)))
        assert multiview_loss(pred, target).total == 0.0

    def test_rotation_perturbation_only_moves_geodesic_term(self):
        rng = np.random.default_rng(8)
        pred, target = _random_instance(rng)
        base = multiview_loss(pred, target)
        bumped = MultiViewPrediction(landmarks3d=pred.landmarks3d, delta_t=pred.delta_t,
                                     rotation=random_rotation(rng),
                                     landmarks25d=pred.landmarks25d, chol=pred.chol)
        res = multiview_loss(bumped, target)
        for term in ("mse_landmarks3d", "mse_delta_t", "lll_landmarks25d"):
            assert res.terms[term] == base.terms[term]
        assert res.terms["geodesic_rotation"] != base.terms["geodesic_rotation"]

    def test_total_is_sum_of_terms(self):
        pred, target = _random_instance(np.random.default_rng(9))
        res = multiview_loss(pred, target)
        assert res.total == pytest.approx(sum(res.terms.values()), rel=1e-12)

    def test_shape_mismatch(self):
        pred, target = _random_instance(np.random.default_rng(10))
        bad = PoseTarget(rotation=target.rotation, delta_t=target.delta_t,
                         landmarks3d=target.landmarks3d[:3], landmarks2d=target.landmarks2d[:3],
                         mask=target.mask[:3])
        with pytest.raises(ValidationError):
            multiview_loss(pred, bad)


class TestMultiFrameLoss:
    def test_all_masked_out_is_zero(self):
        rng = np.random.default_rng(11)
        value, g_pred, g_chol = multiframe_loss(rng.normal(size=(4, 2)), rng.normal(size=(4, 3)),
                                                rng.normal(size=(4, 2)), np.zeros(4, dtype=bool))
        assert value == 0.0
        assert not g_pred.any() and not g_chol.any()

    def test_single_landmark_equals_lll(self):
        rng = np.random.default_rng(12)
        pred, target = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        chol = rng.uniform(-1, 1, size=(3, 3))
        mask = np.array([False, True, False])
        value, _, _ = multiframe_loss(pred, chol, target, mask)
        assert value == pytest.approx(lll_2d(pred[1], target[1], chol[1])[0], rel=1e-12)

    def test_masked_entries_do_not_matter(self):
        rng = np.random.default_rng(13)
        pred, target = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        chol = rng.uniform(-1, 1, size=(5, 3))
        mask = np.array([True, False, True, False, True])
        v1, g1, c1 = multiframe_loss(pred, chol, target, mask)
        target2 = target.copy()
        target2[~mask] += 1e6
        v2, g2, c2 = multiframe_loss(pred, chol, target2, mask)
        assert v1 == v2
        npt.assert_array_equal(g1, g2)
        npt.assert_array_equal(c1, c2)
