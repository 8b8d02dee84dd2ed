import math

import numpy as np
import pytest

from deliverysim.geom import (
    Extrinsics3D,
    Pose2D,
    extrinsics_compose,
    extrinsics_inverse,
    normalize_angle,
    se2_compose,
    se2_inverse,
    transform_point,
)


def se2_matrix(p: Pose2D) -> np.ndarray:
    """Independent homogeneous-matrix oracle."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]])


def angles_close(a: float, b: float, tol: float) -> bool:
    return abs(math.remainder(a - b, 2.0 * math.pi)) <= tol


def rpy_matrix(e: Extrinsics3D) -> np.ndarray:
    """Oracle rotation built element-by-element from the yaw-pitch-roll product."""
    cr, sr = math.cos(e.roll), math.sin(e.roll)
    cp, sp = math.cos(e.pitch), math.sin(e.pitch)
    cy, sy = math.cos(e.yaw), math.sin(e.yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


class TestNormalizeAngle:
    def test_zero(self):
        assert normalize_angle(0.0) == 0.0

    def test_three_pi(self):
        assert normalize_angle(3 * math.pi) == pytest.approx(math.pi, abs=1e-12)

    def test_minus_pi_maps_to_plus_pi(self):
        assert normalize_angle(-math.pi) == pytest.approx(math.pi, abs=0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            normalize_angle(math.nan)
        with pytest.raises(ValueError):
            normalize_angle(math.inf)

    def test_congruent_mod_two_pi(self):
        rng = np.random.default_rng(7)
        for a in rng.uniform(-50, 50, 200):
            r = normalize_angle(float(a))
            assert -math.pi < r <= math.pi
            assert angles_close(r, float(a), 1e-12)


class TestSe2:
    def test_identity_compose(self):
        p = Pose2D(1.5, -2.0, 0.7)
        q = se2_compose(Pose2D(), p)
        assert (q.x, q.y, q.theta) == (p.x, p.y, p.theta)

    def test_quarter_turn(self):
        q = se2_compose(Pose2D(1, 0, math.pi / 2), Pose2D(1, 0, 0))
        assert q.x == pytest.approx(1.0, abs=1e-12)
        assert q.y == pytest.approx(1.0, abs=1e-12)
        assert q.theta == pytest.approx(math.pi / 2, abs=1e-12)

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            a = Pose2D(*rng.uniform(-10, 10, 2), rng.uniform(-math.pi, math.pi))
            b = Pose2D(*rng.uniform(-10, 10, 2), rng.uniform(-math.pi, math.pi))
            got = se2_compose(a, b)
            m = se2_matrix(a) @ se2_matrix(b)
            assert abs(got.x - m[0, 2]) < 1e-12
            assert abs(got.y - m[1, 2]) < 1e-12
            assert angles_close(got.theta, math.atan2(m[1, 0], m[0, 0]), 1e-12)

    def test_associative(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b, c = (Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
                       for _ in range(3))
            left = se2_compose(se2_compose(a, b), c)
            right = se2_compose(a, se2_compose(b, c))
            assert abs(left.x - right.x) < 1e-9
            assert abs(left.y - right.y) < 1e-9
            assert angles_close(left.theta, right.theta, 1e-9)

    def test_inverse_gives_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
            q = se2_compose(p, se2_inverse(p))
            assert abs(q.x) < 1e-9 and abs(q.y) < 1e-9
            assert angles_close(q.theta, 0.0, 1e-9)

    def test_theta_normalized_by_constructor(self):
        assert Pose2D(0, 0, 5 * math.pi).theta == pytest.approx(math.pi)


class TestExtrinsics:
    def test_zero_is_identity(self):
        p = transform_point(Extrinsics3D(), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(p, [1.0, 2.0, 3.0], atol=0)

    def test_imu_mounted_below_lidar(self):
        # Pure vertical offset maps the upper sensor's origin straight down.
        h = 0.3
        e = Extrinsics3D(0, 0, -h, 0, 0, 0)
        p = transform_point(e, np.zeros(3))
        np.testing.assert_allclose(p, [0.0, 0.0, -h], atol=0)

    def test_quarter_yaw(self):
        p = transform_point(Extrinsics3D(yaw=math.pi / 2), np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(p, [0.0, 1.0, 0.0], atol=1e-15)

    def test_rotation_matches_rpy_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            e = Extrinsics3D(*rng.uniform(-2, 2, 3), *rng.uniform(-1.4, 1.4, 3))
            np.testing.assert_allclose(e.rotation(), rpy_matrix(e), atol=1e-12)

    def test_preserves_distances(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            e = Extrinsics3D(*rng.uniform(-2, 2, 3), *rng.uniform(-1.4, 1.4, 3))
            p, q = rng.uniform(-5, 5, (2, 3))
            d0 = np.linalg.norm(p - q)
            d1 = np.linalg.norm(transform_point(e, p) - transform_point(e, q))
            assert abs(d0 - d1) < 1e-9

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            e = Extrinsics3D(*rng.uniform(-2, 2, 3), *rng.uniform(-1.4, 1.4, 3))
            ident = extrinsics_compose(e, extrinsics_inverse(e))
            np.testing.assert_allclose(ident.translation(), np.zeros(3), atol=1e-12)
            np.testing.assert_allclose(ident.rotation(), np.eye(3), atol=1e-12)
