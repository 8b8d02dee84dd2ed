import math

import numpy as np
import pytest

from deliverysim.geom import Extrinsics3D, Pose2D, Twist2D
from deliverysim.perception import (
    DEFAULT_WHITELIST,
    CameraIntrinsics,
    Detection,
    ObstaclePoint,
    filter_classes,
    parse_detection_log,
    project_obstacle,
    safety_gate,
    write_detection_log,
)

CAM = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0)


def det(cls, conf=0.9, depth=2.0, stamp=0.0, bbox=(300.0, 220.0, 40.0, 40.0)):
    return Detection(stamp=stamp, class_name=cls, confidence=conf, bbox=bbox,
                     depth=depth)


class TestFilterClasses:
    def test_whitelist_is_the_published_set(self):
        assert DEFAULT_WHITELIST == {"person", "dog", "cat", "duck",
                                     "scooter", "bicyclist"}

    def test_car_dropped(self):
        kept = filter_classes([det("person"), det("car"), det("duck")])
        assert [d.class_name for d in kept] == ["person", "duck"]

    def test_empty_input(self):
        assert filter_classes([]) == []

    def test_confidence_threshold_inclusive(self):
        dets = [det("person", conf=0.4), det("dog", conf=0.5), det("cat", conf=0.9)]
        kept = filter_classes(dets, min_conf=0.5)
        assert [d.class_name for d in kept] == ["dog", "cat"]

    def test_case_insensitive(self):
        kept = filter_classes([det("Person"), det("DOG")])
        assert len(kept) == 2

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        names = ["person", "car", "duck", "tree", "scooter", "Dog"]
        dets = [det(str(rng.choice(names)), conf=float(rng.uniform(0, 1)))
                for _ in range(50)]
        once = filter_classes(dets, min_conf=0.3)
        twice = filter_classes(once, min_conf=0.3)
        assert once == twice


class TestProjectObstacle:
    def test_optical_axis_straight_ahead(self):
        d = det("person", depth=2.0, bbox=(CAM.cx - 20, CAM.cy - 20, 40.0, 40.0))
        ob = project_obstacle(d, CAM, Extrinsics3D(), Pose2D())
        assert ob.position == pytest.approx((2.0, 0.0))

    def test_rotated_base(self):
        d = det("person", depth=2.0, bbox=(CAM.cx - 20, CAM.cy - 20, 40.0, 40.0))
        ob = project_obstacle(d, CAM, Extrinsics3D(), Pose2D(0, 0, math.pi / 2))
        assert ob.position[0] == pytest.approx(0.0, abs=1e-12)
        assert ob.position[1] == pytest.approx(2.0)

    def test_missing_depth_raises(self):
        d = Detection(0.0, "person", 0.9, (0, 0, 10, 10), depth=None)
        with pytest.raises(ValueError, match="depth"):
            project_obstacle(d, CAM, Extrinsics3D(), Pose2D())

    def test_matches_matrix_chain_oracle(self):
        # Homogeneous 4x4 chain: map<-base (planar) times base<-camera.
        rng = np.random.default_rng(7)
        for _ in range(100):
            cam = CameraIntrinsics(fx=rng.uniform(300, 900), fy=rng.uniform(300, 900),
                                   cx=rng.uniform(200, 500), cy=rng.uniform(150, 350))
            ext = Extrinsics3D(*rng.uniform(-1, 1, 3), *rng.uniform(-0.6, 0.6, 3))
            base = Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
            d = det("dog", depth=float(rng.uniform(0.5, 8)),
                    bbox=tuple(rng.uniform(0, 300, 4)))

            uc = d.bbox[0] + d.bbox[2] / 2
            vc = d.bbox[1] + d.bbox[3] / 2
            p_cam = np.array([d.depth,
                              -(uc - cam.cx) / cam.fx * d.depth,
                              -(vc - cam.cy) / cam.fy * d.depth, 1.0])
            t_base_cam = np.eye(4)
            t_base_cam[:3, :3] = ext.rotation()
            t_base_cam[:3, 3] = [ext.tx, ext.ty, ext.tz]
            c, s = math.cos(base.theta), math.sin(base.theta)
            t_map_base = np.array([[c, -s, 0, base.x],
                                   [s, c, 0, base.y],
                                   [0, 0, 1, 0],
                                   [0, 0, 0, 1.0]])
            want = (t_map_base @ t_base_cam @ p_cam)[:2]

            ob = project_obstacle(d, cam, ext, base)
            np.testing.assert_allclose(ob.position, want, atol=1e-9)

    def test_frame_consistency(self):
        # Projecting at a composed base pose equals projecting at the inner
        # pose and re-expressing the obstacle in the outer frame.
        from deliverysim.geom import se2_apply, se2_compose

        rng = np.random.default_rng(9)
        for _ in range(50):
            inner = Pose2D(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
            outer = Pose2D(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
            ext = Extrinsics3D(*rng.uniform(-1, 1, 3), *rng.uniform(-0.5, 0.5, 3))
            d = det("cat", depth=float(rng.uniform(0.5, 5)))
            direct = project_obstacle(d, CAM, ext, se2_compose(outer, inner))
            via = project_obstacle(d, CAM, ext, inner)
            moved = se2_apply(outer, np.array(via.position))
            np.testing.assert_allclose(direct.position, moved, atol=1e-9)


class TestSafetyGate:
    def test_no_obstacles_passthrough(self):
        cmd = Twist2D(1.0, 0.2)
        assert safety_gate([], Pose2D(), cmd, 2.0, 0.5) == cmd

    def test_obstacle_ahead_stops(self):
        ob = ObstaclePoint((1.0, 0.0), "person", 0.0)
        out = safety_gate([ob], Pose2D(), Twist2D(1.0, 0.0), 2.0, 0.5)
        assert out == Twist2D(0.0, 0.0)

    def test_obstacle_behind_ignored(self):
        ob = ObstaclePoint((-1.0, 0.0), "person", 0.0)
        cmd = Twist2D(1.0, 0.0)
        assert safety_gate([ob], Pose2D(), cmd, 2.0, 0.5) == cmd

    def test_rectangle_follows_heading(self):
        # robot facing +y: obstacle at (0, 1) is dead ahead
        ob = ObstaclePoint((0.0, 1.0), "person", 0.0)
        out = safety_gate([ob], Pose2D(0, 0, math.pi / 2), Twist2D(1.0, 0.0), 2.0, 0.5)
        assert out == Twist2D(0.0, 0.0)

    def test_outside_corridor_ignored(self):
        ob = ObstaclePoint((1.0, 0.9), "person", 0.0)
        cmd = Twist2D(1.0, 0.0)
        assert safety_gate([ob], Pose2D(), cmd, 2.0, 0.5) == cmd

    def test_all_or_nothing(self):
        rng = np.random.default_rng(1)
        cmd = Twist2D(0.7, -0.3)
        for _ in range(100):
            obs = [ObstaclePoint(tuple(rng.uniform(-3, 3, 2)), "person", 0.0)
                   for _ in range(rng.integers(0, 4))]
            out = safety_gate(obs, Pose2D(), cmd, 1.5, 0.4)
            assert out == cmd or out == Twist2D(0.0, 0.0)


class TestDetectionLog:
    def test_round_trip(self, tmp_path):
        dets = [det("person", conf=0.75, depth=2.5, stamp=1.0),
                Detection(2.0, "duck", 0.5, (1.0, 2.0, 3.0, 4.0), depth=None)]
        path = tmp_path / "dets.csv"
        write_detection_log(dets, path)
        back = parse_detection_log(path.read_text())
        assert back == dets

    def test_malformed_line_reports_position(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_detection_log("stamp,class_name,confidence,u,v,w,h,depth\n1,2,3\n")
