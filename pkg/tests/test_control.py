import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deliverysim.control import (
    Mission,
    MissionStatus,
    PidController,
    mission_step,
    pid_step,
    pure_pursuit,
)
from deliverysim.geom import Pose2D


class TestPid:
    def test_zero_error_zero_output(self):
        c = PidController(kp=1.0, ki=0.5, kd=0.1)
        out, _ = pid_step(c, 1.0, 1.0, 0.1)
        assert out == 0.0

    def test_proportional_only(self):
        c = PidController(kp=2.0)
        out, _ = pid_step(c, 1.0, 0.5, 0.1)
        assert out == pytest.approx(1.0)

    def test_matches_difference_equation_oracle(self):
        # Independently coded closed-loop recurrence: PID driving a
        # first-order plant y' = (gain*u - y)/tau.
        kp, ki, kd = 1.2, 0.6, 0.05
        out_lim, i_lim = 1.0, 0.4
        gain, tau, dt = 2.0, 0.5, 0.02
        setpoint = 0.8

        def oracle(n):
            y, i_term, prev_e = 0.0, 0.0, 0.0
            ys, us = [], []
            for _ in range(n):
                e = setpoint - y
                i_term = max(-i_lim, min(i_lim, i_term + ki * e * dt))
                d = kd * (e - prev_e) / dt
                u = max(-out_lim, min(out_lim, kp * e + i_term + d))
                prev_e = e
                y = y + (gain * u - y) * dt / tau
                ys.append(y)
                us.append(u)
            return ys, us

        c = PidController(kp=kp, ki=ki, kd=kd, out_min=-out_lim, out_max=out_lim,
                          i_min=-i_lim, i_max=i_lim)
        y = 0.0
        want_ys, want_us = oracle(500)
        for k in range(500):
            u, c = pid_step(c, setpoint, y, dt)
            y = y + (gain * u - y) * dt / tau
            assert abs(u - want_us[k]) < 1e-9
            assert abs(y - want_ys[k]) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=60),
           st.floats(0.001, 1.0))
    def test_output_and_integrator_always_clamped(self, errors, dt):
        c = PidController(kp=3.0, ki=2.0, kd=0.5, out_min=-1.0, out_max=1.0,
                          i_min=-0.5, i_max=0.5)
        for e in errors:
            out, c = pid_step(c, e, 0.0, dt)
            assert -1.0 <= out <= 1.0
            assert -0.5 <= c.i_term <= 0.5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=0, max_size=30),
           st.floats(-5, 5))
    def test_pure_proportional_is_memoryless(self, history, final_error):
        c = PidController(kp=1.5, ki=0.0, kd=0.0, out_min=-100, out_max=100)
        for e in history:
            _, c = pid_step(c, e, 0.0, 0.05)
        out, _ = pid_step(c, final_error, 0.0, 0.05)
        fresh = PidController(kp=1.5, ki=0.0, kd=0.0, out_min=-100, out_max=100)
        want, _ = pid_step(fresh, final_error, 0.0, 0.05)
        assert out == want

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            pid_step(PidController(kp=1.0), 0.0, 0.0, 0.0)


class TestPurePursuit:
    def test_straight_path_dead_ahead(self):
        path = [Pose2D(float(x), 0.0, 0.0) for x in range(10)]
        twist = pure_pursuit(path, Pose2D(0, 0, 0), lookahead=1.5, cruise=1.0)
        assert twist.omega == 0.0
        assert twist.v > 0

    def test_curvature_formula(self):
        # target in the body frame at (2, 0.5): kappa = 2*0.5/(L_d^2) applied to v
        target = Pose2D(2.0, 0.5, 0.0)
        path = [Pose2D(), target]
        ld = math.hypot(2.0, 0.5)
        twist = pure_pursuit([target], Pose2D(), lookahead=1.0, cruise=1.0,
                             slow_radius=1e-9)
        kappa = 2 * 0.5 / ld ** 2
        assert twist.omega / twist.v == pytest.approx(kappa)

    def test_turns_toward_lateral_offset(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pose = Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
            target = Pose2D(*rng.uniform(-5, 5, 2), 0.0)
            c, s = math.cos(-pose.theta), math.sin(-pose.theta)
            by = s * (target.x - pose.x) + c * (target.y - pose.y)
            ld = math.hypot(target.x - pose.x, target.y - pose.y)
            if ld < 1e-6:
                continue
            twist = pure_pursuit([target], pose, lookahead=ld * 0.9, cruise=1.0,
                                 slow_radius=1e-9)
            assert math.copysign(1.0, twist.omega) == math.copysign(1.0, by) \
                or twist.omega == by == 0.0

    def test_circular_path_cross_error_bound(self):
        # Geometric bound oracle: steady-state cross-track error of pure
        # pursuit on a circle is at most lookahead^2 / (2 R).
        radius, lookahead, cruise, dt = 5.0, 1.5, 1.0, 0.02
        angles = np.linspace(0, 6 * math.pi, 2000)  # three laps worth of path
        path = [Pose2D(radius * math.cos(a), radius * math.sin(a), 0.0)
                for a in angles]
        pose = Pose2D(radius, 0.0, math.pi / 2)  # on the circle, tangent heading
        errs = []
        t = 0.0
        for _ in range(int(40.0 / dt)):
            twist = pure_pursuit(path, pose, lookahead, cruise, slow_radius=1e-9)
            theta = pose.theta + twist.omega * dt
            pose = Pose2D(pose.x + twist.v * math.cos(theta) * dt,
                          pose.y + twist.v * math.sin(theta) * dt, theta)
            t += dt
            if t > 10.0:
                errs.append(abs(math.hypot(pose.x, pose.y) - radius))
        assert max(errs) <= lookahead ** 2 / (2 * radius) + 1e-6


class TestMission:
    def test_single_waypoint_done(self):
        m = Mission(waypoints=(Pose2D(1.0, 0.0, 0.0),), goal_tol_xy=0.5)
        status = mission_step(m, Pose2D(0.8, 0.1, 0.0))
        assert status.done
        assert status.twist.v == 0.0 and status.twist.omega == 0.0

    def test_waypoint_advances(self):
        m = Mission(waypoints=(Pose2D(1.0, 0.0, 0.0), Pose2D(2.0, 0.0, 0.0)),
                    goal_tol_xy=0.3)
        status = mission_step(m, Pose2D(0.9, 0.0, 0.0), active=0)
        assert status.active_waypoint == 1
        assert not status.done

    def test_emits_tracking_twist(self):
        m = Mission(waypoints=(Pose2D(5.0, 0.0, 0.0),))
        status = mission_step(m, Pose2D(0.0, 0.0, 0.0))
        assert isinstance(status, MissionStatus)
        assert status.twist.v > 0

    def test_needs_waypoints(self):
        with pytest.raises(ValueError):
            Mission(waypoints=())
