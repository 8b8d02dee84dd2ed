import math

import numpy as np
import pytest

from deliverysim.vehicle import (
    EncoderReading,
    VehicleParams,
    VehicleState,
    read_encoders,
    step_bicycle,
)

LAGLESS = VehicleParams(speed_tau=0.0, steer_tau=0.0)


def drive(state, commands, dt, params):
    for speed_set, steer_set in commands:
        state = step_bicycle(state, speed_set, steer_set, dt, params)
    return state


class TestStepBicycle:
    def test_straight_line(self):
        s = step_bicycle(VehicleState(), 1.0, 0.0, 1.0, LAGLESS)
        assert (s.pose.x, s.pose.y, s.pose.theta) == (1.0, 0.0, 0.0)

    def test_tan_45_degrees_turn_rate(self):
        p = VehicleParams(wheelbase=1.0, max_steer=1.0, speed_tau=0, steer_tau=0)
        dt = 1e-3
        s = step_bicycle(VehicleState(), 1.0, math.pi / 4, dt, p)
        assert (s.pose.theta / dt) == pytest.approx(1.0, rel=1e-12)

    def test_constant_steer_traces_circle(self):
        # Closed-form oracle: radius L/tan(delta), center left of the start pose.
        p = VehicleParams(wheelbase=1.0, max_steer=1.0, speed_tau=0, steer_tau=0)
        delta = math.radians(30.0)
        radius = p.wheelbase / math.tan(delta)
        center = np.array([0.0, radius])
        dt = 1e-4
        n = int(round(2 * math.pi * radius / 1.0 / dt))  # one revolution at 1 m/s
        s = VehicleState()
        worst = 0.0
        for i in range(n):
            s = step_bicycle(s, 1.0, delta, dt, p)
            if i % 500 == 0:
                r = np.hypot(s.pose.x - center[0], s.pose.y - center[1])
                worst = max(worst, abs(r - radius))
        end_err = math.hypot(s.pose.x, s.pose.y)
        assert worst < 1e-3
        assert end_err < 1e-3

    def test_refinement_slope(self):
        # Final-pose error vs dt on a log-log fit must show at least first order.
        p = LAGLESS
        cmds = [(1.0, 0.3), (0.8, -0.4), (1.2, 0.1)]

        def final_pose(dt):
            s = VehicleState()
            for v, d in cmds:
                for _ in range(int(round(0.5 / dt))):
                    s = step_bicycle(s, v, d, dt, p)
            return np.array([s.pose.x, s.pose.y, s.pose.theta])

        ref = final_pose(1e-5)
        dts = [0.04, 0.02, 0.01, 0.005, 0.0025]
        errs = [np.linalg.norm(final_pose(dt) - ref) for dt in dts]
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope >= 0.9

    def test_kinematic_reversibility(self):
        rng = np.random.default_rng(8)
        cmds = [(float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-0.5, 0.5)))
                for _ in range(120)]
        s = drive(VehicleState(), cmds, 0.02, LAGLESS)
        back = [(-v, d) for v, d in reversed(cmds)]
        s = drive(s, back, 0.02, LAGLESS)
        assert math.hypot(s.pose.x, s.pose.y) < 1e-6

    def test_steer_clamped(self):
        rng = np.random.default_rng(1)
        p = VehicleParams()
        s = VehicleState()
        for _ in range(500):
            s = step_bicycle(s, float(rng.uniform(-5, 5)), float(rng.uniform(-3, 3)),
                             0.02, p)
            assert abs(s.steer_delta) <= p.max_steer
            assert abs(s.speed) <= p.max_speed

    def test_lag_relaxes_toward_setpoint(self):
        p = VehicleParams(speed_tau=0.5, steer_tau=0.0)
        s = step_bicycle(VehicleState(), 1.0, 0.0, 0.5, p)
        assert s.speed == pytest.approx(1.0 - math.exp(-1.0))


class TestEncoders:
    def test_no_motion_no_ticks(self):
        s = VehicleState()
        r0 = read_encoders(s, s, LAGLESS, 0.0)
        r1 = read_encoders(s, s, LAGLESS, 1.0)
        assert (r0.drive_ticks, r0.steer_ticks) == (r1.drive_ticks, r1.steer_ticks)

    def test_full_revolution(self):
        p = VehicleParams(ticks_per_rev=1024)
        before = VehicleState()
        after = VehicleState(cum_drive_angle=2 * math.pi)
        assert read_encoders(before, after, p, 1.0).drive_ticks \
            - read_encoders(before, before, p, 0.0).drive_ticks == 1024

    def test_cumulative_ticks_track_angle(self):
        # Exact accumulation oracle: ticks never drift more than one tick
        # from the continuous angle.
        rng = np.random.default_rng(3)
        p = VehicleParams(speed_tau=0, steer_tau=0)
        s = VehicleState()
        for i in range(100):
            s = step_bicycle(s, float(rng.uniform(-2, 2)), float(rng.uniform(-0.5, 0.5)),
                             0.05, p)
            r = read_encoders(s, s, p, i * 0.05)
            exact = s.cum_drive_angle / (2 * math.pi) * p.ticks_per_rev
            assert abs(r.drive_ticks - exact) <= 1.0

    def test_reading_is_dataclass_with_stamp(self):
        r = EncoderReading(drive_ticks=5, steer_ticks=-2, stamp=1.5)
        assert r.stamp == 1.5
