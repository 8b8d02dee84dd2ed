"""Rear-axle bicycle kinematics with first-order actuator lag and encoders.

The platform's chain-steered front axle is abstracted into a single virtual
front wheel; the steering mechanism's sluggishness shows up only as the
`steer_tau` lag constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .geom import Pose2D, normalize_angle


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 1.0
    max_speed: float = 2.0
    max_steer: float = 0.95         # rad, < pi/2
    speed_tau: float = 0.3          # s; 0 disables the lag
    steer_tau: float = 0.15
    ticks_per_rev: int = 1024
    wheel_radius: float = 0.15

    def __post_init__(self) -> None:
        if min(self.wheelbase, self.max_speed, self.max_steer,
               self.ticks_per_rev, self.wheel_radius) <= 0:
            raise ValueError("vehicle parameters must be positive")
        if self.speed_tau < 0 or self.steer_tau < 0:
            raise ValueError("lag constants must be non-negative")
        if self.max_steer >= math.pi / 2:
            raise ValueError(f"max_steer must be below pi/2, got {self.max_steer}")


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D = field(default_factory=Pose2D)
    speed: float = 0.0
    steer_delta: float = 0.0
    cum_drive_angle: float = 0.0    # total drive-shaft rotation, rad
    cum_steer_angle: float = 0.0    # steering-shaft angle tracked by the encoder, rad


@dataclass(frozen=True)
class EncoderReading:
    drive_ticks: int
    steer_ticks: int
    stamp: float


def _relax(value: float, setpoint: float, tau: float, dt: float) -> float:
    if tau <= 0.0:
        return setpoint
    return setpoint + (value - setpoint) * math.exp(-dt / tau)


def step_bicycle(s: VehicleState, speed_set: float, steer_set: float,
                 dt: float, p: VehicleParams) -> VehicleState:
    """Advance one fixed step: relax actuators, clamp, integrate the pose.

    The pose update uses the mid-step heading (one explicit evaluation);
    this keeps the step time-reversible for lag-free command sequences,
    which plain forward Euler is not.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    speed = _relax(s.speed, speed_set, p.speed_tau, dt)
    steer = _relax(s.steer_delta, steer_set, p.steer_tau, dt)
    speed = max(-p.max_speed, min(p.max_speed, speed))
    steer = max(-p.max_steer, min(p.max_steer, steer))

    omega = speed * math.tan(steer) / p.wheelbase
    half_turn = 0.5 * omega * dt
    heading_mid = s.pose.theta + half_turn
    pose = Pose2D(
        s.pose.x + speed * math.cos(heading_mid) * dt,
        s.pose.y + speed * math.sin(heading_mid) * dt,
        normalize_angle(heading_mid + half_turn),
    )
    return VehicleState(
        pose=pose,
        speed=speed,
        steer_delta=steer,
        cum_drive_angle=s.cum_drive_angle + speed / p.wheel_radius * dt,
        cum_steer_angle=steer,
    )


def read_encoders(prev: VehicleState, next_state: VehicleState,
                  p: VehicleParams, stamp: float) -> EncoderReading:
    """Quantize cumulative shaft angles into absolute tick counts.

    Ticks floor the cumulative angle, so per-step quantization error is
    carried forward rather than lost.
    """
    drive_ticks = math.floor(next_state.cum_drive_angle / (2.0 * math.pi) * p.ticks_per_rev)
    steer_ticks = math.floor(next_state.cum_steer_angle / (2.0 * math.pi) * p.ticks_per_rev)
    return EncoderReading(drive_ticks=drive_ticks, steer_ticks=steer_ticks, stamp=stamp)


def with_pose(s: VehicleState, pose: Pose2D) -> VehicleState:
    return replace(s, pose=pose)
