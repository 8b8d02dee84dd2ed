"""Planar and spatial rigid-body math shared by the whole stack.

Conventions: poses are SE(2) with heading in (-pi, pi]; 3D extrinsics rotate
intrinsically z-y-x (yaw, then pitch, then roll) and then translate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]; a tie at -pi resolves to +pi."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True)
class Pose2D:
    """Planar pose of the rear-axle body frame in some parent frame."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(frozen=True)
class Twist2D:
    """Body-frame velocity command: linear along x, angular about z."""

    v: float = 0.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValueError(f"twist must be finite, got v={self.v!r} omega={self.omega!r}")


ZERO_TWIST = Twist2D(0.0, 0.0)


def se2_compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Compose two poses: `b` expressed in `a`'s frame, result in the parent frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def se2_inverse(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2D(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def se2_between(a: Pose2D, b: Pose2D) -> Pose2D:
    """Relative pose of `b` in `a`'s frame (inverse(a) composed with b)."""
    return se2_compose(se2_inverse(a), b)


def se2_apply(p: Pose2D, xy: np.ndarray) -> np.ndarray:
    """Map body-frame point(s) of shape (..., 2) into the parent frame."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    xy = np.asarray(xy, dtype=float)
    out = np.empty_like(xy)
    out[..., 0] = p.x + c * xy[..., 0] - s * xy[..., 1]
    out[..., 1] = p.y + s * xy[..., 0] + c * xy[..., 1]
    return out


@dataclass(frozen=True)
class Extrinsics3D:
    """Rigid mounting transform between two sensor frames.

    Applies the rotation R = Rz(yaw) @ Ry(pitch) @ Rx(roll) and then the
    translation (tx, ty, tz).
    """

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, normalize_angle(getattr(self, name)))

    def rotation(self) -> np.ndarray:
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return rz @ ry @ rx

    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz], dtype=float)


def transform_point(e: Extrinsics3D, p: np.ndarray) -> np.ndarray:
    """Rotate then translate 3D point(s) of shape (..., 3)."""
    p = np.asarray(p, dtype=float)
    return p @ e.rotation().T + e.translation()


def _rpy_from_rotation(r: np.ndarray) -> tuple[float, float, float]:
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    if abs(r[2, 0]) < 1.0 - 1e-12:
        roll = math.atan2(r[2, 1], r[2, 2])
        yaw = math.atan2(r[1, 0], r[0, 0])
    else:
        # Gimbal lock: yaw and roll are coupled; put everything in roll.
        roll = math.atan2(-r[1, 2], r[1, 1])
        yaw = 0.0
    return roll, pitch, yaw


def extrinsics_compose(a: Extrinsics3D, b: Extrinsics3D) -> Extrinsics3D:
    r = a.rotation() @ b.rotation()
    t = a.rotation() @ b.translation() + a.translation()
    roll, pitch, yaw = _rpy_from_rotation(r)
    return Extrinsics3D(t[0], t[1], t[2], roll, pitch, yaw)


def extrinsics_inverse(e: Extrinsics3D) -> Extrinsics3D:
    r = e.rotation().T
    t = -(r @ e.translation())
    roll, pitch, yaw = _rpy_from_rotation(r)
    return Extrinsics3D(t[0], t[1], t[2], roll, pitch, yaw)
