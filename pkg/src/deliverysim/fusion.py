"""EKF fusing encoder odometry, IMU yaw rate, and GPS position.

State is the planar unicycle [x, y, theta, v, omega]; on flat ground the
usual full 3D fusion filter collapses to these five states. Updates use the
Joseph form and a chi-square innovation gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geom import normalize_angle
from .vehicle import EncoderReading, VehicleParams

STATE_DIM = 5
IDX_X, IDX_Y, IDX_THETA, IDX_V, IDX_OMEGA = range(STATE_DIM)

# chi2 inverse cdf at 0.99 for 1..3 dof
CHI2_99 = {1: 6.635, 2: 9.210, 3: 11.345}


class MeasurementKind(Enum):
    ODOM = "odom"
    IMU = "imu"
    GPS = "gps"


_KIND_INDICES = {
    MeasurementKind.ODOM: (IDX_V, IDX_OMEGA),
    MeasurementKind.IMU: (IDX_OMEGA,),
    MeasurementKind.GPS: (IDX_X, IDX_Y),
}
_KIND_INDICES_WITH_YAW = (IDX_THETA, IDX_OMEGA)


@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray            # (5,)
    cov: np.ndarray             # (5, 5)
    stamp: float

    def pose_tuple(self) -> tuple[float, float, float]:
        return float(self.mean[0]), float(self.mean[1]), float(self.mean[2])


@dataclass(frozen=True)
class Measurement:
    kind: MeasurementKind
    z: np.ndarray
    R: np.ndarray
    stamp: float
    includes_yaw: bool = False  # IMU only: z = [yaw, omega]


def make_state(x: float = 0.0, y: float = 0.0, theta: float = 0.0,
               v: float = 0.0, omega: float = 0.0,
               cov_diag: tuple[float, ...] = (0.01, 0.01, 0.01, 0.04, 0.04),
               stamp: float = 0.0) -> EkfState:
    return EkfState(mean=np.array([x, y, normalize_angle(theta), v, omega]),
                    cov=np.diag(cov_diag).astype(float), stamp=stamp)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def motion_model(mean: np.ndarray, dt: float) -> np.ndarray:
    x, y, theta, v, omega = mean
    return np.array([
        x + v * math.cos(theta) * dt,
        y + v * math.sin(theta) * dt,
        normalize_angle(theta + omega * dt),
        v,
        omega,
    ])


def motion_jacobian(mean: np.ndarray, dt: float) -> np.ndarray:
    _, _, theta, v, _ = mean
    f = np.eye(STATE_DIM)
    f[IDX_X, IDX_THETA] = -v * math.sin(theta) * dt
    f[IDX_X, IDX_V] = math.cos(theta) * dt
    f[IDX_Y, IDX_THETA] = v * math.cos(theta) * dt
    f[IDX_Y, IDX_V] = math.sin(theta) * dt
    f[IDX_THETA, IDX_OMEGA] = dt
    return f


def ekf_predict(s: EkfState, dt: float, q: np.ndarray) -> EkfState:
    """Propagate mean and covariance through the unicycle model."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if dt == 0:
        return s
    f = motion_jacobian(s.mean, dt)
    mean = motion_model(s.mean, dt)
    cov = _symmetrize(f @ s.cov @ f.T + q * dt)
    return EkfState(mean=mean, cov=cov, stamp=s.stamp + dt)


def _measurement_indices(m: Measurement) -> tuple[int, ...]:
    if m.kind is MeasurementKind.IMU and m.includes_yaw:
        return _KIND_INDICES_WITH_YAW
    return _KIND_INDICES[m.kind]


def _check_noise(r: np.ndarray) -> None:
    if not np.allclose(r, r.T, atol=1e-12):
        raise ValueError("measurement noise R must be symmetric")
    if np.linalg.eigvalsh(r).min() <= 0:
        raise ValueError("measurement noise R must be positive definite")


def ekf_update(s: EkfState, m: Measurement,
               gate_chi2: float | None = None) -> tuple[EkfState, bool]:
    """Joseph-form update; returns (state, accepted).

    A gated measurement leaves the state untouched except for the stamp.
    Measurements older than the state are a sequencing bug and raise.
    """
    if m.stamp < s.stamp - 1e-12:
        raise ValueError(f"out-of-order measurement: stamp {m.stamp} < state {s.stamp}")
    z = np.atleast_1d(np.asarray(m.z, dtype=float))
    r = np.atleast_2d(np.asarray(m.R, dtype=float))
    _check_noise(r)
    idx = _measurement_indices(m)
    if len(z) != len(idx) or r.shape != (len(idx), len(idx)):
        raise ValueError(f"{m.kind.value} measurement has wrong dimension")
    if gate_chi2 is None:
        gate_chi2 = CHI2_99[len(idx)]

    h = np.zeros((len(idx), STATE_DIM))
    for row, i in enumerate(idx):
        h[row, i] = 1.0

    innovation = z - s.mean[list(idx)]
    for row, i in enumerate(idx):
        if i == IDX_THETA:
            innovation[row] = normalize_angle(innovation[row])

    ss = h @ s.cov @ h.T + r
    mahal = float(innovation @ np.linalg.solve(ss, innovation))
    if mahal > gate_chi2:
        return EkfState(mean=s.mean, cov=s.cov, stamp=m.stamp), False

    k = s.cov @ h.T @ np.linalg.inv(ss)
    mean = s.mean + k @ innovation
    mean[IDX_THETA] = normalize_angle(mean[IDX_THETA])
    ikh = np.eye(STATE_DIM) - k @ h
    cov = _symmetrize(ikh @ s.cov @ ikh.T + k @ r @ k.T)
    return EkfState(mean=mean, cov=cov, stamp=m.stamp), True


def odometry_from_encoders(prev: EncoderReading, curr: EncoderReading,
                           p: VehicleParams, steer_delta: float | None = None,
                           sigma_v: float = 0.05,
                           sigma_omega: float = 0.05) -> Measurement:
    """Difference encoder ticks into a (v, omega) measurement.

    The steering angle normally comes from the quantized steering ticks;
    pass `steer_delta` to override with a directly sensed angle.
    """
    dt = curr.stamp - prev.stamp
    if dt <= 0:
        raise ValueError(f"encoder stamps must advance, got dt={dt}")
    dticks = curr.drive_ticks - prev.drive_ticks
    v = dticks / p.ticks_per_rev * 2.0 * math.pi * p.wheel_radius / dt
    if steer_delta is None:
        steer_delta = curr.steer_ticks * 2.0 * math.pi / p.ticks_per_rev
    omega = v * math.tan(steer_delta) / p.wheelbase
    return Measurement(kind=MeasurementKind.ODOM,
                       z=np.array([v, omega]),
                       R=np.diag([sigma_v ** 2, sigma_omega ** 2]),
                       stamp=curr.stamp)


ESTIMATE_LOG_HEADER = ("stamp,x,y,theta,v,omega,"
                       "P00,P01,P02,P03,P04,P11,P12,P13,P14,"
                       "P22,P23,P24,P33,P34,P44")


def estimate_log_row(s: EkfState) -> str:
    upper = [s.cov[i, j] for i in range(STATE_DIM) for j in range(i, STATE_DIM)]
    fields = [s.stamp, *s.mean.tolist(), *upper]
    return ",".join(repr(float(v)) for v in fields)
