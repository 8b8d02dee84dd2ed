"""Deterministic, seeded sensor emulation: 3D LIDAR, scan cut, IMU, GPS.

The 3D world is an extrusion of the 2D segment world: walls rise from the
ground plane to `wall_height`, the sensor sits `roof_height + mount_height`
above ground. Downward beams that clear every wall return ground hits.
All randomness flows through explicitly passed numpy Generators so a fixed
seed reproduces every stream bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import TWO_PI, Pose2D
from .world import MISS, World2D, raycast_batch

GEO_METERS_PER_DEG = 111_320.0


@dataclass(frozen=True)
class LidarParams:
    range_max: float = 120.0
    v_fov: float = math.radians(45.0)
    h_fov: float = TWO_PI
    rings: int = 128
    beams_per_ring: int = 512
    mount_height: float = 0.3       # above the roof platform
    roof_height: float = 1.0
    wall_height: float = 3.0
    noise_sigma: float = 0.02

    def __post_init__(self) -> None:
        if self.rings < 1 or self.beams_per_ring < 1:
            raise ValueError("rings and beams_per_ring must be at least 1")
        if self.range_max <= 0:
            raise ValueError(f"range_max must be positive, got {self.range_max}")

    @property
    def sensor_height(self) -> float:
        return self.roof_height + self.mount_height


@dataclass(frozen=True)
class PointCloud3D:
    points: np.ndarray              # (N, 3) sensor frame, meters
    stamp: float


@dataclass(frozen=True)
class LaserScan:
    angle_min: float
    angle_max: float
    angle_increment: float
    range_min: float
    range_max: float
    ranges: np.ndarray              # MISS encoded as +inf
    stamp: float

    def __post_init__(self) -> None:
        expected = int(round((self.angle_max - self.angle_min) / self.angle_increment)) + 1
        if len(self.ranges) != expected:
            raise ValueError(f"scan has {len(self.ranges)} ranges, expected {expected}")
        finite = self.ranges[np.isfinite(self.ranges)]
        if finite.size and (finite.min() < self.range_min - 1e-9
                            or finite.max() > self.range_max + 1e-9):
            raise ValueError("finite ranges outside [range_min, range_max]")

    def bearings(self) -> np.ndarray:
        return self.angle_min + np.arange(len(self.ranges)) * self.angle_increment


@dataclass(frozen=True)
class ImuSample:
    yaw_rate: float
    accel_x: float
    accel_y: float
    yaw: float                      # integrated from measured rate; drifts
    stamp: float


@dataclass(frozen=True)
class GpsFix:
    east: float
    north: float
    sigma: float
    valid: bool
    stamp: float


@dataclass(frozen=True)
class ImuParams:
    gyro_sigma: float = 0.005       # rad/s
    bias_walk_sigma: float = 1e-4   # rad/s per sqrt(s)
    accel_sigma: float = 0.02       # m/s^2


@dataclass(frozen=True)
class ImuState:
    """Bias and integrator state threaded through sample_imu calls."""

    bias: float = 0.0
    yaw: float = 0.0


@dataclass(frozen=True)
class GpsParams:
    sigma: float = 0.05
    dropout_prob: float = 0.0
    rate: float = 5.0
    origin_lat: float = 48.3
    origin_lon: float = 14.3

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError(f"gps rate must be positive, got {self.rate}")


def ring_elevations(lp: LidarParams) -> np.ndarray:
    if lp.rings == 1:
        return np.zeros(1)
    return np.linspace(-lp.v_fov / 2.0, lp.v_fov / 2.0, lp.rings)


def beam_azimuths(lp: LidarParams) -> np.ndarray:
    # Endpoint-exclusive so a full-circle fov does not duplicate the seam beam.
    return -lp.h_fov / 2.0 + np.arange(lp.beams_per_ring) * (lp.h_fov / lp.beams_per_ring)


def simulate_cloud(w: World2D, sensor_pose: Pose2D, lp: LidarParams,
                   rng: np.random.Generator, stamp: float = 0.0) -> PointCloud3D:
    """Spin one full frame of the extruded-world LIDAR.

    A planar raycast per azimuth gives the horizontal wall distance shared
    by all rings; each ring keeps the wall hit when the beam height at the
    wall stays within [0, wall_height], otherwise a downward beam grazes
    the ground plane. Range noise is drawn for every ring/beam slot so the
    stream layout is independent of the world geometry.
    """
    phis = ring_elevations(lp)
    psis = beam_azimuths(lp)
    h = lp.sensor_height

    r_h = raycast_batch(w, (sensor_pose.x, sensor_pose.y),
                        sensor_pose.theta + psis, lp.range_max, rng)   # (B,)
    noise = rng.normal(0.0, lp.noise_sigma, size=(lp.rings, lp.beams_per_ring)) \
        if lp.noise_sigma > 0 else np.zeros((lp.rings, lp.beams_per_ring))

    cos_phi = np.cos(phis)[:, None]
    sin_phi = np.sin(phis)[:, None]
    tan_phi = np.tan(phis)[:, None]

    wall_hit = np.isfinite(r_h)[None, :] & (cos_phi > 1e-9)
    with np.errstate(invalid="ignore", divide="ignore"):
        slant_wall = np.where(wall_hit, r_h[None, :] / cos_phi, np.inf)
        z_at_wall = h + r_h[None, :] * tan_phi
    wall_ok = wall_hit & (z_at_wall >= 0.0) & (z_at_wall <= lp.wall_height) \
        & (slant_wall <= lp.range_max)

    down = sin_phi < -1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        slant_ground = np.where(down, -h / sin_phi, np.inf)
    ground_ok = down & ~wall_ok & (slant_ground <= lp.range_max)

    slant = np.where(wall_ok, slant_wall, np.where(ground_ok, slant_ground, np.nan))
    slant = np.clip(slant + noise, 0.0, lp.range_max)

    keep = wall_ok | ground_ok
    rr = slant[keep]
    phi_k = np.broadcast_to(phis[:, None], keep.shape)[keep]
    psi_k = np.broadcast_to(psis[None, :], keep.shape)[keep]
    pts = np.stack([rr * np.cos(phi_k) * np.cos(psi_k),
                    rr * np.cos(phi_k) * np.sin(psi_k),
                    rr * np.sin(phi_k)], axis=1)
    return PointCloud3D(points=pts, stamp=stamp)


def cloud_to_scan(c: PointCloud3D, z_band: tuple[float, float],
                  angle_increment: float, range_min: float = 0.0,
                  range_max: float = 120.0, stamp: float | None = None) -> LaserScan:
    """Cut a cloud down to the 2D plane: keep the band, bin by azimuth, min range."""
    z_lo, z_hi = z_band
    if z_lo >= z_hi:
        raise ValueError(f"z band must satisfy z_lo < z_hi, got {z_band}")
    if angle_increment <= 0:
        raise ValueError(f"angle_increment must be positive, got {angle_increment}")
    n = int(round(TWO_PI / angle_increment))
    angle_min = -math.pi
    ranges = np.full(n, MISS)

    pts = c.points
    if pts.size:
        band = (pts[:, 2] >= z_lo) & (pts[:, 2] <= z_hi)
        pts = pts[band]
    if pts.size:
        planar = np.hypot(pts[:, 0], pts[:, 1])
        ok = (planar >= range_min) & (planar <= range_max)
        planar = planar[ok]
        az = np.arctan2(pts[ok, 1], pts[ok, 0])
        bins = np.round((az - angle_min) / angle_increment).astype(int) % n
        np.minimum.at(ranges, bins, planar)

    return LaserScan(angle_min=angle_min,
                     angle_max=angle_min + (n - 1) * angle_increment,
                     angle_increment=angle_increment,
                     range_min=range_min, range_max=range_max,
                     ranges=ranges, stamp=c.stamp if stamp is None else stamp)


def simulate_scan(w: World2D, sensor_pose: Pose2D, n_beams: int, range_max: float,
                  noise_sigma: float, rng: np.random.Generator,
                  stamp: float = 0.0) -> LaserScan:
    """Direct planar scan at the sensor plane; the fast path for long runs.

    Equivalent to simulate_cloud + cloud_to_scan with a band around the
    sensor plane, minus the 3D bookkeeping.
    """
    inc = TWO_PI / n_beams
    bearings = -math.pi + np.arange(n_beams) * inc
    ranges = raycast_batch(w, (sensor_pose.x, sensor_pose.y),
                           sensor_pose.theta + bearings, range_max, rng)
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma, size=n_beams)
        hit = np.isfinite(ranges)
        ranges = np.where(hit, np.clip(ranges + noise, 0.0, range_max), ranges)
    return LaserScan(angle_min=-math.pi, angle_max=-math.pi + (n_beams - 1) * inc,
                     angle_increment=inc, range_min=0.0, range_max=range_max,
                     ranges=ranges, stamp=stamp)


def sample_imu(true_yaw_rate: float, true_accel: tuple[float, float],
               state: ImuState, params: ImuParams, dt: float,
               rng: np.random.Generator, stamp: float) -> tuple[ImuSample, ImuState]:
    """One gyro/accelerometer sample; bias evolves as a random walk."""
    bias = state.bias + rng.normal(0.0, params.bias_walk_sigma * math.sqrt(dt))
    yaw_rate = true_yaw_rate + bias + rng.normal(0.0, params.gyro_sigma)
    yaw = state.yaw + yaw_rate * dt
    ax = true_accel[0] + rng.normal(0.0, params.accel_sigma)
    ay = true_accel[1] + rng.normal(0.0, params.accel_sigma)
    sample = ImuSample(yaw_rate=yaw_rate, accel_x=ax, accel_y=ay, yaw=yaw, stamp=stamp)
    return sample, ImuState(bias=bias, yaw=yaw)


def sample_gps(true_pos: tuple[float, float], gp: GpsParams,
               rng: np.random.Generator, stamp: float) -> GpsFix | None:
    """Noisy local-frame fix, or None when the sample drops out.

    Both draws happen unconditionally so the stream stays aligned across
    dropout patterns.
    """
    dropped = rng.random() < gp.dropout_prob
    noise = rng.normal(0.0, gp.sigma, size=2) if gp.sigma > 0 else np.zeros(2)
    if dropped:
        return None
    return GpsFix(east=true_pos[0] + noise[0], north=true_pos[1] + noise[1],
                  sigma=max(gp.sigma, 1e-6), valid=True, stamp=stamp)


def geo_from_local(east: float, north: float, origin_lat: float,
                   origin_lon: float) -> tuple[float, float]:
    """Equirectangular local-tangent-plane to (lat, lon) degrees."""
    lat = origin_lat + north / GEO_METERS_PER_DEG
    lon = origin_lon + east / (GEO_METERS_PER_DEG * math.cos(math.radians(origin_lat)))
    return lat, lon


def local_from_geo(lat: float, lon: float, origin_lat: float,
                   origin_lon: float) -> tuple[float, float]:
    north = (lat - origin_lat) * GEO_METERS_PER_DEG
    east = (lon - origin_lon) * GEO_METERS_PER_DEG * math.cos(math.radians(origin_lat))
    return east, north
