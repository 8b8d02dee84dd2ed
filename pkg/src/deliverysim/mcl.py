"""Monte Carlo localization on a known occupancy grid.

Particles carry the global pose posterior; odometry deltas (from consecutive
fused-EKF poses) drive the rot1-trans-rot2 motion model, a precomputed
likelihood field scores scan endpoints, and systematic resampling fires only
when the effective sample size collapses. The particle count adapts with a
KLD bound between configured limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geom import Pose2D, normalize_angle
from .sensors import LaserScan
from .world import OccupancyGrid

KLD_Z_DELTA = 2.326    # upper 0.99 normal quantile for the KLD bound


@dataclass(frozen=True)
class Particle:
    pose: Pose2D
    weight: float


@dataclass(frozen=True)
class SensorModelParams:
    sigma_hit: float = 0.2
    z_hit: float = 0.9
    z_rand: float = 0.1
    max_beams: int = 60

    def __post_init__(self) -> None:
        if abs(self.z_hit + self.z_rand - 1.0) > 1e-9:
            raise ValueError("z_hit + z_rand must equal 1")


@dataclass
class ParticleSet:
    poses: np.ndarray               # (N, 3)
    weights: np.ndarray             # (N,), sums to 1
    n_min: int = 250
    n_max: int = 2000
    alphas: tuple[float, float, float, float] = (0.2, 0.2, 0.1, 0.1)
    sensor: SensorModelParams = field(default_factory=SensorModelParams)
    # augmented-MCL recovery: (alpha_slow, alpha_fast); zeros disable the
    # kidnapped-robot random-injection hook
    recovery: tuple[float, float] = (0.0, 0.0)
    w_slow: float = 0.0
    w_fast: float = 0.0

    def __post_init__(self) -> None:
        if not self.n_min <= len(self.poses) <= self.n_max:
            raise ValueError(f"particle count {len(self.poses)} outside "
                             f"[{self.n_min}, {self.n_max}]")

    @property
    def particles(self) -> list[Particle]:
        return [Particle(Pose2D(x, y, th), float(w))
                for (x, y, th), w in zip(self.poses, self.weights)]

    def __len__(self) -> int:
        return len(self.poses)


def uniform_particles(extent: tuple[float, float, float, float], n: int,
                      rng: np.random.Generator, **kwargs) -> ParticleSet:
    xmin, ymin, xmax, ymax = extent
    poses = np.column_stack([
        rng.uniform(xmin, xmax, n),
        rng.uniform(ymin, ymax, n),
        rng.uniform(-math.pi, math.pi, n),
    ])
    return ParticleSet(poses=poses, weights=np.full(n, 1.0 / n), **kwargs)


def gaussian_particles(center: Pose2D, std: tuple[float, float, float], n: int,
                       rng: np.random.Generator, **kwargs) -> ParticleSet:
    poses = np.column_stack([
        rng.normal(center.x, std[0], n),
        rng.normal(center.y, std[1], n),
        rng.normal(center.theta, std[2], n),
    ])
    poses[:, 2] = np.arctan2(np.sin(poses[:, 2]), np.cos(poses[:, 2]))
    return ParticleSet(poses=poses, weights=np.full(n, 1.0 / n), **kwargs)


@dataclass(frozen=True)
class LikelihoodField:
    """Distance-to-nearest-occupied-cell grid, in meters."""

    distances: np.ndarray
    resolution: float
    origin: Pose2D
    max_distance: float

    def lookup(self, xy: np.ndarray) -> np.ndarray:
        """Distances at world points (..., 2); off-map points get max_distance."""
        xy = np.asarray(xy, dtype=float)
        cols = np.floor((xy[..., 0] - self.origin.x) / self.resolution).astype(int)
        rows = np.floor((xy[..., 1] - self.origin.y) / self.resolution).astype(int)
        h, w = self.distances.shape
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        out = np.full(xy.shape[:-1], self.max_distance)
        out[ok] = self.distances[rows[ok], cols[ok]]
        return out


def build_likelihood_field(grid: OccupancyGrid,
                           occupied_thresh: float = 0.65) -> LikelihoodField:
    """Euclidean distance transform of the occupied mask, scaled to meters."""
    if grid.origin.theta != 0.0:
        raise ValueError("likelihood fields require an axis-aligned grid origin")
    occupied = grid.probabilities() >= occupied_thresh
    if occupied.any():
        distances = ndimage.distance_transform_edt(~occupied) * grid.resolution
    else:
        distances = np.full(occupied.shape, math.inf)
    max_distance = float(max(grid.width, grid.height) * grid.resolution)
    return LikelihoodField(distances=distances, resolution=grid.resolution,
                           origin=grid.origin, max_distance=max_distance)


def decompose_delta(delta: Pose2D) -> tuple[float, float, float]:
    """Split a body-frame motion into rot1, trans, rot2."""
    trans = math.hypot(delta.x, delta.y)
    if trans < 1e-9:
        return 0.0, trans, delta.theta
    rot1 = math.atan2(delta.y, delta.x)
    return rot1, trans, normalize_angle(delta.theta - rot1)


def mcl_motion_update(ps: ParticleSet, odom_delta: Pose2D,
                      rng: np.random.Generator) -> ParticleSet:
    """Advance every particle by the noisy rot1-trans-rot2 decomposition.

    Noise standard deviations are linear in the motion magnitudes:
    (a1*|rot| + a2*trans) for the rotations, (a3*trans + a4*(|rot1|+|rot2|))
    for the translation.
    """
    rot1, trans, rot2 = decompose_delta(odom_delta)
    a1, a2, a3, a4 = ps.alphas
    n = len(ps)
    std_rot1 = a1 * abs(rot1) + a2 * trans
    std_trans = a3 * trans + a4 * (abs(rot1) + abs(rot2))
    std_rot2 = a1 * abs(rot2) + a2 * trans

    r1 = rot1 + (rng.normal(0.0, std_rot1, n) if std_rot1 > 0 else 0.0)
    tr = trans + (rng.normal(0.0, std_trans, n) if std_trans > 0 else 0.0)
    r2 = rot2 + (rng.normal(0.0, std_rot2, n) if std_rot2 > 0 else 0.0)

    poses = ps.poses.copy()
    heading = poses[:, 2] + r1
    poses[:, 0] += tr * np.cos(heading)
    poses[:, 1] += tr * np.sin(heading)
    poses[:, 2] = np.arctan2(np.sin(heading + r2), np.cos(heading + r2))
    return replace(ps, poses=poses, weights=ps.weights.copy())


def _subsample_beams(scan: LaserScan, max_beams: int) -> tuple[np.ndarray, np.ndarray]:
    finite = np.flatnonzero(np.isfinite(scan.ranges))
    if len(finite) == 0:
        return np.empty(0), np.empty(0)
    if len(finite) > max_beams:
        pick = np.unique(np.round(np.linspace(0, len(finite) - 1, max_beams)).astype(int))
        finite = finite[pick]
    bearings = scan.angle_min + finite * scan.angle_increment
    return scan.ranges[finite], bearings


def mcl_sensor_update(ps: ParticleSet, scan: LaserScan,
                      lf: LikelihoodField) -> tuple[ParticleSet, bool]:
    """Reweight particles with the likelihood-field beam model.

    Returns (set, healthy); healthy is False when every particle scored
    zero and the weights were reset uniform.
    """
    ranges, bearings = _subsample_beams(scan, ps.sensor.max_beams)
    if len(ranges) == 0:
        weights = ps.weights / ps.weights.sum()
        return replace(ps, poses=ps.poses.copy(), weights=weights), True

    theta = ps.poses[:, 2][:, None] + bearings[None, :]
    ex = ps.poses[:, 0][:, None] + ranges[None, :] * np.cos(theta)
    ey = ps.poses[:, 1][:, None] + ranges[None, :] * np.sin(theta)
    d = lf.lookup(np.stack([ex, ey], axis=-1))

    sm = ps.sensor
    gauss = np.exp(-0.5 * (d / sm.sigma_hit) ** 2) / (sm.sigma_hit * math.sqrt(2 * math.pi))
    p_beam = sm.z_hit * gauss + sm.z_rand / scan.range_max
    with np.errstate(divide="ignore"):
        log_like = np.log(p_beam).sum(axis=1)
        log_w = log_like + np.log(ps.weights)

    w_slow, w_fast = ps.w_slow, ps.w_fast
    a_slow, a_fast = ps.recovery
    if a_slow > 0 and a_fast > 0:
        w_avg = float(np.exp(log_like).mean())
        w_slow = w_avg if w_slow == 0.0 else w_slow + a_slow * (w_avg - w_slow)
        w_fast = w_avg if w_fast == 0.0 else w_fast + a_fast * (w_avg - w_fast)

    peak = log_w.max()
    if not np.isfinite(peak):
        n = len(ps)
        return replace(ps, poses=ps.poses.copy(), weights=np.full(n, 1.0 / n),
                       w_slow=w_slow, w_fast=w_fast), False
    weights = np.exp(log_w - peak)
    return replace(ps, poses=ps.poses.copy(), weights=weights / weights.sum(),
                   w_slow=w_slow, w_fast=w_fast), True


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.square(weights).sum())


def kld_sample_count(k_bins: int, epsilon: float = 0.05,
                     z_delta: float = KLD_Z_DELTA) -> int:
    """Particles needed so the sampled approximation stays within epsilon
    KL divergence of the binned posterior with the configured confidence."""
    if k_bins <= 1:
        return 1
    a = 2.0 / (9.0 * (k_bins - 1))
    return int(math.ceil((k_bins - 1) / (2.0 * epsilon)
                         * (1.0 - a + math.sqrt(a) * z_delta) ** 3))


def _occupied_bins(poses: np.ndarray, xy_bin: float = 0.5,
                   theta_bin: float = math.pi / 18.0) -> int:
    keys = np.column_stack([
        np.floor(poses[:, 0] / xy_bin),
        np.floor(poses[:, 1] / xy_bin),
        np.floor(poses[:, 2] / theta_bin),
    ])
    return len(np.unique(keys, axis=0))


def systematic_resample(weights: np.ndarray, n_out: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Low-variance survivor indices: one uniform draw, stratified comb."""
    positions = (rng.random() + np.arange(n_out)) / n_out
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def mcl_resample(ps: ParticleSet, rng: np.random.Generator,
                 injector=None) -> ParticleSet:
    """Resample only on N_eff collapse; new count follows the KLD bound.

    With recovery enabled and an `injector(n, rng) -> (n, 3) poses` provided,
    a `max(0, 1 - w_fast/w_slow)` fraction of the survivors is replaced by
    fresh random particles (augmented MCL).
    """
    if effective_sample_size(ps.weights) >= len(ps) / 2.0:
        return ps
    n_new = min(max(kld_sample_count(_occupied_bins(ps.poses)), ps.n_min), ps.n_max)
    n_inject = 0
    if injector is not None and ps.w_slow > 0:
        # capped so a transient likelihood dip cannot wipe a converged cloud
        p_inject = min(0.1, max(0.0, 1.0 - ps.w_fast / ps.w_slow))
        n_inject = min(int(round(p_inject * n_new)), n_new)
    idx = systematic_resample(ps.weights, n_new - n_inject, rng)
    poses = ps.poses[idx].copy()
    if n_inject > 0:
        poses = np.vstack([poses, injector(n_inject, rng)])
    return replace(ps, poses=poses, weights=np.full(n_new, 1.0 / n_new))


def mcl_estimate(ps: ParticleSet) -> tuple[Pose2D, np.ndarray]:
    """Weighted mean pose (circular in heading) and 3x3 covariance."""
    if len(ps) == 0:
        raise ValueError("cannot estimate from an empty particle set")
    w = ps.weights
    mx = float(w @ ps.poses[:, 0])
    my = float(w @ ps.poses[:, 1])
    mth = math.atan2(float(w @ np.sin(ps.poses[:, 2])),
                     float(w @ np.cos(ps.poses[:, 2])))
    dth = np.arctan2(np.sin(ps.poses[:, 2] - mth), np.cos(ps.poses[:, 2] - mth))
    dev = np.column_stack([ps.poses[:, 0] - mx, ps.poses[:, 1] - my, dth])
    cov = (w[:, None] * dev).T @ dev
    return Pose2D(mx, my, mth), cov


def dump_particles(ps: ParticleSet, path) -> None:
    """Debug CSV: one `x,y,theta,weight` line per particle."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,theta,weight\n")
        for (x, y, th), w in zip(ps.poses, ps.weights):
            fh.write(f"{float(x)!r},{float(y)!r},{float(th)!r},{float(w)!r}\n")
