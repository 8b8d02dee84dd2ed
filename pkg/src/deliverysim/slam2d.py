"""Scan-matching 2D SLAM: log-odds mapping plus Gauss-Newton alignment.

Each scan is matched against a multi-resolution pyramid of the map built so
far by minimizing sum_i (1 - M(S_i(pose)))^2, where M is the bilinearly
interpolated occupancy probability at beam endpoint S_i. The map gradient
comes from the same bilinear cells, the 3x3 normal equations give the step,
and a step-halving line search keeps the residual monotone. Map updates are
gated on travelled motion so a stationary robot cannot corrode its own map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import Pose2D, normalize_angle, se2_between
from .sensors import LaserScan
from .world import LOG_ODDS_MIN, OccupancyGrid


@dataclass(frozen=True)
class MapPyramid:
    levels: list[OccupancyGrid]     # levels[k+1] at half the resolution of levels[k]

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class ScanMatchResult:
    pose: Pose2D
    iterations: int
    converged: bool
    final_residual: float           # mean squared endpoint residual, in [0, 1]
    hessian: np.ndarray             # final 3x3 normal-equations matrix
    # squared-residual sums per accepted step, keyed by pyramid level
    residual_history: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True)
class ScanMatchOptions:
    max_iterations: int = 30        # total budget across pyramid levels
    eps_xy: float = 1e-3
    eps_theta: float = 1e-3
    max_halvings: int = 5


def bresenham_line(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    """Integer 8-connected cell traversal from (r0, c0) to (r1, c1), inclusive."""
    cells = []
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        cells.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def grid_update(g: OccupancyGrid, pose: Pose2D, scan: LaserScan,
                l_occ: float = 0.9, l_free: float = -0.4,
                clear_misses: bool = False) -> tuple[OccupancyGrid, int]:
    """Integrate one scan into the grid; returns (grid, beams skipped off-map).

    Every finite beam marks its endpoint cell occupied and the Bresenham
    cells before it free. Beams whose endpoint (or the sensor itself) falls
    outside the grid are skipped and counted.
    """
    skipped = 0
    bearings = scan.bearings() + pose.theta
    start_rc = g.world_to_cell(np.array([pose.x, pose.y]))
    r0, c0 = int(start_rc[0]), int(start_rc[1])
    if not (0 <= r0 < g.height and 0 <= c0 < g.width):
        return g, len(scan.ranges)

    for rng_val, bearing in zip(scan.ranges, bearings):
        is_miss = not np.isfinite(rng_val)
        if is_miss and not clear_misses:
            continue
        reach = scan.range_max if is_miss else float(rng_val)
        end = np.array([pose.x + reach * math.cos(bearing),
                        pose.y + reach * math.sin(bearing)])
        er, ec = g.world_to_cell(end)
        er, ec = int(er), int(ec)
        if not (0 <= er < g.height and 0 <= ec < g.width):
            skipped += 1
            continue
        cells = bresenham_line(r0, c0, er, ec)
        if not is_miss:
            free = cells[:-1]
            hit = cells[-1]
            g.add_log_odds(np.array([hit[0]]), np.array([hit[1]]), l_occ)
        else:
            free = cells
        if free:
            rows = np.fromiter((rc[0] for rc in free), dtype=int)
            cols = np.fromiter((rc[1] for rc in free), dtype=int)
            g.add_log_odds(rows, cols, l_free)
    return g, skipped


def build_pyramid(g: OccupancyGrid, n_levels: int = 3) -> MapPyramid:
    """Coarser levels take the max child probability (conservative pooling)."""
    if n_levels < 1:
        raise ValueError(f"n_levels must be at least 1, got {n_levels}")
    levels = [g]
    for _ in range(n_levels - 1):
        prev = levels[-1]
        h2, w2 = (prev.height + 1) // 2, (prev.width + 1) // 2
        padded = np.full((h2 * 2, w2 * 2), LOG_ODDS_MIN)
        padded[:prev.height, :prev.width] = prev.cells
        pooled = padded.reshape(h2, 2, w2, 2).max(axis=(1, 3))
        levels.append(OccupancyGrid(prev.resolution * 2.0, w2, h2, prev.origin, pooled))
    return MapPyramid(levels=levels)


def _interp_map(probs: np.ndarray, grid: OccupancyGrid,
                pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear occupancy and gradient at world points; off-map acts unknown."""
    gx, gy = grid.world_to_grid(pts)
    u = gx - 0.5
    v = gy - 0.5
    j0 = np.floor(u).astype(int)
    i0 = np.floor(v).astype(int)
    fu = u - j0
    fv = v - i0
    h, w = probs.shape
    ok = (i0 >= 0) & (i0 <= h - 2) & (j0 >= 0) & (j0 <= w - 2)
    i0c = np.clip(i0, 0, h - 2)
    j0c = np.clip(j0, 0, w - 2)
    p00 = probs[i0c, j0c]
    p01 = probs[i0c, j0c + 1]
    p10 = probs[i0c + 1, j0c]
    p11 = probs[i0c + 1, j0c + 1]
    m = (1 - fv) * ((1 - fu) * p00 + fu * p01) + fv * ((1 - fu) * p10 + fu * p11)
    dm_dx = ((1 - fv) * (p01 - p00) + fv * (p11 - p10)) / grid.resolution
    dm_dy = ((1 - fu) * (p10 - p00) + fu * (p11 - p01)) / grid.resolution
    m = np.where(ok, m, 0.5)
    dm_dx = np.where(ok, dm_dx, 0.0)
    dm_dy = np.where(ok, dm_dy, 0.0)
    return m, dm_dx, dm_dy


def _residual_sum(probs: np.ndarray, grid: OccupancyGrid, pose: np.ndarray,
                  body: np.ndarray) -> float:
    pts = _endpoints(pose, body)
    m, _, _ = _interp_map(probs, grid, pts)
    return float(np.square(1.0 - m).sum())


def _endpoints(pose: np.ndarray, body: np.ndarray) -> np.ndarray:
    c, s = math.cos(pose[2]), math.sin(pose[2])
    out = np.empty_like(body)
    out[:, 0] = pose[0] + c * body[:, 0] - s * body[:, 1]
    out[:, 1] = pose[1] + s * body[:, 0] + c * body[:, 1]
    return out


def match_scan(pyr: MapPyramid, prior: Pose2D, scan: LaserScan,
               opts: ScanMatchOptions = ScanMatchOptions()) -> ScanMatchResult:
    """Coarse-to-fine Gauss-Newton alignment of scan endpoints to the map."""
    finite = np.isfinite(scan.ranges)
    ranges = scan.ranges[finite]
    bearings = scan.bearings()[finite]
    body = np.column_stack([ranges * np.cos(bearings), ranges * np.sin(bearings)])
    n_beams = len(body)
    pose = prior.as_array()
    hessian = np.zeros((3, 3))
    iterations = 0
    history: list[tuple[int, float]] = []

    if n_beams == 0:
        return ScanMatchResult(prior, 0, False, 0.0, hessian)

    for level_idx, grid in zip(range(pyr.n_levels - 1, -1, -1), reversed(pyr.levels)):
        probs = grid.probabilities()
        converged_level = False
        level_started = False
        while iterations < opts.max_iterations and not converged_level:
            pts = _endpoints(pose, body)
            m, dm_dx, dm_dy = _interp_map(probs, grid, pts)
            r = 1.0 - m
            c, s = math.cos(pose[2]), math.sin(pose[2])
            dx_dth = -s * body[:, 0] - c * body[:, 1]
            dy_dth = c * body[:, 0] - s * body[:, 1]
            grad = np.column_stack([dm_dx, dm_dy, dm_dx * dx_dth + dm_dy * dy_dth])
            h = grad.T @ grad
            rhs = grad.T @ r
            det = np.linalg.det(h)
            if not np.isfinite(det) or abs(det) < 1e-18:
                return ScanMatchResult(prior, iterations, False,
                                       float(np.square(r).mean()), h,
                                       tuple(history))
            step = np.linalg.solve(h, rhs)
            hessian = h
            iterations += 1

            f_old = float(np.square(r).sum())
            if not level_started:
                history.append((level_idx, f_old))
                level_started = True
            scale = 1.0
            accepted = False
            for _ in range(opts.max_halvings + 1):
                candidate = pose + scale * step
                f_new = _residual_sum(probs, grid, candidate, body)
                if f_new <= f_old:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                break
            pose = pose + scale * step
            pose[2] = normalize_angle(pose[2])
            history.append((level_idx, f_new))
            if (abs(scale * step[0]) < opts.eps_xy
                    and abs(scale * step[1]) < opts.eps_xy
                    and abs(scale * step[2]) < opts.eps_theta):
                converged_level = True
        if not converged_level and grid is pyr.levels[0]:
            final = _residual_sum(probs, pyr.levels[0], pose, body) / n_beams
            return ScanMatchResult(Pose2D(*pose), iterations, False, final, hessian,
                                   tuple(history))

    final = _residual_sum(pyr.levels[0].probabilities(), pyr.levels[0], pose, body) / n_beams
    return ScanMatchResult(Pose2D(*pose), iterations, True, final, hessian,
                           tuple(history))


@dataclass
class SlamConfig:
    resolution: float = 0.05
    extent: tuple[float, float, float, float] = (-15.0, -15.0, 15.0, 15.0)
    n_levels: int = 3
    l_occ: float = 0.9
    l_free: float = -0.4
    update_trans: float = 0.2       # m of motion before the map absorbs a scan
    update_rot: float = 0.15        # rad
    divergence_residual: float = 0.7
    match: ScanMatchOptions = field(default_factory=ScanMatchOptions)


@dataclass(frozen=True)
class SlamStepInfo:
    pose: Pose2D
    match: ScanMatchResult | None
    map_updated: bool
    diverged: bool


class Slam2D:
    """Single-owner SLAM state: pyramid, current pose, update bookkeeping."""

    def __init__(self, config: SlamConfig | None = None):
        self.config = config or SlamConfig()
        cfg = self.config
        xmin, ymin, xmax, ymax = cfg.extent
        width = int(math.ceil((xmax - xmin) / cfg.resolution))
        height = int(math.ceil((ymax - ymin) / cfg.resolution))
        self.grid = OccupancyGrid(cfg.resolution, width, height,
                                  Pose2D(xmin, ymin, 0.0))
        self.pyramid: MapPyramid | None = None
        self.pose = Pose2D()
        self._last_map_pose: Pose2D | None = None
        self.skipped_beams = 0

    @property
    def initialized(self) -> bool:
        return self.pyramid is not None

    def bootstrap(self, grid: OccupancyGrid, pose: Pose2D) -> None:
        """Resume from an existing map instead of seeding with the first scan."""
        self.grid = grid
        self.pyramid = build_pyramid(grid, self.config.n_levels)
        self.pose = pose
        self._last_map_pose = pose

    def _absorb(self, pose: Pose2D, scan: LaserScan) -> None:
        _, skipped = grid_update(self.grid, pose, scan,
                                 self.config.l_occ, self.config.l_free)
        self.skipped_beams += skipped
        self.pyramid = build_pyramid(self.grid, self.config.n_levels)
        self._last_map_pose = pose

    def step(self, scan: LaserScan, odom_prior: Pose2D) -> SlamStepInfo:
        """Match against the map, then absorb the scan if we moved enough."""
        if not self.initialized:
            self.pose = Pose2D()
            self._absorb(self.pose, scan)
            return SlamStepInfo(self.pose, None, True, False)

        result = match_scan(self.pyramid, odom_prior, scan, self.config.match)
        if result.final_residual > self.config.divergence_residual:
            self.pose = odom_prior
            return SlamStepInfo(self.pose, result, False, True)

        self.pose = result.pose
        moved = se2_between(self._last_map_pose, self.pose)
        if result.converged and (math.hypot(moved.x, moved.y) > self.config.update_trans
                                 or abs(moved.theta) > self.config.update_rot):
            self._absorb(self.pose, scan)
            return SlamStepInfo(self.pose, result, True, False)
        return SlamStepInfo(self.pose, result, False, False)
