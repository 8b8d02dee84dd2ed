"""Static 2D line-segment environment with exact ray casting.

Worlds are segment-based rather than grid-based so simulated ranges are
exact; any SLAM or localization error is then attributable to the
algorithms, not to world discretization. Segments may carry a glass
transmission probability to emulate laser returns lost through glazing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import tomli

from .geom import Pose2D

MISS = math.inf

LOG_ODDS_MIN = -4.0
LOG_ODDS_MAX = 4.0


class WorldFormatError(ValueError):
    """Raised for malformed world/scenario config input."""


@dataclass(frozen=True)
class World2D:
    segments: np.ndarray        # (N, 2, 2) endpoints, meters
    transmission: np.ndarray    # (N,) pass-through probability, 0 = opaque
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    @property
    def n_segments(self) -> int:
        return int(self.segments.shape[0])


def make_world(segments: list[tuple[float, float, float, float]],
               transmission: list[float] | None = None) -> World2D:
    segs = np.asarray(segments, dtype=float).reshape(-1, 2, 2)
    trans = np.zeros(len(segs)) if transmission is None else np.asarray(transmission, dtype=float)
    if len(trans) != len(segs):
        raise WorldFormatError("transmission list length must match segment count")
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1) if len(segs) else np.empty(0)
    if np.any(lengths == 0.0):
        bad = int(np.argmax(lengths == 0.0))
        raise WorldFormatError(f"segment {bad} has zero length")
    if len(segs):
        xs = segs[..., 0]
        ys = segs[..., 1]
        bounds = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
    else:
        bounds = (0.0, 0.0, 0.0, 0.0)
    return World2D(segs, trans, bounds)


def rect_segments(x0: float, y0: float, x1: float, y1: float) -> list[tuple[float, float, float, float]]:
    """Four wall segments of an axis-aligned rectangle."""
    return [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)]


def _require_numbers(entry: object, n: int, where: str) -> list[float]:
    if not isinstance(entry, (list, tuple)) or len(entry) != n:
        raise WorldFormatError(f"{where}: expected {n} numbers, got {entry!r}")
    out = []
    for i, v in enumerate(entry):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise WorldFormatError(f"{where}[{i}]: expected a number, got {v!r}")
        out.append(float(v))
    return out


def world_from_config(cfg: dict) -> World2D:
    """Build a World2D from a parsed `[world]` table."""
    segments: list[tuple[float, float, float, float]] = []
    transmission: list[float] = []
    for i, entry in enumerate(cfg.get("rect", [])):
        x0, y0, x1, y1 = _require_numbers(entry, 4, f"world.rect[{i}]")
        if x0 == x1 or y0 == y1:
            raise WorldFormatError(f"world.rect[{i}] is degenerate")
        segments.extend(rect_segments(x0, y0, x1, y1))
        transmission.extend([0.0] * 4)
    for i, entry in enumerate(cfg.get("segment", [])):
        x0, y0, x1, y1 = _require_numbers(entry, 4, f"world.segment[{i}]")
        segments.append((x0, y0, x1, y1))
        transmission.append(0.0)
    for i, entry in enumerate(cfg.get("glass", [])):
        x0, y0, x1, y1, t = _require_numbers(entry, 5, f"world.glass[{i}]")
        if not 0.0 <= t <= 1.0:
            raise WorldFormatError(f"world.glass[{i}]: transmission must be in [0, 1], got {t}")
        segments.append((x0, y0, x1, y1))
        transmission.append(t)
    return make_world(segments, transmission)


def load_world(text: str) -> World2D:
    """Parse the `[world]` section of a TOML scenario document."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise WorldFormatError(f"world config parse error: {e}") from e
    return world_from_config(doc.get("world", {}))


def raycast_batch(w: World2D, origin: tuple[float, float], bearings: np.ndarray,
                  max_range: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Range to the nearest opaque hit for each bearing; MISS (inf) when none.

    With `rng` given, a glass segment is skipped with its transmission
    probability (one draw per beam/segment pair per call); without an rng
    every segment is treated as opaque.
    """
    if max_range <= 0:
        raise ValueError(f"max_range must be positive, got {max_range}")
    bearings = np.atleast_1d(np.asarray(bearings, dtype=float))
    if w.n_segments == 0:
        return np.full(bearings.shape, MISS)

    ox, oy = float(origin[0]), float(origin[1])
    d = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)     # (B, 2)
    p0 = w.segments[:, 0]                                          # (S, 2)
    e = w.segments[:, 1] - w.segments[:, 0]                        # (S, 2)
    rel = p0 - np.array([ox, oy])                                  # (S, 2)

    # Solve origin + t*d = p0 + u*e via 2D cross products.
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]   # (B, S)
    t_num = rel[None, :, 0] * e[None, :, 1] - rel[None, :, 1] * e[None, :, 0]
    u_num = rel[None, :, 0] * d[:, None, 1] - rel[None, :, 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    valid = (np.abs(denom) > 1e-15) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0) & (t <= max_range)
    t = np.where(valid, t, MISS)

    glass = w.transmission > 0.0
    if rng is not None and np.any(glass):
        passes = rng.random((bearings.shape[0], int(glass.sum()))) < w.transmission[glass][None, :]
        t[:, glass] = np.where(passes, MISS, t[:, glass])

    return t.min(axis=1)


def raycast(w: World2D, origin: tuple[float, float], bearing: float,
            max_range: float, rng: np.random.Generator | None = None) -> float:
    """Scalar form of raycast_batch."""
    return float(raycast_batch(w, origin, np.array([bearing]), max_range, rng)[0])


@dataclass
class OccupancyGrid:
    """Log-odds occupancy map; probability is sigmoid(log_odds).

    `origin` is the pose of the outer corner of cell (row=0, col=0);
    cells[row, col] covers x in [col, col+1)*resolution along the origin
    x axis and likewise for y.
    """

    resolution: float
    width: int
    height: int
    origin: Pose2D = field(default_factory=Pose2D)
    cells: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.cells is None:
            self.cells = np.zeros((self.height, self.width), dtype=float)
        if self.cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {self.cells.shape} != (height, width) "
                             f"({self.height}, {self.width})")

    def probabilities(self) -> np.ndarray:
        return 1.0 - 1.0 / (1.0 + np.exp(self.cells))

    def add_log_odds(self, rows: np.ndarray, cols: np.ndarray, delta: float) -> None:
        self.cells[rows, cols] = np.clip(self.cells[rows, cols] + delta,
                                         LOG_ODDS_MIN, LOG_ODDS_MAX)

    def world_to_cell(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map world points (..., 2) to (row, col) integer indices (may be off-grid)."""
        gx, gy = self.world_to_grid(xy)
        return np.floor(gy).astype(int), np.floor(gx).astype(int)

    def world_to_grid(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Continuous grid coordinates (gx, gy) in units of cells from the origin corner."""
        xy = np.asarray(xy, dtype=float)
        dx = xy[..., 0] - self.origin.x
        dy = xy[..., 1] - self.origin.y
        if self.origin.theta != 0.0:
            c, s = math.cos(-self.origin.theta), math.sin(-self.origin.theta)
            dx, dy = c * dx - s * dy, s * dx + c * dy
        return dx / self.resolution, dy / self.resolution

    def cell_center(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        gx = (np.asarray(cols, dtype=float) + 0.5) * self.resolution
        gy = (np.asarray(rows, dtype=float) + 0.5) * self.resolution
        if self.origin.theta != 0.0:
            c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
            gx, gy = c * gx - s * gy, s * gx + c * gy
        return np.stack([gx + self.origin.x, gy + self.origin.y], axis=-1)

    def in_bounds(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return (rows >= 0) & (rows < self.height) & (cols >= 0) & (cols < self.width)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.width, self.height, self.origin,
                             self.cells.copy())


def rasterize_world(w: World2D, resolution: float, padding: float = 1.0,
                    origin: Pose2D | None = None,
                    width: int | None = None, height: int | None = None) -> OccupancyGrid:
    """Ground-truth occupancy grid: cells crossed by any segment become occupied.

    Uses supercover sampling (quarter-cell steps along each segment) so thin
    diagonal walls leave no gaps. Free space is left unknown; call sites that
    need free cells clear them with their own model.
    """
    if origin is None:
        xmin, ymin, xmax, ymax = w.bounds
        origin = Pose2D(xmin - padding, ymin - padding, 0.0)
        width = int(math.ceil((xmax - xmin + 2 * padding) / resolution))
        height = int(math.ceil((ymax - ymin + 2 * padding) / resolution))
    grid = OccupancyGrid(resolution, width, height, origin)
    step = resolution / 4.0
    for seg in w.segments:
        length = float(np.linalg.norm(seg[1] - seg[0]))
        n = max(2, int(math.ceil(length / step)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = seg[0][None, :] + ts[:, None] * (seg[1] - seg[0])[None, :]
        rows, cols = grid.world_to_cell(pts)
        ok = grid.in_bounds(rows, cols)
        grid.cells[rows[ok], cols[ok]] = LOG_ODDS_MAX
    return grid
