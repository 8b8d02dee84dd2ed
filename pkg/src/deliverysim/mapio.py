"""Occupancy-map file I/O: binary PGM image plus YAML sidecar metadata.

Convention (compatible with common robotics map tooling): maxval 255,
occupied pixels 0, free 254, unknown 205; a cell is occupied at probability
>= 0.65 and free at <= 0.196. The top image row is the highest-y map row.
Reading restores tri-state log-odds (+2 / -2 / 0), so write/read round-trips
preserve the cell classification exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .geom import Pose2D
from .world import OccupancyGrid

PIXEL_OCCUPIED = 0
PIXEL_FREE = 254
PIXEL_UNKNOWN = 205
OCCUPIED_THRESH = 0.65
FREE_THRESH = 0.196
RESTORED_LOG_ODDS = 2.0


class MapFormatError(ValueError):
    """Raised for malformed map image or metadata files."""


def grid_to_pixels(g: OccupancyGrid) -> np.ndarray:
    """Tri-state pixel array in image row order (top row = max y)."""
    p = g.probabilities()
    pixels = np.full(p.shape, PIXEL_UNKNOWN, dtype=np.uint8)
    pixels[p >= OCCUPIED_THRESH] = PIXEL_OCCUPIED
    pixels[p <= FREE_THRESH] = PIXEL_FREE
    return pixels[::-1, :]


def pixels_to_grid(pixels: np.ndarray, resolution: float, origin: Pose2D) -> OccupancyGrid:
    cells = np.zeros(pixels.shape, dtype=float)
    flipped = pixels[::-1, :]
    cells[flipped == PIXEL_OCCUPIED] = RESTORED_LOG_ODDS
    cells[flipped == PIXEL_FREE] = -RESTORED_LOG_ODDS
    h, w = pixels.shape
    return OccupancyGrid(resolution, w, h, origin, cells)


def write_map(g: OccupancyGrid, path: str | Path) -> tuple[Path, Path]:
    """Write `<path>` as P5 PGM and its metadata sidecar; returns both paths."""
    pgm_path = Path(path)
    if pgm_path.suffix != ".pgm":
        pgm_path = pgm_path.with_suffix(".pgm")
    yaml_path = pgm_path.with_suffix(".yaml")

    pixels = grid_to_pixels(g)
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{g.width} {g.height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())

    meta = (f"image: {pgm_path.name}\n"
            f"resolution: {float(g.resolution)!r}\n"
            f"origin: [{float(g.origin.x)!r}, {float(g.origin.y)!r}, "
            f"{float(g.origin.theta)!r}]\n"
            f"negate: 0\n"
            f"occupied_thresh: {OCCUPIED_THRESH!r}\n"
            f"free_thresh: {FREE_THRESH!r}\n")
    yaml_path.write_text(meta, encoding="utf-8")
    return pgm_path, yaml_path


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed through the end of their line
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise MapFormatError(f"{path}: truncated PGM header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if tokens[0] != b"P5":
        raise MapFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as e:
        raise MapFormatError(f"{path}: bad PGM header numbers") from e
    if maxval != 255:
        raise MapFormatError(f"{path}: expected maxval 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:]
    if len(raster) != width * height:
        raise MapFormatError(f"{path}: raster has {len(raster)} bytes, "
                             f"expected {width * height}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def read_map(path: str | Path) -> OccupancyGrid:
    """Read a map from its PGM or YAML path; unknown pixels restore to log-odds 0."""
    path = Path(path)
    yaml_path = path if path.suffix in (".yaml", ".yml") else path.with_suffix(".yaml")
    if not yaml_path.exists():
        raise MapFormatError(f"missing map metadata: {yaml_path}")
    try:
        meta = yaml.safe_load(yaml_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise MapFormatError(f"{yaml_path}: {e}") from e
    if not isinstance(meta, dict):
        raise MapFormatError(f"{yaml_path}: metadata must be a mapping")
    for key in ("image", "resolution", "origin"):
        if key not in meta:
            raise MapFormatError(f"{yaml_path}: missing '{key}'")
    origin = meta["origin"]
    if not isinstance(origin, list) or len(origin) != 3:
        raise MapFormatError(f"{yaml_path}: origin must be [x, y, theta]")

    pgm_path = yaml_path.parent / str(meta["image"])
    pixels = _read_pgm(pgm_path)
    grid = pixels_to_grid(pixels, float(meta["resolution"]),
                          Pose2D(float(origin[0]), float(origin[1]), float(origin[2])))
    return grid
