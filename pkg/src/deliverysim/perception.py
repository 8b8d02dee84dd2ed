"""Detection ingestion, class filtering, map-frame projection, stop gate.

Detections arrive from a recorded log (or from scripted simulation actors
rendered as perfect detections); running the detector network itself is out
of scope. Class names are free text matched case-insensitively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Extrinsics3D, Pose2D, Twist2D, transform_point

DEFAULT_WHITELIST = frozenset(
    {"person", "dog", "cat", "duck", "scooter", "bicyclist"})


@dataclass(frozen=True)
class Detection:
    stamp: float
    class_name: str
    confidence: float
    bbox: tuple[float, float, float, float]   # u, v, w, h pixels
    depth: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.depth is not None and self.depth <= 0:
            raise ValueError(f"depth must be positive when present, got {self.depth}")


@dataclass(frozen=True)
class ObstaclePoint:
    position: tuple[float, float]   # map frame
    class_name: str
    stamp: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float


def filter_classes(dets: list[Detection], whitelist: frozenset[str] | set[str] = DEFAULT_WHITELIST,
                   min_conf: float = 0.0) -> list[Detection]:
    """Keep whitelisted classes at or above the confidence floor; order preserved."""
    allowed = {name.lower() for name in whitelist}
    return [d for d in dets
            if d.class_name.lower() in allowed and d.confidence >= min_conf]


def project_obstacle(d: Detection, cam: CameraIntrinsics,
                     cam_to_base: Extrinsics3D, base_pose: Pose2D) -> ObstaclePoint:
    """Back-project the bbox center at its depth into the map frame.

    Camera frame is x-forward, y-left, z-up: a pixel right of center maps
    to negative y, below center to negative z.
    """
    if d.depth is None:
        raise ValueError("detection has no depth; cannot project")
    u, v, w, h = d.bbox
    uc, vc = u + w / 2.0, v + h / 2.0
    p_cam = np.array([d.depth,
                      -(uc - cam.cx) / cam.fx * d.depth,
                      -(vc - cam.cy) / cam.fy * d.depth])
    p_base = transform_point(cam_to_base, p_cam)
    c, s = math.cos(base_pose.theta), math.sin(base_pose.theta)
    x = base_pose.x + c * p_base[0] - s * p_base[1]
    y = base_pose.y + s * p_base[0] + c * p_base[1]
    return ObstaclePoint(position=(float(x), float(y)),
                         class_name=d.class_name, stamp=d.stamp)


def safety_gate(obstacles: list[ObstaclePoint], pose: Pose2D, cmd: Twist2D,
                stop_dist: float, corridor_halfwidth: float) -> Twist2D:
    """Zero the command when any obstacle sits in the forward stop rectangle.

    The gate is all-or-nothing: either the command passes through unchanged
    or the output is exactly zero twist.
    """
    if stop_dist <= 0:
        raise ValueError(f"stop_dist must be positive, got {stop_dist}")
    c, s = math.cos(-pose.theta), math.sin(-pose.theta)
    for ob in obstacles:
        dx, dy = ob.position[0] - pose.x, ob.position[1] - pose.y
        bx = c * dx - s * dy
        by = s * dx + c * dy
        if 0.0 <= bx <= stop_dist and abs(by) <= corridor_halfwidth:
            return Twist2D(0.0, 0.0)
    return cmd


DETECTION_LOG_HEADER = "stamp,class_name,confidence,u,v,w,h,depth"


def parse_detection_log(text: str) -> list[Detection]:
    """Read the detection CSV; the depth column may be empty."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    start = 1 if lines[0].replace(" ", "").startswith("stamp,") else 0
    out = []
    for i, line in enumerate(lines[start:], start=start + 1):
        parts = line.split(",")
        if len(parts) != 8:
            raise ValueError(f"detection log line {i}: expected 8 fields, got {len(parts)}")
        try:
            depth = float(parts[7]) if parts[7].strip() else None
            out.append(Detection(stamp=float(parts[0]), class_name=parts[1].strip(),
                                 confidence=float(parts[2]),
                                 bbox=(float(parts[3]), float(parts[4]),
                                       float(parts[5]), float(parts[6])),
                                 depth=depth))
        except ValueError as e:
            raise ValueError(f"detection log line {i}: {e}") from e
    return out


def write_detection_log(dets: list[Detection], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DETECTION_LOG_HEADER + "\n")
        for d in dets:
            depth = "" if d.depth is None else repr(float(d.depth))
            u, v, w, h = (float(b) for b in d.bbox)
            fh.write(f"{float(d.stamp)!r},{d.class_name},{float(d.confidence)!r},"
                     f"{u!r},{v!r},{w!r},{h!r},{depth}\n")
