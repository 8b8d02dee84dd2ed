"""Low-level control: two PIDs plus a pure-pursuit waypoint tracker.

One PID regulates linear velocity, the other angular velocity; both emit
normalized actuator effort in [-1, 1] that the harness scales onto the
vehicle's speed/steer setpoints. The tracker turns a waypoint mission into
twist setpoints for the PIDs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geom import Pose2D, Twist2D


@dataclass(frozen=True)
class PidController:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    i_term: float = 0.0
    prev_error: float = 0.0
    out_min: float = -1.0
    out_max: float = 1.0
    i_min: float = -1.0
    i_max: float = 1.0

    def __post_init__(self) -> None:
        if self.out_min >= self.out_max:
            raise ValueError("out_min must be below out_max")
        if self.i_min >= self.i_max:
            raise ValueError("i_min must be below i_max")


def pid_step(c: PidController, setpoint: float, measured: float,
             dt: float) -> tuple[float, PidController]:
    """One control tick: returns (clamped output, updated controller)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    error = setpoint - measured
    i_term = max(c.i_min, min(c.i_max, c.i_term + c.ki * error * dt))
    derivative = c.kd * (error - c.prev_error) / dt
    output = max(c.out_min, min(c.out_max, c.kp * error + i_term + derivative))
    return output, replace(c, i_term=i_term, prev_error=error)


@dataclass(frozen=True)
class Mission:
    waypoints: tuple[Pose2D, ...]
    goal_tol_xy: float = 0.7
    goal_tol_theta: float = math.radians(20.0)
    cruise_speed: float = 1.0
    lookahead: float = 1.5
    corner_radius: float = 1.0      # fillet radius of the planned path

    def __post_init__(self) -> None:
        if len(self.waypoints) < 1:
            raise ValueError("mission needs at least one waypoint")
        if min(self.goal_tol_xy, self.goal_tol_theta, self.cruise_speed,
               self.lookahead) <= 0:
            raise ValueError("mission tolerances and speeds must be positive")
        if self.corner_radius < 0:
            raise ValueError("corner_radius must be non-negative")


def _densify(points: np.ndarray, spacing: float = 0.1) -> np.ndarray:
    """Insert points along each leg so the tracker can aim at the line itself."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        length = float(np.linalg.norm(b - a))
        n = max(1, int(math.ceil(length / spacing)))
        for k in range(1, n + 1):
            out.append(a + (b - a) * (k / n))
    return np.asarray(out)


def fillet_polyline(points: np.ndarray, radius: float,
                    spacing: float = 0.1) -> np.ndarray:
    """Round every interior vertex with a circular arc of at most `radius`.

    The fillet shrinks where a leg is too short for its tangent length, and
    near-straight vertices are left alone. The result is a dense polyline
    a lookahead tracker can follow within the vehicle's steering limits.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 3 or radius <= 0:
        return _densify(points, spacing)
    out = [points[0]]
    entry = points[0]
    for i in range(1, len(points) - 1):
        prev_pt, c, nxt = entry, points[i], points[i + 1]
        u1 = c - prev_pt
        u2 = nxt - c
        l1, l2 = np.linalg.norm(u1), np.linalg.norm(u2)
        if l1 < 1e-9 or l2 < 1e-9:
            continue
        u1, u2 = u1 / l1, u2 / l2
        cross = u1[0] * u2[1] - u1[1] * u2[0]
        dot = float(np.clip(u1 @ u2, -1.0, 1.0))
        turn = math.atan2(cross, dot)
        if abs(turn) < math.radians(3.0) or abs(turn) > math.radians(175.0):
            out.extend(_densify(np.array([entry, c]), spacing)[1:])
            entry = c
            continue
        tangent = radius * math.tan(abs(turn) / 2.0)
        tangent = min(tangent, 0.5 * l1, 0.5 * l2)
        r = tangent / math.tan(abs(turn) / 2.0)
        p_in = c - u1 * tangent
        p_out = c + u2 * tangent
        out.extend(_densify(np.array([entry, p_in]), spacing)[1:])
        side = 1.0 if turn > 0 else -1.0
        n1 = side * np.array([-u1[1], u1[0]])
        center = p_in + r * n1
        a0 = math.atan2(p_in[1] - center[1], p_in[0] - center[0])
        n_arc = max(2, int(math.ceil(abs(turn) * r / spacing)))
        for k in range(1, n_arc + 1):
            a = a0 + side * abs(turn) * k / n_arc
            out.append(center + r * np.array([math.cos(a), math.sin(a)]))
        entry = p_out
    out.extend(_densify(np.array([entry, points[-1]]), spacing)[1:])
    return np.asarray(out)


def mission_reference_path(m: Mission, start: Pose2D,
                           spacing: float = 0.05) -> np.ndarray:
    """The planned path the tracker is asked to follow, for run evaluation."""
    pts = np.array([[start.x, start.y]] + [[w.x, w.y] for w in m.waypoints])
    return fillet_polyline(pts, m.corner_radius, spacing)


def pure_pursuit(path: list[Pose2D] | np.ndarray, pose: Pose2D,
                 lookahead: float, cruise: float,
                 slow_radius: float | None = None) -> Twist2D:
    """Steer toward the first path point at least `lookahead` away.

    Curvature follows the circular-arc construction 2*y_target / L_d^2 in
    the body frame; speed tapers linearly inside `slow_radius` of the path
    end so the vehicle can settle on the final waypoint.
    """
    if len(path) == 0:
        raise ValueError("pure_pursuit needs a non-empty path")
    if isinstance(path[0], Pose2D):
        pts = np.asarray([[p.x, p.y] for p in path], dtype=float)
    else:
        pts = np.asarray(path, dtype=float)
    if slow_radius is None:
        slow_radius = lookahead

    d = np.linalg.norm(pts - [pose.x, pose.y], axis=1)
    closest = int(np.argmin(d))
    # walk the path itself: the target sits `lookahead` of arc length past
    # the closest path point
    seg = np.linalg.norm(np.diff(pts[closest:], axis=0), axis=1) if closest < len(pts) - 1 \
        else np.empty(0)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    ahead = np.flatnonzero(arc >= lookahead)
    target = pts[closest + int(ahead[0])] if ahead.size else pts[-1]

    c, s = math.cos(-pose.theta), math.sin(-pose.theta)
    bx = c * (target[0] - pose.x) - s * (target[1] - pose.y)
    by = s * (target[0] - pose.x) + c * (target[1] - pose.y)
    ld = math.hypot(bx, by)
    if ld < 1e-9:
        return Twist2D(0.0, 0.0)
    kappa = 2.0 * by / (ld * ld)

    d_goal = float(np.linalg.norm(pts[-1] - [pose.x, pose.y]))
    v = cruise
    if d_goal < slow_radius:
        v = cruise * max(d_goal / slow_radius, 0.15)
    return Twist2D(v, kappa * v)


@dataclass(frozen=True)
class MissionStatus:
    twist: Twist2D
    active_waypoint: int
    done: bool


def mission_step(m: Mission, pose: Pose2D, active: int = 0,
                 leg_start: Pose2D | None = None) -> MissionStatus:
    """Advance the waypoint sequence and emit the tracking setpoint.

    Waypoints count as reached on position alone; pure pursuit does not
    regulate final heading. The recorded heading tolerance is for run
    evaluation, not sequencing. `leg_start` anchors the first leg (the
    pose where the mission began); later legs start at the previous
    waypoint.
    """
    while active < len(m.waypoints):
        wp = m.waypoints[active]
        if math.hypot(wp.x - pose.x, wp.y - pose.y) <= m.goal_tol_xy:
            active += 1
        else:
            break
    if active >= len(m.waypoints):
        return MissionStatus(Twist2D(0.0, 0.0), active, True)

    anchor = m.waypoints[active - 1] if active > 0 else (leg_start or pose)
    wp = m.waypoints[active]
    final_leg = active == len(m.waypoints) - 1
    # track the planned (filleted) path across the active corner; advancement
    # still requires passing within goal_tol of the vertex itself
    points = [[anchor.x, anchor.y], [wp.x, wp.y]]
    if not final_leg:
        nxt = m.waypoints[active + 1]
        points.append([nxt.x, nxt.y])
    path = fillet_polyline(np.array(points), m.corner_radius)

    # slow when the heading is far off the leg (mission start, tight turns)
    bearing = math.atan2(wp.y - pose.y, wp.x - pose.x) - pose.theta
    scale = max(0.3, math.cos(bearing)) if abs(math.cos(bearing)) > 1e-9 else 0.3
    twist = pure_pursuit(path, pose, m.lookahead, m.cruise_speed * scale,
                         slow_radius=m.lookahead if final_leg else 1e-9)
    return MissionStatus(twist, active, False)
