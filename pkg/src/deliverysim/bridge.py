"""Teleoperation wire protocol and operator-session state machine.

Messages are single-line JSON objects (newline-delimited on the wire);
unknown fields are ignored and field order carries no meaning. MISS ranges
travel as JSON null. The session enforces the safety rules: ESTOP always
wins, stale sequence numbers are dropped, and a watchdog demotes a silent
teleop link to ESTOP. Everything here is transport-free; the network layer
lives in `server`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .geom import Twist2D

MAX_FRAME_BYTES = 64 * 1024
MAP_BUDGET_CHARS = 48 * 1024        # leave headroom for the rest of the frame
MAX_SCAN_RANGES = 180

CELL_OCCUPIED = 0
CELL_FREE = 254
CELL_UNKNOWN = 205


class ProtocolError(ValueError):
    """Malformed or unacceptable wire message."""


class Mode(Enum):
    AUTO = "auto"
    TELEOP = "teleop"
    ESTOP = "estop"


class CommandKind(Enum):
    VEL = "vel"
    MODE = "mode"
    ESTOP = "estop"
    PING = "ping"


@dataclass(frozen=True)
class OperatorCommand:
    kind: CommandKind
    seq: int
    stamp: float = 0.0
    v: float = 0.0
    w: float = 0.0
    mode: Mode | None = None
    token: str = ""


class CommandMsg(BaseModel):
    model_config = ConfigDict(extra="ignore")

    t: Literal["cmd"]
    kind: Literal["vel", "mode", "estop", "ping"]
    seq: int
    stamp: float = 0.0
    v: float = 0.0
    w: float = 0.0
    mode: Optional[Literal["auto", "teleop", "estop"]] = None
    token: str = ""


class MapPayload(BaseModel):
    model_config = ConfigDict(extra="ignore")

    w: int
    h: int
    full: Optional[list[list[int]]] = None
    delta: Optional[list[list[int]]] = None
    # placement metadata so a console can draw poses over the grid
    res: Optional[float] = None
    ox: Optional[float] = None
    oy: Optional[float] = None


class TelemetryFrame(BaseModel):
    """One sim-to-console message; `map` is absent when nothing changed."""

    model_config = ConfigDict(extra="ignore")

    t: Literal["tele"] = "tele"
    stamp: float
    mode: Literal["auto", "teleop", "estop"]
    truth: Optional[list[float]] = None
    ekf: list[float]
    mcl: Optional[list[float]] = None
    mcl_cov: Optional[float] = None
    scan: list[Optional[float]] = []
    map: Optional[MapPayload] = None
    wp: Optional[int] = None
    wp_xy: Optional[list[float]] = None
    echo: Optional[int] = None


def decode_command(data: bytes | str) -> OperatorCommand:
    text = data.decode("utf-8", errors="strict") if isinstance(data, bytes) else data
    try:
        msg = CommandMsg.model_validate_json(text)
    except (ValidationError, UnicodeDecodeError) as e:
        raise ProtocolError(f"bad command: {e}") from e
    return OperatorCommand(
        kind=CommandKind(msg.kind), seq=msg.seq, stamp=msg.stamp,
        v=msg.v, w=msg.w,
        mode=None if msg.mode is None else Mode(msg.mode),
        token=msg.token)


def encode_command(c: OperatorCommand) -> bytes:
    payload: dict = {"t": "cmd", "kind": c.kind.value, "seq": c.seq,
                     "stamp": c.stamp, "token": c.token}
    if c.kind is CommandKind.VEL:
        payload["v"] = c.v
        payload["w"] = c.w
    if c.mode is not None:
        payload["mode"] = c.mode.value
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")


def encode_telemetry(frame: TelemetryFrame) -> bytes:
    data = (frame.model_dump_json(exclude_none=True) + "\n").encode("utf-8")
    if len(data) > MAX_FRAME_BYTES:
        raise ProtocolError(f"telemetry frame of {len(data)} bytes exceeds "
                            f"{MAX_FRAME_BYTES}")
    return data


def decode_telemetry(data: bytes | str) -> TelemetryFrame:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        return TelemetryFrame.model_validate_json(text)
    except ValidationError as e:
        raise ProtocolError(f"bad telemetry: {e}") from e


def error_frame(message: str, echo: int | None = None) -> bytes:
    payload: dict = {"t": "err", "msg": message}
    if echo is not None:
        payload["echo"] = echo
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")


def busy_frame() -> bytes:
    return b'{"t":"busy"}\n'


def watchdog(last_cmd_stamp: float | None, now: float, timeout: float = 0.5) -> bool:
    """True while the link is alive; False signals FALLBACK."""
    if timeout <= 0:
        raise ValueError(f"watchdog timeout must be positive, got {timeout}")
    if last_cmd_stamp is None:
        return False
    return (now - last_cmd_stamp) <= timeout


def _rle_runs(flat_new: np.ndarray, flat_ref: np.ndarray) -> list[list[int]]:
    """Runs [start, length, value] covering every cell where new differs from ref."""
    idx = np.flatnonzero(flat_new != flat_ref)
    if idx.size == 0:
        return []
    vals = flat_new[idx].astype(int)
    breaks = np.flatnonzero((np.diff(idx) != 1) | (np.diff(vals) != 0)) + 1
    runs = []
    for group_idx, group_val in zip(np.split(idx, breaks), np.split(vals, breaks)):
        runs.append([int(group_idx[0]), int(len(group_idx)), int(group_val[0])])
    return runs


def apply_runs(grid: np.ndarray, runs: list[list[int]]) -> None:
    """Apply RLE runs in place to a flat uint8 view of the receiver grid."""
    flat = grid.reshape(-1)
    for start, length, value in runs:
        if start < 0 or length < 1 or start + length > flat.size:
            raise ProtocolError(f"map run [{start}, {length}] outside grid")
        flat[start:start + length] = value


class MapStreamEncoder:
    """Streams a tri-state grid as RLE deltas, chunked under the frame cap.

    `sent` always mirrors exactly what a receiver that applied every emitted
    run holds, so reconstruction is byte-identical no matter how the runs
    were split across frames.
    """

    def __init__(self, width: int, height: int,
                 budget_chars: int = MAP_BUDGET_CHARS):
        self.width = width
        self.height = height
        self.budget = budget_chars
        self.sent = np.full(width * height, CELL_UNKNOWN, dtype=np.uint8)
        self._pending: list[list[int]] = []
        self._pending_full = False

    def reset(self) -> None:
        """Forget the receiver state (called on console connect)."""
        self.sent.fill(CELL_UNKNOWN)
        self._pending = []
        self._pending_full = True

    def next_payload(self, current: np.ndarray) -> MapPayload | None:
        """Payload for the next frame, or None when the receiver is current."""
        flat = current.reshape(-1)
        if flat.size != self.sent.size:
            raise ValueError("map size changed mid-stream")
        if not self._pending:
            runs = _rle_runs(flat, self.sent)
            if not runs and not self._pending_full:
                return None
            self._pending = runs

        chunk: list[list[int]] = []
        used = 0
        while self._pending:
            run = self._pending[0]
            cost = len(f"[{run[0]},{run[1]},{run[2]}],")
            if chunk and used + cost > self.budget:
                break
            chunk.append(self._pending.pop(0))
            used += cost
        apply_runs(self.sent.reshape(1, -1), chunk)

        full = self._pending_full
        self._pending_full = False
        if full:
            return MapPayload(w=self.width, h=self.height, full=chunk)
        return MapPayload(w=self.width, h=self.height, delta=chunk)


class MapStreamDecoder:
    """Console-side mirror: applies full/delta payloads in order."""

    def __init__(self):
        self.grid: np.ndarray | None = None

    def apply(self, payload: MapPayload) -> np.ndarray:
        if payload.full is not None:
            self.grid = np.full((payload.h, payload.w), CELL_UNKNOWN, dtype=np.uint8)
            apply_runs(self.grid, payload.full)
        else:
            if self.grid is None:
                raise ProtocolError("delta received before any full map frame")
            if self.grid.shape != (payload.h, payload.w):
                raise ProtocolError("map delta dimensions do not match")
            apply_runs(self.grid, payload.delta or [])
        return self.grid


def downsample_scan(ranges: np.ndarray, limit: int = MAX_SCAN_RANGES) -> list[float | None]:
    """At most `limit` uniformly strided ranges; MISS becomes None."""
    n = len(ranges)
    if n == 0:
        return []
    stride = max(1, math.ceil(n / limit))
    picked = ranges[::stride]
    return [None if not math.isfinite(r) else round(float(r), 3) for r in picked]


@dataclass
class SessionConfig:
    token: str = "operator"
    watchdog_timeout: float = 0.5
    v_max: float = 1.0
    w_max: float = 1.0
    telemetry_rate: float = 10.0


@dataclass
class BridgeSession:
    """Single-operator command gate, stepped at sim-tick boundaries."""

    config: SessionConfig = field(default_factory=SessionConfig)
    mode: Mode = Mode.AUTO
    last_seq: int = -1
    pending_twist: Twist2D = field(default_factory=Twist2D)
    last_cmd_stamp: float | None = None
    connected: bool = False
    events: list[tuple[float, str, str]] = field(default_factory=list)
    applied_seq: int | None = None

    def on_connect(self, now: float) -> None:
        self.connected = True
        self.last_seq = -1
        self.last_cmd_stamp = now

    def on_disconnect(self, now: float) -> None:
        self.connected = False
        if self.mode is Mode.TELEOP:
            self._fallback(now, "operator disconnected")

    def _fallback(self, now: float, why: str) -> None:
        self.mode = Mode.ESTOP
        self.pending_twist = Twist2D(0.0, 0.0)
        self.events.append((now, "fallback", why))

    def handle_command(self, cmd: OperatorCommand, now: float) -> bytes | None:
        """Apply one command; returns a reply frame for protocol errors."""
        if cmd.token != self.config.token:
            return error_frame("bad token", echo=cmd.seq)
        if cmd.seq <= self.last_seq:
            return None  # stale: discarded silently
        self.last_seq = cmd.seq

        if self.mode is Mode.ESTOP and not (
                cmd.kind is CommandKind.MODE and cmd.mode is Mode.AUTO):
            return error_frame("estop latched; send mode=auto to clear",
                               echo=cmd.seq)

        if cmd.kind is CommandKind.ESTOP:
            self.last_cmd_stamp = now
            self._fallback(now, "operator estop")
            self.applied_seq = cmd.seq
            return None
        if cmd.kind is CommandKind.MODE:
            if cmd.mode is None or cmd.mode is Mode.ESTOP:
                return error_frame("mode command needs auto|teleop", echo=cmd.seq)
            self.mode = cmd.mode
            self.pending_twist = Twist2D(0.0, 0.0)
            self.last_cmd_stamp = now
            self.applied_seq = cmd.seq
            self.events.append((now, "mode", cmd.mode.value))
            return None
        if cmd.kind is CommandKind.VEL:
            if abs(cmd.v) > self.config.v_max + 1e-9 \
                    or abs(cmd.w) > self.config.w_max + 1e-9:
                return error_frame("velocity outside teleop limits", echo=cmd.seq)
            self.pending_twist = Twist2D(cmd.v, cmd.w)
            self.last_cmd_stamp = now
            self.applied_seq = cmd.seq
            return None
        # PING
        self.last_cmd_stamp = now
        self.applied_seq = cmd.seq
        return None

    def check_watchdog(self, now: float) -> None:
        if self.mode is Mode.TELEOP and not watchdog(
                self.last_cmd_stamp, now, self.config.watchdog_timeout):
            self._fallback(now, "watchdog timeout")

    def effective_twist(self, auto_twist: Twist2D) -> Twist2D:
        if self.mode is Mode.AUTO:
            return auto_twist
        if self.mode is Mode.TELEOP:
            return self.pending_twist
        return Twist2D(0.0, 0.0)
