// Wire protocol shared with the bridge: one JSON object per line, unknown
// fields ignored, MISS ranges travel as null.

export const CELL_OCCUPIED = 0;
export const CELL_FREE = 254;
export const CELL_UNKNOWN = 205;

export type RunMode = "auto" | "teleop" | "estop";

export interface MapPayload {
  w: number;
  h: number;
  full?: number[][] | null;
  delta?: number[][] | null;
  res?: number | null;
  ox?: number | null;
  oy?: number | null;
}

export interface Telemetry {
  t: "tele";
  stamp: number;
  mode: RunMode;
  truth?: number[] | null;
  ekf: number[];
  mcl?: number[] | null;
  mcl_cov?: number | null;
  scan?: (number | null)[];
  map?: MapPayload | null;
  wp?: number | null;
  echo?: number | null;
}

export interface ErrorFrame {
  t: "err";
  msg: string;
  echo?: number;
}

export interface BusyFrame {
  t: "busy";
}

export type ServerFrame = Telemetry | ErrorFrame | BusyFrame;

export type CommandKind = "vel" | "mode" | "estop" | "ping";

export interface Command {
  kind: CommandKind;
  seq: number;
  stamp: number;
  v?: number;
  w?: number;
  mode?: "auto" | "teleop";
  token: string;
}

export function parseFrame(line: string): ServerFrame {
  const data = JSON.parse(line);
  if (data.t === "tele" || data.t === "err" || data.t === "busy") {
    return data as ServerFrame;
  }
  throw new Error(`unknown frame type: ${data.t}`);
}

export function encodeCommand(cmd: Command): string {
  const payload: Record<string, unknown> = {
    t: "cmd",
    kind: cmd.kind,
    seq: cmd.seq,
    stamp: cmd.stamp,
    token: cmd.token,
  };
  if (cmd.kind === "vel") {
    payload.v = cmd.v ?? 0;
    payload.w = cmd.w ?? 0;
  }
  if (cmd.mode !== undefined) {
    payload.mode = cmd.mode;
  }
  return JSON.stringify(payload);
}

/** Receiver-side occupancy mirror; applies full/delta runs in order. */
export class MapMirror {
  grid: Uint8Array | null = null;
  w = 0;
  h = 0;
  res = 0.05;
  ox = 0;
  oy = 0;

  apply(payload: MapPayload): void {
    if (payload.full != null) {
      this.w = payload.w;
      this.h = payload.h;
      this.grid = new Uint8Array(this.w * this.h).fill(CELL_UNKNOWN);
      this.applyRuns(payload.full);
    } else if (payload.delta != null) {
      if (this.grid === null) {
        throw new Error("map delta before any full frame");
      }
      if (payload.w !== this.w || payload.h !== this.h) {
        throw new Error("map delta dimensions do not match");
      }
      this.applyRuns(payload.delta);
    }
    if (payload.res != null) this.res = payload.res;
    if (payload.ox != null) this.ox = payload.ox;
    if (payload.oy != null) this.oy = payload.oy;
  }

  private applyRuns(runs: number[][]): void {
    const grid = this.grid!;
    for (const [start, length, value] of runs) {
      if (start < 0 || length < 1 || start + length > grid.length) {
        throw new Error(`map run [${start}, ${length}] outside grid`);
      }
      grid.fill(value, start, start + length);
    }
  }
}
