// Keyboard-to-command mapping. W/S drive, A/D steer (combinable), space is
// the emergency stop. The caller repeats this at 10 Hz while driving; in
// teleop an empty key set still produces an explicit zero velocity so the
// bridge watchdog stays fed while braking.

import { Command, RunMode } from "./protocol.js";

export interface TeleopLimits {
  vMax: number;
  wMax: number;
}

export function keysToCommand(
  held: ReadonlySet<string>,
  limits: TeleopLimits,
  seq: number,
  mode: RunMode,
  token: string,
  stamp = 0,
): Command | null {
  if (held.has(" ") || held.has("Space")) {
    return { kind: "estop", seq, stamp, token };
  }
  let v = 0;
  let w = 0;
  if (held.has("w") || held.has("W")) v += limits.vMax;
  if (held.has("s") || held.has("S")) v -= limits.vMax;
  if (held.has("a") || held.has("A")) w += limits.wMax;
  if (held.has("d") || held.has("D")) w -= limits.wMax;
  if (v !== 0 || w !== 0) {
    return { kind: "vel", seq, stamp, v, w, token };
  }
  if (mode === "teleop") {
    return { kind: "vel", seq, stamp, v: 0, w: 0, token };
  }
  return null;
}

/** The M key toggles between autonomous and teleoperated driving. */
export function toggleModeCommand(
  current: RunMode,
  seq: number,
  token: string,
  stamp = 0,
): Command {
  const next = current === "teleop" ? "auto" : "teleop";
  return { kind: "mode", seq, stamp, mode: next, token };
}

/** Clearing a latched emergency stop requires an explicit switch to auto. */
export function clearEstopCommand(seq: number, token: string, stamp = 0): Command {
  return { kind: "mode", seq, stamp, mode: "auto", token };
}
