import { describe, expect, it } from "vitest";

import { clearEstopCommand, keysToCommand, toggleModeCommand } from "../src/input.js";

const LIMITS = { vMax: 1.0, wMax: 0.8 };

function cmd(keys: string[], mode: "auto" | "teleop" | "estop" = "teleop",
             seq = 1) {
  return keysToCommand(new Set(keys), LIMITS, seq, mode, "tk", 2.0);
}

describe("keys to command table", () => {
  it("W drives forward at v_max", () => {
    expect(cmd(["w"])).toEqual({
      kind: "vel", seq: 1, stamp: 2.0, v: 1.0, w: 0, token: "tk",
    });
  });

  it("W+A combines forward with left turn", () => {
    expect(cmd(["w", "a"])).toEqual({
      kind: "vel", seq: 1, stamp: 2.0, v: 1.0, w: 0.8, token: "tk",
    });
  });

  it("S reverses, D turns right", () => {
    expect(cmd(["s", "d"])).toMatchObject({ v: -1.0, w: -0.8 });
  });

  it("opposing keys cancel", () => {
    expect(cmd(["w", "s"], "auto")).toBeNull();
  });

  it("space is ESTOP regardless of other keys", () => {
    expect(cmd([" ", "w", "a"])).toEqual({
      kind: "estop", seq: 1, stamp: 2.0, token: "tk",
    });
  });

  it("no keys in teleop emits an explicit zero velocity", () => {
    expect(cmd([])).toMatchObject({ kind: "vel", v: 0, w: 0 });
  });

  it("no keys outside teleop emits nothing", () => {
    expect(cmd([], "auto")).toBeNull();
    expect(cmd([], "estop")).toBeNull();
  });

  it("seq is passed through untouched", () => {
    expect(cmd(["w"], "teleop", 41)!.seq).toBe(41);
  });
});

describe("mode helpers", () => {
  it("M toggles auto and teleop", () => {
    expect(toggleModeCommand("auto", 1, "tk").mode).toBe("teleop");
    expect(toggleModeCommand("teleop", 2, "tk").mode).toBe("auto");
    expect(toggleModeCommand("estop", 3, "tk").mode).toBe("teleop");
  });

  it("estop clear goes through auto", () => {
    expect(clearEstopCommand(5, "tk")).toMatchObject({
      kind: "mode", mode: "auto", seq: 5,
    });
  });
});
