import { describe, expect, it } from "vitest";

import {
  CELL_FREE,
  CELL_OCCUPIED,
  CELL_UNKNOWN,
  encodeCommand,
  MapMirror,
  parseFrame,
} from "../src/protocol.js";

describe("command encoding", () => {
  it("emits a single JSON object with the wire fields", () => {
    const line = encodeCommand({
      kind: "vel", seq: 4, stamp: 1.5, v: 0.5, w: -0.2, token: "operator",
    });
    const data = JSON.parse(line);
    expect(data).toEqual({
      t: "cmd", kind: "vel", seq: 4, stamp: 1.5, v: 0.5, w: -0.2,
      token: "operator",
    });
  });

  it("mode commands carry the target mode", () => {
    const data = JSON.parse(encodeCommand({
      kind: "mode", seq: 1, stamp: 0, mode: "teleop", token: "tk",
    }));
    expect(data.mode).toBe("teleop");
    expect(data.v).toBeUndefined();
  });
});

describe("frame parsing", () => {
  it("round-trips telemetry", () => {
    const frame = parseFrame(
      '{"t":"tele","stamp":2.5,"mode":"auto","ekf":[1,2,0.1],' +
      '"scan":[1.5,null],"future_field":42}');
    expect(frame.t).toBe("tele");
    if (frame.t === "tele") {
      expect(frame.scan).toEqual([1.5, null]);
      expect(frame.ekf).toEqual([1, 2, 0.1]);
    }
  });

  it("recognizes busy and error frames", () => {
    expect(parseFrame('{"t":"busy"}').t).toBe("busy");
    expect(parseFrame('{"t":"err","msg":"nope"}').t).toBe("err");
  });

  it("rejects unknown frame types", () => {
    expect(() => parseFrame('{"t":"wat"}')).toThrow();
  });
});

describe("map mirror", () => {
  it("reconstructs full + deltas byte-identically", () => {
    const mirror = new MapMirror();
    mirror.apply({ w: 4, h: 3, full: [[0, 12, CELL_UNKNOWN], [1, 2, CELL_FREE]] });
    mirror.apply({ w: 4, h: 3, delta: [[5, 3, CELL_OCCUPIED]] });
    mirror.apply({ w: 4, h: 3, delta: [[0, 1, CELL_FREE]] });

    const want = new Uint8Array(12).fill(CELL_UNKNOWN);
    want.fill(CELL_FREE, 1, 3);
    want.fill(CELL_OCCUPIED, 5, 8);
    want[0] = CELL_FREE;
    expect(Array.from(mirror.grid!)).toEqual(Array.from(want));
  });

  it("applies runs in order within one payload", () => {
    const mirror = new MapMirror();
    mirror.apply({ w: 2, h: 1, full: [[0, 2, CELL_FREE], [1, 1, CELL_OCCUPIED]] });
    expect(Array.from(mirror.grid!)).toEqual([CELL_FREE, CELL_OCCUPIED]);
  });

  it("rejects a delta before any full frame", () => {
    const mirror = new MapMirror();
    expect(() => mirror.apply({ w: 2, h: 2, delta: [[0, 1, 0]] })).toThrow();
  });

  it("rejects runs outside the grid", () => {
    const mirror = new MapMirror();
    expect(() => mirror.apply({ w: 2, h: 2, full: [[3, 4, 0]] })).toThrow();
  });

  it("keeps placement metadata", () => {
    const mirror = new MapMirror();
    mirror.apply({ w: 1, h: 1, full: [], res: 0.1, ox: -2, oy: 3 });
    expect(mirror.res).toBe(0.1);
    expect(mirror.ox).toBe(-2);
    expect(mirror.oy).toBe(3);
  });
});
