// Pure frame renderer: console state in, RGBA pixels out. Keeping this free
// of canvas APIs makes the golden-image test runnable without a DOM; the
// browser side just blits the buffer with putImageData.

import {
  CELL_FREE,
  CELL_OCCUPIED,
  MapMirror,
  Telemetry,
} from "./protocol.js";

export interface ViewState {
  connected: boolean;
  tele: Telemetry | null;
  map: MapMirror;
}

type Color = [number, number, number];

const COLOR_BG: Color = [24, 24, 28];
const COLOR_UNKNOWN: Color = [205, 205, 205];
const COLOR_FREE: Color = [255, 255, 255];
const COLOR_OCCUPIED: Color = [0, 0, 0];
const COLOR_SCAN: Color = [255, 150, 150];
const COLOR_EKF: Color = [30, 90, 220];
const COLOR_MCL: Color = [235, 140, 20];
const COLOR_WAYPOINT: Color = [20, 170, 60];
const COLOR_ESTOP: Color = [220, 30, 30];
const COLOR_TELEOP: Color = [230, 180, 40];
const COLOR_SPLASH: Color = [60, 60, 70];

class Painter {
  constructor(
    readonly buf: Uint8ClampedArray,
    readonly width: number,
    readonly height: number,
  ) {}

  set(x: number, y: number, c: Color): void {
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) return;
    const i = (y * this.width + x) * 4;
    this.buf[i] = c[0];
    this.buf[i + 1] = c[1];
    this.buf[i + 2] = c[2];
    this.buf[i + 3] = 255;
  }

  fill(c: Color): void {
    for (let i = 0; i < this.width * this.height; i++) {
      this.buf[i * 4] = c[0];
      this.buf[i * 4 + 1] = c[1];
      this.buf[i * 4 + 2] = c[2];
      this.buf[i * 4 + 3] = 255;
    }
  }

  line(x0: number, y0: number, x1: number, y1: number, c: Color): void {
    let [x, y] = [Math.round(x0), Math.round(y0)];
    const [ex, ey] = [Math.round(x1), Math.round(y1)];
    const dx = Math.abs(ex - x);
    const dy = Math.abs(ey - y);
    const sx = x < ex ? 1 : -1;
    const sy = y < ey ? 1 : -1;
    let err = dx - dy;
    for (;;) {
      this.set(x, y, c);
      if (x === ex && y === ey) break;
      const e2 = 2 * err;
      if (e2 > -dy) {
        err -= dy;
        x += sx;
      }
      if (e2 < dx) {
        err += dx;
        y += sy;
      }
    }
  }

  triangle(pts: [number, number][], c: Color, filled: boolean): void {
    if (!filled) {
      this.line(pts[0][0], pts[0][1], pts[1][0], pts[1][1], c);
      this.line(pts[1][0], pts[1][1], pts[2][0], pts[2][1], c);
      this.line(pts[2][0], pts[2][1], pts[0][0], pts[0][1], c);
      return;
    }
    const xs = pts.map((p) => p[0]);
    const ys = pts.map((p) => p[1]);
    const minX = Math.floor(Math.min(...xs));
    const maxX = Math.ceil(Math.max(...xs));
    const minY = Math.floor(Math.min(...ys));
    const maxY = Math.ceil(Math.max(...ys));
    const [ax, ay] = pts[0];
    const [bx, by] = pts[1];
    const [cx, cy] = pts[2];
    const area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    if (Math.abs(area) < 1e-9) return;
    for (let y = minY; y <= maxY; y++) {
      for (let x = minX; x <= maxX; x++) {
        const w0 = (bx - x) * (cy - y) - (by - y) * (cx - x);
        const w1 = (cx - x) * (ay - y) - (cy - y) * (ax - x);
        const w2 = (ax - x) * (by - y) - (ay - y) * (bx - x);
        const neg = w0 < 0 || w1 < 0 || w2 < 0;
        const pos = w0 > 0 || w1 > 0 || w2 > 0;
        if (!(neg && pos)) this.set(x, y, c);
      }
    }
  }

  border(thickness: number, c: Color): void {
    for (let t = 0; t < thickness; t++) {
      for (let x = 0; x < this.width; x++) {
        this.set(x, t, c);
        this.set(x, this.height - 1 - t, c);
      }
      for (let y = 0; y < this.height; y++) {
        this.set(t, y, c);
        this.set(this.width - 1 - t, y, c);
      }
    }
  }
}

interface Viewport {
  ppm: number; // pixels per meter
  offX: number;
  offY: number;
  height: number;
}

function fitMap(map: MapMirror, width: number, height: number): Viewport {
  const margin = 8;
  const mapW = Math.max(map.w * map.res, 1e-6);
  const mapH = Math.max(map.h * map.res, 1e-6);
  const ppm = Math.min((width - 2 * margin) / mapW, (height - 2 * margin) / mapH);
  return {
    ppm,
    offX: margin - map.ox * ppm,
    offY: margin - map.oy * ppm,
    height,
  };
}

function toPixel(vp: Viewport, x: number, y: number): [number, number] {
  return [vp.offX + x * vp.ppm, vp.height - 1 - (vp.offY + y * vp.ppm)];
}

function drawRobot(p: Painter, vp: Viewport, pose: number[], c: Color,
                   filled: boolean): void {
  const [x, y, th] = pose;
  const body: [number, number][] = [
    [0.35, 0.0],
    [-0.2, 0.18],
    [-0.2, -0.18],
  ];
  const pts = body.map(([bx, by]) => {
    const wx = x + bx * Math.cos(th) - by * Math.sin(th);
    const wy = y + bx * Math.sin(th) + by * Math.cos(th);
    return toPixel(vp, wx, wy);
  }) as [number, number][];
  p.triangle(pts, c, filled);
}

export function renderFrame(view: ViewState, width: number,
                            height: number): Uint8ClampedArray {
  const p = new Painter(new Uint8ClampedArray(width * height * 4), width, height);

  if (!view.connected || view.tele === null) {
    p.fill(COLOR_SPLASH);
    for (let d = -height; d < width; d += 14) {
      p.line(d, 0, d + height, height - 1, [80, 80, 92]);
    }
    return p.buf;
  }

  p.fill(COLOR_BG);
  const tele = view.tele;
  const map = view.map;
  const vp = fitMap(map, width, height);

  if (map.grid !== null) {
    for (let py = 0; py < height; py++) {
      for (let px = 0; px < width; px++) {
        const wx = (px - vp.offX) / vp.ppm;
        const wy = (vp.height - 1 - py - vp.offY) / vp.ppm;
        const col = Math.floor((wx - map.ox) / map.res);
        const row = Math.floor((wy - map.oy) / map.res);
        if (col < 0 || row < 0 || col >= map.w || row >= map.h) continue;
        const cell = map.grid[row * map.w + col];
        const color = cell === CELL_OCCUPIED ? COLOR_OCCUPIED
          : cell === CELL_FREE ? COLOR_FREE : COLOR_UNKNOWN;
        p.set(px, py, color);
      }
    }
  }

  const scan = tele.scan ?? [];
  if (scan.length > 0) {
    const [rx, ry, rth] = tele.ekf;
    const [px0, py0] = toPixel(vp, rx, ry);
    const inc = (2 * Math.PI) / scan.length;
    for (let i = 0; i < scan.length; i++) {
      const r = scan[i];
      if (r === null) continue;
      const bearing = rth - Math.PI + i * inc;
      const [px1, py1] = toPixel(vp, rx + r * Math.cos(bearing),
                                 ry + r * Math.sin(bearing));
      p.line(px0, py0, px1, py1, COLOR_SCAN);
    }
  }

  const wpXy = (tele as { wp_xy?: number[] | null }).wp_xy;
  if (wpXy != null) {
    const [wx, wy] = toPixel(vp, wpXy[0], wpXy[1]);
    for (let d = -5; d <= 5; d++) {
      p.set(Math.round(wx) + d, Math.round(wy) + (5 - Math.abs(d)), COLOR_WAYPOINT);
      p.set(Math.round(wx) + d, Math.round(wy) - (5 - Math.abs(d)), COLOR_WAYPOINT);
    }
  }

  if (tele.mcl != null) {
    drawRobot(p, vp, tele.mcl, COLOR_MCL, false);
  }
  drawRobot(p, vp, tele.ekf, COLOR_EKF, true);

  if (tele.mode === "estop") {
    p.border(5, COLOR_ESTOP);
  } else if (tele.mode === "teleop") {
    p.border(2, COLOR_TELEOP);
  }
  return p.buf;
}
