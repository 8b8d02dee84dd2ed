// Browser wiring: socket, keyboard, canvas. Configuration comes from the
// URL query: ?host=127.0.0.1:8750&token=operator&vmax=1.0&wmax=1.0

import { keysToCommand, toggleModeCommand, TeleopLimits } from "./input.js";
import {
  encodeCommand,
  MapMirror,
  parseFrame,
  RunMode,
  Telemetry,
} from "./protocol.js";
import { renderFrame, ViewState } from "./render.js";

const COMMAND_PERIOD_MS = 100; // 10 Hz while keys are held
const RENDER_PERIOD_MS = 66;   // ~15 fps

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

class Console {
  private readonly canvas: HTMLCanvasElement;
  private readonly ctx: CanvasRenderingContext2D;
  private readonly status: HTMLElement;
  private readonly hud: HTMLElement;
  private readonly token: string;
  private readonly limits: TeleopLimits;
  private sock: WebSocket | null = null;
  private seq = 0;
  private held = new Set<string>();
  private view: ViewState = { connected: false, tele: null, map: new MapMirror() };
  private lastError = "";

  constructor() {
    this.canvas = document.getElementById("view") as HTMLCanvasElement;
    this.ctx = this.canvas.getContext("2d")!;
    this.status = document.getElementById("status")!;
    this.hud = document.getElementById("hud")!;
    this.token = param("token", "operator");
    this.limits = {
      vMax: parseFloat(param("vmax", "1.0")),
      wMax: parseFloat(param("wmax", "1.0")),
    };
    this.connect(param("host", window.location.host || "127.0.0.1:8750"));
    this.bindKeys();
    window.setInterval(() => this.pumpCommands(), COMMAND_PERIOD_MS);
    window.setInterval(() => this.draw(), RENDER_PERIOD_MS);
  }

  private connect(host: string): void {
    const sock = new WebSocket(`ws://${host}/ws`);
    this.sock = sock;
    sock.onopen = () => {
      this.view.connected = true;
      this.status.textContent = `connected to ${host}`;
    };
    sock.onclose = () => {
      this.view.connected = false;
      this.view.tele = null;
      this.status.textContent = "disconnected - reload to retry";
    };
    sock.onmessage = (ev: MessageEvent) => this.onFrame(String(ev.data));
  }

  private onFrame(line: string): void {
    let frame;
    try {
      frame = parseFrame(line);
    } catch {
      return;
    }
    if (frame.t === "busy") {
      this.status.textContent = "another operator is connected (BUSY)";
      return;
    }
    if (frame.t === "err") {
      this.lastError = frame.msg;
      return;
    }
    if (frame.map != null) {
      this.view.map.apply(frame.map);
    }
    this.view.tele = frame as Telemetry;
  }

  private mode(): RunMode {
    return this.view.tele?.mode ?? "auto";
  }

  private bindKeys(): void {
    window.addEventListener("keydown", (ev) => {
      if (ev.repeat) return;
      if (ev.key === "m" || ev.key === "M") {
        this.send(encodeCommand(toggleModeCommand(this.mode(), this.nextSeq(),
                                                  this.token, this.stamp())));
        return;
      }
      this.held.add(ev.key === " " ? " " : ev.key.toLowerCase());
    });
    window.addEventListener("keyup", (ev) => {
      this.held.delete(ev.key === " " ? " " : ev.key.toLowerCase());
    });
    window.addEventListener("blur", () => this.held.clear());
  }

  private nextSeq(): number {
    this.seq += 1;
    return this.seq;
  }

  private stamp(): number {
    return Date.now() / 1000;
  }

  private pumpCommands(): void {
    if (!this.view.connected) return;
    const cmd = keysToCommand(this.held, this.limits, this.seq + 1,
                              this.mode(), this.token, this.stamp());
    if (cmd === null) return;
    this.seq = cmd.seq;
    this.send(encodeCommand(cmd));
  }

  private send(line: string): void {
    if (this.sock !== null && this.sock.readyState === WebSocket.OPEN) {
      this.sock.send(line);
    }
  }

  private draw(): void {
    const { width, height } = this.canvas;
    const pixels = renderFrame(this.view, width, height);
    const image = this.ctx.createImageData(width, height);
    image.data.set(pixels);
    this.ctx.putImageData(image, 0, 0);
    const tele = this.view.tele;
    if (tele !== null) {
      const parts = [
        `t=${tele.stamp.toFixed(1)}s`,
        `mode=${tele.mode.toUpperCase()}`,
        `ekf=(${tele.ekf[0].toFixed(2)}, ${tele.ekf[1].toFixed(2)})`,
      ];
      if (tele.mcl != null) {
        parts.push(`mcl=(${tele.mcl[0].toFixed(2)}, ${tele.mcl[1].toFixed(2)})`);
      }
      if (tele.wp != null) parts.push(`wp=${tele.wp}`);
      if (this.lastError) parts.push(`last error: ${this.lastError}`);
      this.hud.textContent = parts.join("   ");
      this.hud.className = tele.mode;
    } else {
      this.hud.textContent = "waiting for telemetry - W/S/A/D drive, " +
        "M toggles teleop, space is the emergency stop";
      this.hud.className = "";
    }
  }
}

new Console();
