"""FastAPI network layer: WebSocket teleoperation alongside the paced sim.

Two logical activities only: the wall-clock-paced sim thread (sole owner of
simulation state) and the asyncio connection handler. They talk through two
queues: raw command lines in, encoded telemetry/reply frames out. A second
concurrent operator is refused with a BUSY frame.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse

from .bridge import busy_frame
from .simloop import SimRunner, write_artifacts


class TeleopHub:
    """Queue pair plus single-operator connection bookkeeping."""

    def __init__(self):
        self.commands: "queue.Queue[tuple[str, str | None]]" = queue.Queue()
        self.telemetry: "queue.Queue[bytes]" = queue.Queue(maxsize=256)
        self._lock = threading.Lock()
        self._connected = False

    def try_connect(self) -> bool:
        with self._lock:
            if self._connected:
                return False
            self._connected = True
        self.commands.put(("connect", None))
        return True

    def disconnect(self) -> None:
        with self._lock:
            self._connected = False
        self.commands.put(("disconnect", None))

    def push_frame(self, frame: bytes) -> None:
        """Bounded: drops the oldest frame rather than stalling the sim."""
        while True:
            try:
                self.telemetry.put_nowait(frame)
                return
            except queue.Full:
                try:
                    self.telemetry.get_nowait()
                except queue.Empty:
                    pass


def build_app(hub: TeleopHub, console_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="deliverysim teleop bridge")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    if console_dir is not None and (console_dir / "index.html").exists():
        from fastapi.responses import RedirectResponse
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True),
                  name="console")

        @app.get("/")
        def index() -> RedirectResponse:
            return RedirectResponse("/console/")
    else:
        @app.get("/")
        def index_fallback() -> PlainTextResponse:
            return PlainTextResponse(
                "deliverysim bridge running; connect an operator console to /ws")

    @app.websocket("/ws")
    async def ws_endpoint(sock: WebSocket) -> None:
        await sock.accept()
        if not hub.try_connect():
            await sock.send_text(busy_frame().decode("utf-8"))
            await sock.close()
            return

        async def pump_telemetry() -> None:
            while True:
                try:
                    frame = hub.telemetry.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(0.01)
                    continue
                await sock.send_text(frame.decode("utf-8"))

        sender = asyncio.create_task(pump_telemetry())
        try:
            while True:
                text = await sock.receive_text()
                hub.commands.put(("line", text))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            hub.disconnect()

    return app


def pace_runner(runner: SimRunner, stop: threading.Event,
                realtime: bool = True) -> None:
    """Step the runner at wall-clock rate until done or stopped."""
    next_tick = time.monotonic()
    while not stop.is_set():
        if not runner.tick():
            break
        if realtime:
            next_tick += runner.dt
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)


def serve(runner: SimRunner, host: str = "127.0.0.1", port: int = 8750,
          out_dir: Path | None = None, console_dir: Path | None = None,
          realtime: bool = True) -> None:
    """Run the bridge server; writes run artifacts when the sim finishes."""
    import uvicorn

    hub = TeleopHub()
    runner.command_queue = hub.commands
    runner.telemetry_sink = hub.push_frame
    stop = threading.Event()
    thread = threading.Thread(target=pace_runner, args=(runner, stop, realtime),
                              daemon=True)

    app = build_app(hub, console_dir=console_dir)

    @app.on_event("startup")
    def _start() -> None:
        thread.start()

    @app.on_event("shutdown")
    def _finish() -> None:
        stop.set()
        thread.join(timeout=5.0)
        if out_dir is not None:
            write_artifacts(runner.result(), runner, out_dir)

    uvicorn.run(app, host=host, port=port, log_level="warning")


def parse_command_trace(text: str) -> dict[int, list[tuple[str, str | None]]]:
    """Read a commands.jsonl recording back into a replayable trace."""
    trace: dict[int, list[tuple[str, str | None]]] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            tick = int(entry["tick"])
            kind = str(entry.get("kind", "line"))
            payload = entry.get("data")
        except (ValueError, KeyError, TypeError) as e:
            raise ValueError(f"commands.jsonl line {i}: {e}") from e
        trace.setdefault(tick, []).append((kind, payload))
    return trace
