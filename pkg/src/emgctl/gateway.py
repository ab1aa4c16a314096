"""Session orchestration service: binds a stream source to the decoder and
the robot simulator, and publishes a live event protocol for the operator
console over one WebSocket endpoint.

Events are JSON objects {type, seq, tick, ...} with a session-global strictly
increasing seq. Prediction events are never dropped for a connected client;
robot_state events are coalesced (oldest dropped first) when a client lags,
and a client that cannot even keep up with predictions is disconnected.
"""
from __future__ import annotations

import asyncio
import json
import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .bundle import ModelBundle, bundle_load
from .cues import CueSchedule, preset_schedule, schedule_from_dict
from .decoder import ControlMode, GestureDecoder
from .gestures import GESTURE_NAMES, Gesture
from .recording import recording_read
from .robot import JointCommand, RobotConfig, RobotSimulator, command_for
from .streaming import (RecordingWindowSource, StreamWindowSource, WindowSource)
from .wire import UdpCommandSender

EVENT_BUFFER_LIMIT = 1024
DEFAULT_GATEWAY_PORT = 8860


class Phase(Enum):
    IDLE = "Idle"
    CALIBRATING = "Calibrating"
    TRAINING = "Training"
    DECODING = "Decoding"


class CommandStream:
    """Commander-side stop bookkeeping: switching joints (or dropping to
    Rest) emits a stop for the previously commanded joint first."""

    def __init__(self):
        self.last_joint = None

    def tick(self, cmd: JointCommand | None, mode: ControlMode) -> list[JointCommand]:
        out: list[JointCommand] = []
        if cmd is None:
            if self.last_joint is not None:
                out.append(JointCommand.stop(self.last_joint, mode))
                self.last_joint = None
            return out
        if self.last_joint is not None and self.last_joint != cmd.joint:
            out.append(JointCommand.stop(self.last_joint, mode))
        out.append(cmd)
        self.last_joint = cmd.joint
        return out


class SimLink:
    def apply(self, commands: list[JointCommand]) -> None:
        raise NotImplementedError

    def step_and_snapshot(self, dt: float) -> dict | None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InprocSimLink(SimLink):
    """Simulator stepped in-process at the gateway tick. The simulator object
    may outlive the gateway session (robot state does not live here)."""

    def __init__(self, sim: RobotSimulator | None = None):
        self.sim = sim or RobotSimulator()

    def apply(self, commands):
        for cmd in commands:
            self.sim.apply_command(cmd)

    def step_and_snapshot(self, dt):
        self.sim.step(dt)
        return self.sim.snapshot()


class UdpSimLink(SimLink):
    """Commands out over UDP; the simulator service publishes state snapshots
    back to our ephemeral socket."""

    def __init__(self, host: str, port: int):
        import socket
        self.sender = UdpCommandSender(host, port)
        self._state_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._state_sock.bind(("0.0.0.0", 0))
        self._state_sock.setblocking(False)
        self._latest: dict | None = None
        # tell the simulator where to publish state
        self.state_port = self._state_sock.getsockname()[1]

    def apply(self, commands):
        for cmd in commands:
            self.sender.send(cmd)

    def step_and_snapshot(self, dt):
        while True:
            try:
                data, _ = self._state_sock.recvfrom(65536)
            except BlockingIOError:
                break
            try:
                self._latest = json.loads(data.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                continue
        return self._latest

    def close(self):
        self.sender.close()
        self._state_sock.close()


@dataclass
class ClientConnection:
    websocket: object
    buffer: deque = field(default_factory=deque)
    wakeup: asyncio.Event = field(default_factory=asyncio.Event)
    overflowed: bool = False

    def push(self, event: dict) -> None:
        if len(self.buffer) >= EVENT_BUFFER_LIMIT:
            for i, pending in enumerate(self.buffer):
                if pending["type"] == "robot_state":
                    del self.buffer[i]
                    break
            else:
                self.overflowed = True
                self.wakeup.set()
                return
        self.buffer.append(event)
        self.wakeup.set()


def make_source(descriptor: str, window_samples: int) -> WindowSource:
    """Parse a source descriptor: rec:<path>[:loop][:speed=X] | tcp:host:port."""
    if descriptor.startswith("rec:"):
        parts = descriptor[4:].split(":")
        path = parts[0]
        loop = "loop" in parts[1:]
        speed = 1.0
        for p in parts[1:]:
            if p.startswith("speed="):
                speed = float(p[6:])
        return RecordingWindowSource(recording_read(path), window_samples=window_samples,
                                     speed=speed, loop=loop)
    if descriptor.startswith("tcp:"):
        host, port = descriptor[4:].rsplit(":", 1)
        return StreamWindowSource(host, int(port), window_samples=window_samples)
    raise ValueError(f"unknown source descriptor {descriptor!r}")


class GatewaySession:
    """Single-session state machine. The tick loop is the only writer of
    decoding state; client commands apply between ticks (same event loop)."""

    def __init__(self, sim_link: SimLink | None = None,
                 robot_config: RobotConfig | None = None,
                 tick_rate_hz: float = 6.0):
        self.phase = Phase.IDLE
        self.sim_link = sim_link or InprocSimLink()
        self.robot_config = robot_config or RobotConfig()
        self.tick_rate_hz = tick_rate_hz
        self.bundle: ModelBundle | None = None
        self.bundle_id: str | None = None
        self.source: WindowSource | None = None
        self.source_descriptor: str | None = None
        self.decoder: GestureDecoder | None = None
        self.command_stream = CommandStream()
        self.clients: list[ClientConnection] = []
        self.seq = 0
        self.tick = 0
        self._pending_injection: Gesture | None = None
        self._tick_task: asyncio.Task | None = None
        self._cue_task: asyncio.Task | None = None
        self.latest_robot: dict | None = None

    # -- events -------------------------------------------------------------

    def _emit(self, type_: str, **payload) -> dict:
        self.seq += 1
        event = {"type": type_, "seq": self.seq, "tick": self.tick, **payload}
        for client in list(self.clients):
            client.push(event)
        return event

    def session_snapshot(self) -> dict:
        return {
            "phase": self.phase.value,
            "bundle": self.bundle_id,
            "source": self.source_descriptor,
            "tick": self.tick,
            "tick_rate_hz": self.tick_rate_hz,
            "connected_clients": len(self.clients),
            "mode": self.decoder.mode.value if self.decoder else None,
            "robot": self.latest_robot,
        }

    def _emit_session(self) -> None:
        self._emit("session", **self.session_snapshot())

    def _error(self, message: str, command: str | None = None) -> None:
        self._emit("error", message=message, command=command)

    # -- command handling ----------------------------------------------------

    def handle_command(self, command: dict) -> None:
        if not isinstance(command, dict) or "cmd" not in command:
            self._error("malformed command: missing 'cmd'")
            return
        name = command["cmd"]
        handler = getattr(self, f"_cmd_{name}", None)
        if handler is None:
            self._error(f"unknown command {name!r}", command=name)
            return
        handler(command)

    def _cmd_load_bundle(self, command: dict) -> None:
        if self.phase not in (Phase.IDLE, Phase.TRAINING):
            self._error(f"cannot load a bundle while {self.phase.value}", "load_bundle")
            return
        path = command.get("path", "")
        if not Path(path).is_file():
            self._error("bundle not found", "load_bundle")
            return
        try:
            self.bundle = bundle_load(path)
        except ValueError as exc:
            self._error(f"bad bundle: {exc}", "load_bundle")
            return
        self.bundle_id = str(path)
        self._emit_session()

    def _cmd_set_source(self, command: dict) -> None:
        if self.phase is Phase.DECODING:
            self._error("cannot change source while Decoding", "set_source")
            return
        descriptor = command.get("source", "")
        window = self.bundle.window_samples if self.bundle else 1000
        try:
            source = make_source(descriptor, window)
        except (ValueError, OSError) as exc:
            self._error(f"cannot open source: {exc}", "set_source")
            return
        if self.source is not None:
            self.source.close()
        self.source = source
        self.source_descriptor = descriptor
        self._emit_session()

    def _cmd_start_session(self, command: dict) -> None:
        if self.phase not in (Phase.IDLE, Phase.TRAINING):
            self._error(f"cannot start a session from {self.phase.value}", "start_session")
            return
        if self.bundle is None:
            self._error("Decoding requires a loaded bundle", "start_session")
            return
        if self.source is None:
            self._error("no signal source configured", "start_session")
            return
        mode = command.get("mode")
        initial_mode = ControlMode(mode) if mode else ControlMode.WRIST_GRIPPER
        self.decoder = GestureDecoder(self.bundle, tick_rate_hz=self.tick_rate_hz,
                                      initial_mode=initial_mode)
        self.command_stream = CommandStream()
        self.phase = Phase.DECODING
        self._emit_session()
        self._tick_task = asyncio.get_running_loop().create_task(self._tick_loop())

    def _cmd_start_cues(self, command: dict) -> None:
        if self.phase is not Phase.IDLE:
            self._error(f"cannot start cues while {self.phase.value}", "start_cues")
            return
        if "schedule" in command:
            schedule = schedule_from_dict(command["schedule"])
        else:
            schedule = preset_schedule(command.get("preset", "initial"),
                                       seed=int(command.get("seed", 0)))
        self.phase = Phase.CALIBRATING
        self._emit_session()
        self._cue_task = asyncio.get_running_loop().create_task(self._cue_loop(schedule))

    def _cmd_inject_gesture(self, command: dict) -> None:
        if self.phase is not Phase.DECODING:
            self._error("injection requires Decoding", "inject_gesture")
            return
        try:
            gesture = Gesture.from_name(str(command.get("gesture", "")))
        except ValueError as exc:
            self._error(str(exc), "inject_gesture")
            return
        self._pending_injection = gesture

    def _cmd_stop(self, command: dict) -> None:
        self._abort_tasks()
        self.phase = Phase.IDLE
        self._emit_session()

    def _abort_tasks(self) -> None:
        for task in (self._tick_task, self._cue_task):
            if task is not None and not task.done():
                task.cancel()
        self._tick_task = None
        self._cue_task = None

    # -- decode tick loop ----------------------------------------------------

    async def _tick_loop(self) -> None:
        loop = asyncio.get_running_loop()
        period = 1.0 / self.tick_rate_hz
        next_time = loop.time()
        try:
            while self.phase is Phase.DECODING:
                now = loop.time()
                if now < next_time:
                    await asyncio.sleep(next_time - now)
                next_time = max(next_time + period, loop.time())
                self._do_tick(period)
        except asyncio.CancelledError:
            pass

    def _do_tick(self, dt: float) -> None:
        decoder = self.decoder
        window = self.source.latest_window() if self.source else None
        if window is not None:
            decoder.push_samples(window.samples, window.start_sample)

        injection = self._pending_injection
        self._pending_injection = None  # never persists beyond one tick
        if injection is not None:
            result = decoder.inject_gesture(injection)
            input_gesture = injection
        else:
            features = decoder.online.latest_features()
            if features is None:
                return  # source not warmed up yet; tick not counted
            from . import classifier as clf
            p = clf.softmax(self.bundle.model.forward(features))
            result = decoder.step_probabilities(p)
            input_gesture = Gesture(int(np.argmax(p)))

        self.tick = result.decoded.tick_index
        commands = self.command_stream.tick(
            command_for(result.decoded, result.mode, self.robot_config), result.mode)
        self.sim_link.apply(commands)
        snapshot = self.sim_link.step_and_snapshot(dt)
        if snapshot is not None:
            self.latest_robot = snapshot

        self._emit("prediction",
                   gesture=GESTURE_NAMES[input_gesture],
                   gesture_id=int(input_gesture),
                   decoded=GESTURE_NAMES[result.decoded.label],
                   decoded_id=int(result.decoded.label),
                   consecutive=result.decoded.consecutive_count,
                   injected=result.injected)
        self._emit("confidence", p_prime=[round(float(x), 6) for x in result.p_prime])
        if snapshot is not None:
            self._emit("robot_state", state=snapshot, mode=result.mode.value)
        if result.mode_changed:
            self._emit("mode", mode=result.mode.value)

    # -- cue playback ----------------------------------------------------------

    @staticmethod
    def _cue_phase(entry, t: float, label_window_s: float) -> str:
        if t < entry.transition_start:
            return "rest"
        if t < entry.hold_start:
            return "transition"
        if t < entry.hold_end - label_window_s:
            return "hold"
        if t < entry.hold_end:
            return "hold_label"
        return "return"

    async def _cue_loop(self, schedule: CueSchedule) -> None:
        loop = asyncio.get_running_loop()
        t0 = loop.time()
        last_emitted = None
        try:
            while self.phase is Phase.CALIBRATING:
                t = loop.time() - t0
                if t >= schedule.total_duration_s:
                    break
                current = None
                for i, entry in enumerate(schedule.entries):
                    if entry.t_start <= t < entry.t_end:
                        current = (i, self._cue_phase(entry, t, schedule.label_window_s))
                        break
                if current is not None and current != last_emitted:
                    i, phase_name = current
                    entry = schedule.entries[i]
                    self._emit("cue", cue_index=i,
                               gesture=GESTURE_NAMES[entry.gesture],
                               gesture_id=int(entry.gesture),
                               cue_phase=phase_name,
                               n_cues=schedule.n_cues,
                               t_start=entry.t_start,
                               hold_end=entry.hold_end)
                    last_emitted = current
                await asyncio.sleep(0.02)
            if self.phase is Phase.CALIBRATING:
                self._emit("cue", cue_index=schedule.n_cues - 1, cue_phase="done",
                           gesture=None, gesture_id=None, n_cues=schedule.n_cues,
                           t_start=0.0, hold_end=0.0)
                self.phase = Phase.TRAINING
                self._emit_session()
        except asyncio.CancelledError:
            pass

    # -- client lifecycle -----------------------------------------------------

    def attach(self, websocket) -> ClientConnection:
        client = ClientConnection(websocket=websocket)
        self.clients.append(client)
        return client

    def detach(self, client: ClientConnection) -> None:
        if client in self.clients:
            self.clients.remove(client)

    def close(self) -> None:
        self._abort_tasks()
        if self.source is not None:
            self.source.close()
        self.sim_link.close()


def create_app(session: GatewaySession, console_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="emgctl gateway")
    app.state.session = session

    @app.get("/state")
    def state():
        return session.session_snapshot()

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        client = session.attach(websocket)
        hello = {"type": "session", "seq": session.seq, "tick": session.tick,
                 **session.session_snapshot()}
        sender = asyncio.get_running_loop().create_task(_sender(websocket, client))
        try:
            await websocket.send_text(json.dumps(hello))
            while True:
                raw = await websocket.receive_text()
                try:
                    command = json.loads(raw)
                except json.JSONDecodeError:
                    session._error("malformed command: not JSON")
                    continue
                session.handle_command(command)
        except WebSocketDisconnect:
            pass
        finally:
            session.detach(client)
            sender.cancel()

    async def _sender(websocket, client: ClientConnection):
        try:
            while True:
                await client.wakeup.wait()
                client.wakeup.clear()
                while client.buffer:
                    event = client.buffer.popleft()
                    await websocket.send_text(json.dumps(event))
                if client.overflowed:
                    await websocket.send_text(json.dumps(
                        {"type": "error", "seq": session.seq, "tick": session.tick,
                         "message": "event buffer overflow, disconnecting"}))
                    await websocket.close()
                    return
        except asyncio.CancelledError:
            pass
        except Exception:
            pass

    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app
