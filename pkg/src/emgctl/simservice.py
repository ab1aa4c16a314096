"""Standalone simulator service: listens for joint commands on UDP, steps the
kinematic model at the command rate, and optionally publishes state snapshots
(JSON datagrams) and records them to a JSONL file.
"""
from __future__ import annotations

import json
import socket
import threading
import time

from .robot import RobotConfig, RobotSimulator
from .wire import DEFAULT_SIM_PORT, UdpCommandListener


class SimulatorService:
    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_SIM_PORT,
                 config: RobotConfig | None = None,
                 publish: tuple[str, int] | None = None,
                 record_path: str | None = None):
        self.sim = RobotSimulator(config)
        self.listener = UdpCommandListener(host, port)
        self.publish = publish
        self.record_path = record_path
        self._pub_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM) if publish else None
        self._record_fh = open(record_path, "w") if record_path else None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.listener.port

    def tick(self, dt: float | None = None) -> dict:
        """One command tick: apply the newest pending command (latest wins),
        integrate, publish/record the snapshot."""
        commands = self.listener.poll()
        if commands:
            self.sim.apply_command(commands[-1])
        self.sim.step(dt)
        snapshot = self.sim.snapshot()
        payload = json.dumps(snapshot).encode("utf-8")
        if self._pub_sock is not None:
            try:
                self._pub_sock.sendto(payload, self.publish)
            except OSError:
                pass
        if self._record_fh is not None:
            self._record_fh.write(json.dumps(snapshot) + "\n")
        return snapshot

    def run(self) -> None:
        """Blocking 6 Hz (config.tick_hz) loop until stop() is called."""
        period = 1.0 / self.sim.config.tick_hz
        next_time = time.monotonic()
        while not self._stop.is_set():
            now = time.monotonic()
            if now < next_time:
                time.sleep(min(next_time - now, period))
                continue
            next_time = max(next_time + period, time.monotonic())
            self.tick()

    def start(self) -> "SimulatorService":
        self._thread = threading.Thread(target=self.run, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.listener.close()
        if self._pub_sock is not None:
            self._pub_sock.close()
        if self._record_fh is not None:
            self._record_fh.close()
