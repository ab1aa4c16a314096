"""UDP wire format for joint commands.

One command per datagram, a single UTF-8 JSON line:

    {"v":1,"seq":7,"joint":"lift","kind":"vel","value":0.0,"mode":"ad"}

Sequence numbers are u32 and strictly increasing per sender; receivers drop
stale datagrams (UDP gives no ordering) and count the drops.
"""
from __future__ import annotations

import json
import math
import socket

from .decoder import ControlMode
from .robot import CommandKind, Joint, JointCommand

WIRE_VERSION = 1
MAX_SEQ = 2 ** 32 - 1
DEFAULT_SIM_PORT = 8855


class WireDecodeError(ValueError):
    """Malformed datagram: bad JSON, missing field, unknown token, bad version."""


def encode_command(cmd: JointCommand, seq: int) -> bytes:
    if not 0 <= seq <= MAX_SEQ:
        raise ValueError("seq must fit in u32")
    line = json.dumps({"v": WIRE_VERSION, "seq": int(seq), "joint": cmd.joint.value,
                       "kind": cmd.kind.value, "value": cmd.value,
                       "mode": cmd.mode.value}, separators=(",", ":"))
    return line.encode("utf-8") + b"\n"


def parse_command(datagram: bytes) -> tuple[int, JointCommand]:
    """Inverse of encode_command; returns (seq, command)."""
    if not datagram:
        raise WireDecodeError("empty datagram")
    try:
        obj = json.loads(datagram.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireDecodeError(f"malformed datagram: {exc}") from None
    if not isinstance(obj, dict):
        raise WireDecodeError("datagram is not a JSON object")
    version = obj.get("v")
    if version != WIRE_VERSION:
        raise WireDecodeError(f"unsupported version {version!r}")
    for key in ("seq", "joint", "kind", "value", "mode"):
        if key not in obj:
            raise WireDecodeError(f"missing field {key!r}")
    try:
        joint = Joint(obj["joint"])
    except ValueError:
        raise WireDecodeError(f"unknown joint {obj['joint']!r}") from None
    try:
        kind = CommandKind(obj["kind"])
    except ValueError:
        raise WireDecodeError(f"unknown kind {obj['kind']!r}") from None
    try:
        mode = ControlMode(obj["mode"])
    except ValueError:
        raise WireDecodeError(f"unknown mode {obj['mode']!r}") from None
    seq = obj["seq"]
    if not isinstance(seq, int) or not 0 <= seq <= MAX_SEQ:
        raise WireDecodeError(f"bad sequence number {seq!r}")
    value = obj["value"]
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise WireDecodeError(f"bad value {value!r}")
    sign = -1 if value < 0 else 1
    try:
        cmd = JointCommand(joint=joint, kind=kind, magnitude=abs(float(value)),
                           sign=sign, mode=mode)
    except ValueError as exc:
        raise WireDecodeError(str(exc)) from None
    return seq, cmd


class CommandReceiver:
    """Reorder guard: feed() returns the command, or None for a stale
    (seq <= last seen) datagram, which is counted in dropped_stale."""

    def __init__(self):
        self.last_seq: int | None = None
        self.dropped_stale = 0

    def feed(self, datagram: bytes) -> JointCommand | None:
        seq, cmd = parse_command(datagram)
        if self.last_seq is not None and seq <= self.last_seq:
            self.dropped_stale += 1
            return None
        self.last_seq = seq
        return cmd


class UdpCommandSender:
    """Sends commands with auto-incrementing sequence numbers."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_SIM_PORT):
        self.address = (host, port)
        self.seq = 0
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, cmd: JointCommand) -> int:
        self.seq += 1
        self._sock.sendto(encode_command(cmd, self.seq), self.address)
        return self.seq

    def close(self) -> None:
        self._sock.close()


class UdpCommandListener:
    """Non-blocking UDP receive socket feeding a CommandReceiver."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_SIM_PORT,
                 recv_buffer: int = 1 << 20):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, recv_buffer)
        self._sock.bind((host, port))
        self._sock.setblocking(False)
        self.receiver = CommandReceiver()
        self.decode_errors = 0

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def poll(self, limit: int = 1024) -> list[JointCommand]:
        """Drain pending datagrams; stale ones are dropped, malformed ones
        counted and skipped."""
        out = []
        for _ in range(limit):
            try:
                data, _ = self._sock.recvfrom(65536)
            except BlockingIOError:
                break
            try:
                cmd = self.receiver.feed(data)
            except WireDecodeError:
                self.decode_errors += 1
                continue
            if cmd is not None:
                out.append(cmd)
        return out

    def close(self) -> None:
        self._sock.close()
