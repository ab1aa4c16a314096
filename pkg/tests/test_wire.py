import json
import socket

import numpy as np
import pytest

from emgctl.decoder import ControlMode
from emgctl.robot import CommandKind, Joint, JointCommand, kind_for_joint
from emgctl.wire import (CommandReceiver, UdpCommandListener, UdpCommandSender,
                         WireDecodeError, encode_command, parse_command)


def random_command(rng) -> JointCommand:
    joint = list(Joint)[rng.integers(len(Joint))]
    value = float(np.round(rng.normal(scale=0.5), 9))
    mode = ControlMode.ARM_DRIVE if rng.random() < 0.5 else ControlMode.WRIST_GRIPPER
    return JointCommand.from_value(joint, value, mode)


class TestEncode:
    def test_stop_command_wire_image(self):
        cmd = JointCommand.stop(Joint.LIFT, ControlMode.ARM_DRIVE)
        line = encode_command(cmd, 7)
        assert line == b'{"v":1,"seq":7,"joint":"lift","kind":"vel","value":0.0,"mode":"ad"}\n'

    def test_round_trip_randomized(self):
        rng = np.random.default_rng(0)
        for i in range(10_000):
            cmd = random_command(rng)
            seq, parsed = parse_command(encode_command(cmd, i))
            assert seq == i
            assert parsed == cmd

    def test_seq_must_fit_u32(self):
        cmd = JointCommand.stop(Joint.LIFT, ControlMode.ARM_DRIVE)
        with pytest.raises(ValueError):
            encode_command(cmd, 2 ** 32)


class TestParse:
    def good(self, **overrides):
        obj = {"v": 1, "seq": 3, "joint": "lift", "kind": "vel",
               "value": 0.25, "mode": "ad"}
        obj.update(overrides)
        return json.dumps(obj).encode()

    def test_unknown_joint_names_token(self):
        with pytest.raises(WireDecodeError, match="'elbow'"):
            parse_command(self.good(joint="elbow"))

    def test_unsupported_version(self):
        with pytest.raises(WireDecodeError, match="version"):
            parse_command(self.good(v=2))

    def test_malformed_and_short(self):
        for bad in (b"", b"\x00\x01", b"{", b"[1,2]", b'{"v":1}'):
            with pytest.raises(WireDecodeError):
                parse_command(bad)

    def test_non_finite_value(self):
        with pytest.raises(WireDecodeError):
            parse_command(self.good(value="fast"))

    def test_kind_joint_mismatch_rejected(self):
        with pytest.raises(WireDecodeError):
            parse_command(self.good(joint="gripper", kind="vel"))

    def test_valid_line_parses(self):
        seq, cmd = parse_command(self.good())
        assert seq == 3
        assert cmd.joint == Joint.LIFT
        assert cmd.value == 0.25
        assert cmd.mode == ControlMode.ARM_DRIVE


class TestReceiver:
    def test_stale_sequence_dropped_with_counter(self):
        rx = CommandReceiver()
        cmd = JointCommand.stop(Joint.LIFT, ControlMode.ARM_DRIVE)
        assert rx.feed(encode_command(cmd, 9)) is not None
        assert rx.feed(encode_command(cmd, 5)) is None
        assert rx.feed(encode_command(cmd, 9)) is None
        assert rx.dropped_stale == 2
        assert rx.feed(encode_command(cmd, 10)) is not None


class TestUdpLoopback:
    def test_commands_survive_loopback(self):
        listener = UdpCommandListener(port=0)
        sender = UdpCommandSender(port=listener.port)
        rng = np.random.default_rng(1)
        sent = [random_command(rng) for _ in range(200)]
        received = []
        try:
            for cmd in sent:
                sender.send(cmd)
                received.extend(listener.poll())
            import time
            deadline = time.monotonic() + 2.0
            while len(received) < len(sent) and time.monotonic() < deadline:
                received.extend(listener.poll())
                time.sleep(0.005)
        finally:
            sender.close()
            listener.close()
        assert received == sent

    def test_listener_drops_stale_and_counts_garbage(self):
        listener = UdpCommandListener(port=0)
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        cmd = JointCommand.stop(Joint.LIFT, ControlMode.ARM_DRIVE)
        try:
            sock.sendto(encode_command(cmd, 5), ("127.0.0.1", listener.port))
            sock.sendto(encode_command(cmd, 4), ("127.0.0.1", listener.port))  # stale
            sock.sendto(b"not json", ("127.0.0.1", listener.port))
            sock.sendto(encode_command(cmd, 6), ("127.0.0.1", listener.port))
            import time
            time.sleep(0.05)
            got = listener.poll()
        finally:
            sock.close()
            listener.close()
        assert len(got) == 2
        assert listener.receiver.dropped_stale == 1
        assert listener.decode_errors == 1
