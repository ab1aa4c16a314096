"""Signal sources: the TCP stream protocol, a replay server that serves any
Recording over it, and window sources the decoder pulls from.

Wire protocol (little-endian, length-prefixed frames of u32 size + payload):
    hello frame : magic "EMGS" | version u16 | sample_rate f64 | channels u16
    data frame  : start_counter u64 | n_samples u32 | f32 samples channel-major

The counter is a monotonically increasing absolute sample index; a jump means
samples were lost and no window may span the gap.
"""
from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .recording import Recording

STREAM_MAGIC = b"EMGS"
STREAM_VERSION = 1
_HELLO = struct.Struct("<4sHdH")
_DATA_HEADER = struct.Struct("<QI")
_LEN = struct.Struct("<I")
DEFAULT_STREAM_PORT = 8850
DEFAULT_CHUNK_SAMPLES = 64


class StreamProtocolError(ValueError):
    pass


def encode_hello(sample_rate_hz: float, channels: int) -> bytes:
    payload = _HELLO.pack(STREAM_MAGIC, STREAM_VERSION, sample_rate_hz, channels)
    return _LEN.pack(len(payload)) + payload


def encode_data_frame(start_counter: int, block: np.ndarray) -> bytes:
    """block is (channels, n_samples) float32, sent channel-major."""
    data = np.ascontiguousarray(block, dtype="<f4")
    payload = _DATA_HEADER.pack(start_counter, data.shape[1]) + data.tobytes()
    return _LEN.pack(len(payload)) + payload


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> bytes | None:
    header = _read_exact(sock, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length > 1 << 26:
        raise StreamProtocolError(f"oversized frame: {length} bytes")
    return _read_exact(sock, length)


def parse_hello(payload: bytes) -> tuple[float, int]:
    if len(payload) != _HELLO.size:
        raise StreamProtocolError("bad hello frame size")
    magic, version, rate, channels = _HELLO.unpack(payload)
    if magic != STREAM_MAGIC:
        raise StreamProtocolError(f"bad stream magic {magic!r}")
    if version != STREAM_VERSION:
        raise StreamProtocolError(f"unsupported stream version {version}")
    return rate, channels


def parse_data_frame(payload: bytes, channels: int) -> tuple[int, np.ndarray]:
    if len(payload) < _DATA_HEADER.size:
        raise StreamProtocolError("short data frame")
    counter, n = _DATA_HEADER.unpack_from(payload, 0)
    expected = _DATA_HEADER.size + channels * n * 4
    if len(payload) != expected:
        raise StreamProtocolError(f"data frame size {len(payload)} != expected {expected}")
    block = np.frombuffer(payload, dtype="<f4", offset=_DATA_HEADER.size)
    return counter, block.reshape(channels, n)


class ReplayServer:
    """Serves a Recording over the stream protocol, paced to real time or a
    speed multiplier (speed <= 0 streams as fast as possible)."""

    def __init__(self, recording: Recording, host: str = "127.0.0.1", port: int = 0,
                 speed: float = 1.0, chunk_samples: int = DEFAULT_CHUNK_SAMPLES,
                 loop: bool = False):
        self.recording = recording
        self.speed = speed
        self.chunk_samples = chunk_samples
        self.loop = loop
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(4)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()

    def start(self) -> "ReplayServer":
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            client = threading.Thread(target=self._serve_client, args=(conn,), daemon=True)
            client.start()

    def _serve_client(self, conn: socket.socket) -> None:
        rec = self.recording
        rate = rec.sample_rate_hz
        try:
            conn.sendall(encode_hello(rate, rec.channel_count))
            counter = 0
            position = 0
            t0 = time.monotonic()
            sent = 0
            while not self._stop.is_set():
                if position >= rec.n_samples:
                    if not self.loop:
                        break
                    position = 0
                stop = min(position + self.chunk_samples, rec.n_samples)
                block = rec.samples[:, position:stop]
                if self.speed > 0:
                    target = t0 + sent / (rate * self.speed)
                    delay = target - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                conn.sendall(encode_data_frame(counter, block))
                n = stop - position
                counter += n
                sent += n
                position = stop
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()


@dataclass(frozen=True)
class StreamWindow:
    """Latest N raw samples, (N, channels), with absolute stream position."""
    samples: np.ndarray
    start_sample: int
    sample_rate_hz: float

    @property
    def end_sample(self) -> int:
        return self.start_sample + self.samples.shape[0]

    @property
    def start_time(self) -> float:
        return self.start_sample / self.sample_rate_hz

    @property
    def end_time(self) -> float:
        return self.end_sample / self.sample_rate_hz


class WindowSource:
    """Pull interface the decode loop drives: the newest N-sample window."""

    sample_rate_hz: float
    channels: int

    def latest_window(self) -> StreamWindow | None:
        raise NotImplementedError

    def window_ending_at(self, end_sample: int) -> StreamWindow | None:
        """The exact window [end - N, end), if that span is still buffered.
        Lets decode ticks map deterministically onto sample spans."""
        raise NotImplementedError

    def wait_for_time(self, t_signal: float, timeout: float | None = None) -> bool:
        """Block until a window ending at or after signal time t is available.
        Returns False at end of stream (or timeout)."""
        raise NotImplementedError

    @property
    def ended(self) -> bool:
        raise NotImplementedError

    def close(self) -> None:
        pass


class StreamWindowSource(WindowSource):
    """TCP client: a reader thread keeps the most recent samples; windows
    never span counter gaps (the buffer restarts after a gap)."""

    def __init__(self, host: str, port: int, window_samples: int = 1000,
                 connect_timeout: float = 10.0, buffer_windows: int = 4):
        self.window_samples = window_samples
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)
        hello = read_frame(self._sock)
        if hello is None:
            raise StreamProtocolError("stream closed before hello frame")
        self.sample_rate_hz, self.channels = parse_hello(hello)
        self._buffer_n = max(1, buffer_windows) * window_samples
        self._buffer = np.zeros((self._buffer_n, self.channels), dtype=np.float32)
        self._fill = 0
        self._buffer_end = 0  # absolute counter of one past the last buffered sample
        self.gap_events = 0
        self._ended = threading.Event()
        self._lock = threading.Condition()
        self._thread = threading.Thread(target=self._reader, daemon=True)
        self._thread.start()

    @property
    def ended(self) -> bool:
        return self._ended.is_set()

    def _reader(self) -> None:
        expected = None
        try:
            while True:
                payload = read_frame(self._sock)
                if payload is None:
                    break
                counter, block = parse_data_frame(payload, self.channels)
                with self._lock:
                    if expected is not None and counter != expected:
                        self.gap_events += 1
                        self._fill = 0  # windows must not span the gap
                    expected = counter + block.shape[1]
                    self._append(block.T)
                    self._buffer_end = expected
                    self._lock.notify_all()
        except (OSError, StreamProtocolError):
            pass
        finally:
            self._ended.set()
            with self._lock:
                self._lock.notify_all()

    def _append(self, rows: np.ndarray) -> None:
        n = self._buffer_n
        if rows.shape[0] >= n:
            self._buffer[:] = rows[-n:]
            self._fill = n
        else:
            self._buffer = np.roll(self._buffer, -rows.shape[0], axis=0)
            self._buffer[-rows.shape[0]:] = rows
            self._fill = min(n, self._fill + rows.shape[0])

    def _extract(self, end_sample: int) -> StreamWindow | None:
        """Window [end - N, end); caller holds the lock."""
        n = self.window_samples
        oldest = self._buffer_end - self._fill
        if end_sample > self._buffer_end or end_sample - n < oldest:
            return None
        j1 = self._buffer_n - (self._buffer_end - end_sample)
        return StreamWindow(samples=self._buffer[j1 - n:j1].astype(float, copy=True),
                            start_sample=end_sample - n,
                            sample_rate_hz=self.sample_rate_hz)

    def latest_window(self) -> StreamWindow | None:
        with self._lock:
            if self._fill < self.window_samples:
                return None
            return self._extract(self._buffer_end)

    def window_ending_at(self, end_sample: int) -> StreamWindow | None:
        with self._lock:
            if self._fill < self.window_samples:
                return None
            return self._extract(end_sample)

    def wait_for_time(self, t_signal: float, timeout: float | None = None) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        needed = int(np.ceil(t_signal * self.sample_rate_hz))
        with self._lock:
            while self._buffer_end < needed or self._fill < self.window_samples:
                if self._ended.is_set():
                    return False
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._lock.wait(timeout=remaining if remaining is not None else 0.5)
        return True

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._thread.join(timeout=5)


class RecordingWindowSource(WindowSource):
    """In-process wall-clock-paced source over a Recording (no sockets).

    Used by the gateway for rec: sources; supports looping so an idle/rest
    recording can feed an open-ended teleop session.
    """

    def __init__(self, recording: Recording, window_samples: int = 1000,
                 speed: float = 1.0, loop: bool = False):
        if speed <= 0:
            raise ValueError("speed must be positive")
        if recording.n_samples < window_samples:
            raise ValueError("recording shorter than one window")
        self.recording = recording
        self.window_samples = window_samples
        self.sample_rate_hz = recording.sample_rate_hz
        self.channels = recording.channel_count
        self.speed = speed
        self.loop = loop
        self._t0 = time.monotonic()

    def _position(self) -> int:
        """Virtual stream position: monotone even when looping (the window
        start_sample counter must never run backward)."""
        elapsed = (time.monotonic() - self._t0) * self.speed
        pos = int(elapsed * self.sample_rate_hz)
        return pos if self.loop else min(pos, self.recording.n_samples)

    @property
    def ended(self) -> bool:
        return not self.loop and self._position() >= self.recording.n_samples

    def latest_window(self) -> StreamWindow | None:
        return self._window_at(self._position())

    def window_ending_at(self, end_sample: int) -> StreamWindow | None:
        if end_sample > self._position():
            return None
        return self._window_at(end_sample)

    def _window_at(self, pos: int) -> StreamWindow | None:
        if pos < self.window_samples:
            return None
        start = pos - self.window_samples
        n = self.recording.n_samples
        if pos <= n:
            data = self.recording.samples[:, start:pos]
        else:  # looping: window may span the file splice
            idx = np.arange(start, pos) % n
            data = self.recording.samples[:, idx]
        return StreamWindow(samples=data.T.astype(float),
                            start_sample=start, sample_rate_hz=self.sample_rate_hz)

    def wait_for_time(self, t_signal: float, timeout: float | None = None) -> bool:
        needed = max(int(np.ceil(t_signal * self.sample_rate_hz)), self.window_samples)
        if not self.loop and needed > self.recording.n_samples:
            return False
        deadline = None if timeout is None else time.monotonic() + timeout
        while self._position() < needed:
            if deadline is not None and time.monotonic() > deadline:
                return False
            wait = (needed - self._position()) / (self.sample_rate_hz * self.speed)
            time.sleep(min(max(wait, 0.001), 0.05))
        return True
