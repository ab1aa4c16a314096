"""Recording container and its binary file format.

Layout (little-endian):
    magic "EMGR" | version u16 | sample_rate f64 | channels u16 |
    sample_count u64 | start_epoch f64 | samples f32 channel-major |
    optional impedance block (channels x f64)

Samples are stored (and kept in memory) as float32 so write -> read round
trips are bit-exact. The cue schedule lives in a JSON sidecar, not here.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"EMGR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHdHQd")


class RecordingFormatError(ValueError):
    """Raised for bad magic, unsupported version, or truncated files."""


@dataclass
class Recording:
    """Timestamped multichannel signal: samples are (channels, n) float32 volts."""
    sample_rate_hz: float
    samples: np.ndarray
    impedances_ohm: np.ndarray | None = None
    start_epoch: float = 0.0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ValueError("samples must be (channels, n_samples)")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.impedances_ohm is not None:
            imp = np.asarray(self.impedances_ohm, dtype=float)
            if imp.shape != (self.channel_count,):
                raise ValueError("impedances must have one value per channel")
            self.impedances_ohm = imp

    @property
    def channel_count(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def time_to_index(self, t: float) -> int:
        return int(round(t * self.sample_rate_hz))


def recording_write(recording: Recording, path) -> None:
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        float(recording.sample_rate_hz),
        recording.channel_count,
        recording.n_samples,
        float(recording.start_epoch),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(recording.samples.astype("<f4", copy=False).tobytes())
        if recording.impedances_ohm is not None:
            fh.write(np.asarray(recording.impedances_ohm, dtype="<f8").tobytes())


def recording_read(path) -> Recording:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise RecordingFormatError(f"file too short for header: {len(raw)} bytes")
    magic, version, rate, channels, count, start_epoch = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise RecordingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise RecordingFormatError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    offset = _HEADER.size
    sample_bytes = channels * count * 4
    if len(raw) < offset + sample_bytes:
        raise RecordingFormatError(f"unexpected end of samples at offset {len(raw)}")
    samples = np.frombuffer(raw, dtype="<f4", count=channels * count, offset=offset)
    samples = samples.reshape(channels, count).copy()
    offset += sample_bytes
    impedances = None
    remaining = len(raw) - offset
    if remaining >= channels * 8 and channels > 0:
        impedances = np.frombuffer(raw, dtype="<f8", count=channels, offset=offset).copy()
    elif remaining > 0:
        raise RecordingFormatError(f"unexpected end of impedance block at offset {len(raw)}")
    return Recording(sample_rate_hz=rate, samples=samples,
                     impedances_ohm=impedances, start_epoch=start_epoch)
