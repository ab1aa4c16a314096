"""Synthetic multichannel EMG with gesture-specific spatial patterns.

Each non-rest gesture gets a Gaussian activation blob at a distinct spot on
the electrode grid. During a cue the blob's band-limited carrier noise fades
in over the transition, holds, and fades out over the return. Powerline
(60 Hz + harmonics) and sub-20 Hz motion artifacts ride on top, plus a flat
noise floor on every channel. Everything is deterministic per seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .cues import CueSchedule
from .gestures import NUM_GESTURES, Gesture
from .recording import Recording

DEFAULT_NOISE_FLOOR_V = 10e-6
DEFAULT_CARRIER_BAND_HZ = (150.0, 450.0)

# Pooled-RMS multiple of the noise floor per gesture; Fingers Closed is the
# maximal-effort (MVC) gesture. Rest stays at the noise floor.
DEFAULT_GESTURE_SNR = {
    Gesture.REST: 1.0,
    Gesture.FINGERS_CLOSED: 5.7,
    Gesture.FINGERS_OPEN: 4.5,
    Gesture.WRIST_LEFT: 4.0,
    Gesture.WRIST_RIGHT: 5.0,
    Gesture.WRIST_UP: 4.2,
    Gesture.WRIST_DOWN: 5.3,
    Gesture.PALM_DOWN: 4.7,
    Gesture.PALM_UP: 3.8,
    Gesture.PINCH_FINGERS: 4.4,
}

# Shared muscle-site blob centers (row, col) laid out for the 8x8 grid.
DEFAULT_SITE_CENTERS = (
    (1.0, 1.0), (1.0, 4.5), (2.0, 7.0), (4.5, 0.5), (4.5, 4.0), (6.5, 6.5),
)
# Gestures activate weighted mixtures of the sites. Neighboring gestures
# share sites with different weights (like real forearm activation patterns):
# the close pairs (Wrist Left/Right, Palm Down/Up, Pinch) are what make
# per-electrode gain drift hurt a stale classifier.
DEFAULT_SITE_WEIGHTS = {
    Gesture.FINGERS_CLOSED: (1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    Gesture.FINGERS_OPEN: (0.4, 0.6, 0.0, 0.0, 0.0, 0.0),
    Gesture.WRIST_LEFT: (0.0, 0.62, 0.38, 0.0, 0.0, 0.0),
    Gesture.WRIST_RIGHT: (0.0, 0.38, 0.62, 0.0, 0.0, 0.0),
    Gesture.WRIST_UP: (0.0, 0.0, 0.0, 0.75, 0.25, 0.0),
    Gesture.WRIST_DOWN: (0.0, 0.0, 0.0, 0.25, 0.75, 0.0),
    Gesture.PALM_DOWN: (0.0, 0.0, 0.0, 0.0, 0.6, 0.4),
    Gesture.PALM_UP: (0.0, 0.0, 0.0, 0.0, 0.4, 0.6),
    Gesture.PINCH_FINGERS: (0.25, 0.0, 0.35, 0.0, 0.0, 0.4),
}
DEFAULT_BLOB_SIGMA_CELLS = 1.0


@dataclass(frozen=True)
class SynthConfig:
    channels: int = 64
    grid_rows: int = 8
    grid_cols: int = 8
    sample_rate_hz: float = 4000.0
    templates: np.ndarray = None              # (10, channels) carrier RMS per channel, volts
    carrier_band_hz: tuple[float, float] = DEFAULT_CARRIER_BAND_HZ
    noise_floor_v: float = DEFAULT_NOISE_FLOOR_V
    powerline_amp_v: float = 1.5e-6           # 60 Hz fundamental
    powerline_harmonics: tuple[float, ...] = (1.0, 0.4, 0.15)  # 60/120/180 Hz gains
    motion_amp_v: float = 2.0e-6              # < 20 Hz band
    effort_jitter_sd: float = 0.12            # per-cue lognormal amplitude spread
    pattern_jitter_sd: float = 0.06           # per-cue spatially-smooth pattern spread
    seed: int = 0
    tail_s: float = 1.0                       # padding after the last cue

    def __post_init__(self):
        if self.templates is None:
            object.__setattr__(self, "templates", default_templates(
                self.channels, self.grid_rows, self.grid_cols, self.noise_floor_v))
        tmpl = np.asarray(self.templates, dtype=float)
        object.__setattr__(self, "templates", tmpl)
        if tmpl.shape != (NUM_GESTURES, self.channels):
            raise ValueError(f"templates must be ({NUM_GESTURES}, {self.channels})")
        if np.any(tmpl < 0):
            raise ValueError("templates must be nonnegative")
        if np.any(tmpl[Gesture.REST] != 0):
            raise ValueError("Rest template must be all zero (noise floor only)")
        _check_distinct(tmpl)


def _check_distinct(templates: np.ndarray, limit: float = 0.95) -> None:
    active = [g for g in Gesture if g != Gesture.REST]
    for i, a in enumerate(active):
        for b in active[i + 1:]:
            ta, tb = templates[a], templates[b]
            cos = float(ta @ tb / (np.linalg.norm(ta) * np.linalg.norm(tb)))
            if cos >= limit:
                raise ValueError(
                    f"templates for {a.name} and {b.name} too similar (cos={cos:.3f})")


def default_templates(channels: int = 64, grid_rows: int = 8, grid_cols: int = 8,
                      noise_floor_v: float = DEFAULT_NOISE_FLOOR_V,
                      gesture_snr: dict | None = None,
                      blob_sigma: float = DEFAULT_BLOB_SIGMA_CELLS) -> np.ndarray:
    """Site-mixture templates scaled so each gesture's pooled signal RMS is
    its target multiple of the noise floor: sqrt(mean(nf^2 + t^2)) = snr*nf."""
    snr = dict(DEFAULT_GESTURE_SNR)
    if gesture_snr:
        snr.update(gesture_snr)
    rows = np.arange(channels) // grid_cols
    cols = np.arange(channels) % grid_cols
    # site centers are laid out for 8x8; rescale for other grid sizes
    row_scale = (grid_rows - 1) / 7.0
    col_scale = (grid_cols - 1) / 7.0
    sigma = blob_sigma * min(row_scale, col_scale)
    blobs = np.array([
        np.exp(-((rows - cr * row_scale) ** 2 + (cols - cc * col_scale) ** 2)
               / (2.0 * sigma ** 2))
        for cr, cc in DEFAULT_SITE_CENTERS])
    templates = np.zeros((NUM_GESTURES, channels))
    for g, weights in DEFAULT_SITE_WEIGHTS.items():
        raw = np.asarray(weights) @ blobs
        target = snr[g]
        scale = noise_floor_v * np.sqrt(max(target ** 2 - 1.0, 0.0) * channels
                                        / np.sum(raw ** 2))
        templates[g] = scale * raw
    return templates


def _band_noise_scale(sos: np.ndarray, n_taps: int = 8192) -> float:
    """1 / output-RMS of the filter driven by unit-variance white noise."""
    impulse = np.zeros(n_taps)
    impulse[0] = 1.0
    h = sps.sosfilt(sos, impulse)
    return 1.0 / np.sqrt(np.sum(h * h))


def _phase_arrays(schedule: CueSchedule, rate: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (cue index + 1 with 0 = no cue, activation envelope)."""
    cue_ids = np.zeros(n, dtype=np.int32)
    envelope = np.zeros(n)
    t = np.arange(n) / rate
    for ci, entry in enumerate(schedule.entries):
        i0 = int(round(entry.transition_start * rate))
        i1 = int(round(entry.hold_start * rate))
        i2 = int(round(entry.hold_end * rate))
        i3 = int(round(entry.t_end * rate))
        i0, i1, i2, i3 = (min(i, n) for i in (i0, i1, i2, i3))
        cue_ids[i0:i3] = ci + 1
        if i1 > i0:
            envelope[i0:i1] = (t[i0:i1] - entry.transition_start) / entry.transition_s
        envelope[i1:i2] = 1.0
        if i3 > i2:
            envelope[i2:i3] = 1.0 - (t[i2:i3] - entry.hold_end) / entry.return_s
    return cue_ids, envelope


def _smooth_grid_field(values: np.ndarray, grid_rows: int, grid_cols: int,
                       sigma_cells: float = 1.5) -> np.ndarray:
    """Spatially smooth a per-channel field over the electrode grid, so
    per-trial pattern jitter moves neighboring electrodes together."""
    channels = values.shape[-1]
    rows = np.arange(channels) // grid_cols
    cols = np.arange(channels) % grid_cols
    d2 = (rows[:, None] - rows[None, :]) ** 2 + (cols[:, None] - cols[None, :]) ** 2
    kernel = np.exp(-d2 / (2.0 * sigma_cells ** 2))
    kernel /= kernel.sum(axis=1, keepdims=True)
    smoothed = values @ kernel.T
    # restore unit variance lost to local averaging
    norm = np.sqrt((kernel ** 2).sum(axis=1))
    return smoothed / norm


def _per_cue_templates(config: SynthConfig, schedule: CueSchedule,
                       rng: np.random.Generator) -> np.ndarray:
    """Row ci+1 is cue ci's jittered template (row 0 = silence): the cued
    gesture's template scaled by a per-cue effort factor and a smooth
    per-channel pattern factor, modeling trial-to-trial variability."""
    n_cues = len(schedule.entries)
    out = np.zeros((n_cues + 1, config.channels))
    effort = np.exp(rng.normal(0.0, config.effort_jitter_sd, size=n_cues))
    field = rng.standard_normal((n_cues, config.channels))
    if config.pattern_jitter_sd > 0:
        field = _smooth_grid_field(field, config.grid_rows, config.grid_cols)
    pattern = np.exp(config.pattern_jitter_sd * field)
    for ci, entry in enumerate(schedule.entries):
        out[ci + 1] = config.templates[int(entry.gesture)] * effort[ci] * pattern[ci]
    return out


def synth_generate(config: SynthConfig, schedule: CueSchedule) -> Recording:
    """Render the schedule to a Recording. Bitwise deterministic per seed."""
    rate = config.sample_rate_hz
    n = int(round((schedule.total_duration_s + config.tail_s) * rate))
    rng = np.random.default_rng(config.seed)

    lo, hi = config.carrier_band_hz
    band_sos = sps.butter(4, [lo, hi], btype="bandpass", fs=rate, output="sos")
    band_scale = _band_noise_scale(band_sos)
    motion_sos = sps.butter(2, 20.0, btype="lowpass", fs=rate, output="sos")
    motion_scale = _band_noise_scale(motion_sos)

    cue_ids, envelope = _phase_arrays(schedule, rate, n)
    cue_templates = _per_cue_templates(config, schedule, rng)

    t = np.arange(n) / rate
    powerline = np.zeros(n)
    for h, gain in enumerate(config.powerline_harmonics, start=1):
        powerline += gain * np.sin(2.0 * np.pi * 60.0 * h * t + rng.uniform(0, 2 * np.pi))
    powerline *= config.powerline_amp_v
    motion = config.motion_amp_v * motion_scale * sps.sosfilt(motion_sos, rng.standard_normal(n))
    artifact_gains = 1.0 + 0.1 * rng.standard_normal(config.channels)

    samples = np.empty((config.channels, n), dtype=np.float32)
    for c in range(config.channels):
        baseline = config.noise_floor_v * band_scale * sps.sosfilt(
            band_sos, rng.standard_normal(n))
        carrier = band_scale * sps.sosfilt(band_sos, rng.standard_normal(n))
        activity = carrier * (envelope * cue_templates[cue_ids, c])
        samples[c] = (baseline + activity
                      + artifact_gains[c] * (powerline + motion)).astype(np.float32)
    return Recording(sample_rate_hz=rate, samples=samples)


def apply_gain_drift(recording: Recording, mean: float = 0.052, sd: float = 0.245,
                     seed: int = 0, min_gain: float = 0.05) -> tuple[Recording, np.ndarray]:
    """Scale each channel by 1 + g with g ~ N(mean, sd), modeling electrode
    impedance drift between sessions. Returns the drifted recording and the
    gain factors used."""
    rng = np.random.default_rng(seed)
    gains = np.maximum(1.0 + rng.normal(mean, sd, recording.channel_count), min_gain)
    drifted = (recording.samples * gains[:, np.newaxis].astype(np.float32)).astype(np.float32)
    out = Recording(sample_rate_hz=recording.sample_rate_hz, samples=drifted,
                    impedances_ohm=recording.impedances_ohm,
                    start_epoch=recording.start_epoch)
    return out, gains
