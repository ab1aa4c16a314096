"""Streaming preprocessing: channel rejection, high-pass filter, windowed RMS,
z-score normalization, and PCA projection down to K features.

The stages mirror the real-time decoding path: raw multichannel voltage frames
are high-pass filtered sample-by-sample (stateful, causal), the last N filtered
samples form the analysis window, and RMS -> z-score -> PCA turns that window
into one feature vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

DEFAULT_SAMPLE_RATE_HZ = 4000.0
DEFAULT_WINDOW_SAMPLES = 1000        # 250 ms at 4 kHz
DEFAULT_FILTER_ORDER = 4
DEFAULT_CUTOFF_HZ = 120.0
DEFAULT_IMPEDANCE_THRESHOLD_OHM = 500e3
DEFAULT_PCA_COMPONENTS = 30
SIGMA_FLOOR = 1e-12                  # survives dead (constant) channels


@dataclass(frozen=True)
class ElectrodeArray:
    """8x8 forearm grid; channel index c maps to grid cell (c // cols, c % cols)."""
    channel_count: int = 64
    grid_rows: int = 8
    grid_cols: int = 8
    inter_electrode_mm: tuple[float, float] = (10.0, 15.0)  # tangential, axial

    def __post_init__(self):
        if self.channel_count > 64:
            raise ValueError("channel_count must be <= 64")
        if self.channel_count != self.grid_rows * self.grid_cols:
            raise ValueError("channel_count must equal grid_rows * grid_cols")

    def grid_index(self, channel: int) -> tuple[int, int]:
        if not 0 <= channel < self.channel_count:
            raise ValueError(f"channel {channel} out of range")
        return divmod(channel, self.grid_cols)

    def channel_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.grid_rows and 0 <= col < self.grid_cols):
            raise ValueError(f"grid cell ({row}, {col}) out of range")
        return row * self.grid_cols + col


@dataclass(frozen=True)
class ChannelMask:
    """Boolean accept flag per channel. M = number of accepted channels."""
    accepted: np.ndarray  # bool, shape (channel_count,)

    def __post_init__(self):
        acc = np.asarray(self.accepted, dtype=bool)
        object.__setattr__(self, "accepted", acc)
        if acc.ndim != 1:
            raise ValueError("accepted must be a 1-D boolean array")
        if self.M < 1:
            raise ValueError("no usable channels: every channel was rejected")

    @property
    def M(self) -> int:
        return int(self.accepted.sum())

    @property
    def channel_count(self) -> int:
        return int(self.accepted.size)

    @property
    def accepted_indices(self) -> np.ndarray:
        return np.flatnonzero(self.accepted)

    def apply(self, samples: np.ndarray, axis: int = 0) -> np.ndarray:
        """Select accepted channels along the given axis."""
        return np.take(samples, self.accepted_indices, axis=axis)

    @classmethod
    def all_accepted(cls, channel_count: int) -> "ChannelMask":
        return cls(np.ones(channel_count, dtype=bool))


def reject_channels(impedances_ohm, threshold_ohm: float = DEFAULT_IMPEDANCE_THRESHOLD_OHM) -> ChannelMask:
    """Accept a channel iff its electrode impedance is <= threshold.

    Channels strictly above the threshold are ignored for the rest of the
    session. Raises if every channel is rejected.
    """
    imp = np.asarray(impedances_ohm, dtype=float)
    if imp.ndim != 1 or imp.size == 0:
        raise ValueError("impedances must be a nonempty 1-D array")
    if not np.all(np.isfinite(imp)) or np.any(imp < 0):
        raise ValueError("impedances must be finite and nonnegative")
    if threshold_ohm <= 0:
        raise ValueError("threshold must be positive")
    return ChannelMask(imp <= threshold_ohm)


@dataclass(frozen=True)
class FilterSpec:
    """High-pass Butterworth design realized as cascaded second-order sections."""
    order: int
    cutoff_hz: float
    sample_rate_hz: float
    sections: np.ndarray  # shape (n_sections, 6): b0 b1 b2 a0 a1 a2

    def __post_init__(self):
        sos = np.asarray(self.sections, dtype=float)
        object.__setattr__(self, "sections", sos)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ValueError("sections must have shape (n_sections, 6)")
        if sos.shape[0] != math.ceil(self.order / 2):
            raise ValueError("section count must be ceil(order / 2)")
        if np.max(np.abs(self.poles())) >= 1.0:
            raise ValueError("unstable filter: pole on or outside the unit circle")

    @property
    def n_sections(self) -> int:
        return int(self.sections.shape[0])

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(sec[3:]) for sec in self.sections])

    def magnitude_at(self, freq_hz) -> np.ndarray:
        """Measured digital magnitude response at the given frequencies."""
        w = 2.0 * np.pi * np.atleast_1d(np.asarray(freq_hz, dtype=float)) / self.sample_rate_hz
        _, h = sps.sosfreqz(self.sections, worN=w)
        return np.abs(h)


def butterworth_highpass_gain(freq_hz, cutoff_hz: float, order: int) -> np.ndarray:
    """Analog Butterworth high-pass magnitude, w^n / sqrt(1 + w^2n) with
    w = freq / cutoff. This is the design target the digital filter is
    measured against."""
    w = np.asarray(freq_hz, dtype=float) / cutoff_hz
    wn = w ** order
    return wn / np.sqrt(1.0 + wn * wn)


def design_highpass(order: int = DEFAULT_FILTER_ORDER,
                    cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> FilterSpec:
    """Design the high-pass Butterworth: analog prototype, bilinear transform
    with cutoff prewarping, cascaded second-order sections."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={sample_rate_hz / 2} Hz)")
    sos = sps.butter(order, cutoff_hz, btype="highpass", fs=sample_rate_hz, output="sos")
    return FilterSpec(order=order, cutoff_hz=cutoff_hz, sample_rate_hz=sample_rate_hz, sections=sos)


class StreamingFilter:
    """Causal per-channel realization of a FilterSpec.

    Holds the per-channel, per-section delay registers so a signal can be
    filtered frame-by-frame (or block-by-block) with output identical to
    filtering it in one call.
    """

    def __init__(self, spec: FilterSpec, channels: int):
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.spec = spec
        self.channels = channels
        self._zi = np.zeros((spec.n_sections, 2, channels))

    @property
    def state(self) -> np.ndarray:
        return self._zi

    def reset(self) -> None:
        self._zi[:] = 0.0

    def process(self, block: np.ndarray) -> np.ndarray:
        """Filter a (n_samples, channels) block, updating state in place.

        Raises on non-finite input and leaves the state untouched in that case.
        """
        x = np.asarray(block, dtype=float)
        one_frame = x.ndim == 1
        if one_frame:
            x = x[np.newaxis, :]
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite sample in input block")
        y, self._zi = sps.sosfilt(self.spec.sections, x, axis=0, zi=self._zi)
        return y[0] if one_frame else y


def filter_step(streaming_filter: StreamingFilter, frame: np.ndarray) -> np.ndarray:
    """One output frame per input frame of M channel samples."""
    return streaming_filter.process(frame)


def filter_recording_array(spec: FilterSpec, samples: np.ndarray,
                           block_samples: int = 200_000) -> np.ndarray:
    """Filter a full (channels, n_samples) array causally from zero state.

    Processes in blocks to bound memory; identical output to one-shot sosfilt.
    """
    channels, n = samples.shape
    filt = StreamingFilter(spec, channels)
    out = np.empty((channels, n), dtype=float)
    for start in range(0, n, block_samples):
        stop = min(start + block_samples, n)
        out[:, start:stop] = filt.process(samples[:, start:stop].T).T
    return out


@dataclass(frozen=True)
class SampleWindow:
    """One N-sample, M-channel slice of (filtered) signal; the decoding unit."""
    samples: np.ndarray  # shape (N, M)
    start_time: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be a nonempty (N, M) matrix")
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite sample in window")

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.samples.shape[1])


def window_rms(window) -> np.ndarray:
    """Root-mean-square of each channel over the window: sqrt(mean(x^2)).

    Accepts a SampleWindow or an (N, M) array; returns M nonnegative values.
    """
    x = window.samples if isinstance(window, SampleWindow) else np.asarray(window, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("window must be a nonempty (N, M) matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample in window")
    return np.sqrt(np.mean(np.square(x), axis=0))


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-score parameters fitted on training RMS windows."""
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if mu.shape != sigma.shape or mu.ndim != 1:
            raise ValueError("mu and sigma must be 1-D arrays of equal length")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive (fit_normalizer floors it)")


def fit_normalizer(training_rms: np.ndarray) -> Normalizer:
    """Per-channel mean and population standard deviation of training RMS rows.

    sigma is floored at 1e-12 so constant (dead) channels normalize to zero
    instead of blowing up.
    """
    x = np.asarray(training_rms, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 training RMS vectors")
    mu = x.mean(axis=0)
    sigma = np.maximum(x.std(axis=0), SIGMA_FLOOR)
    return Normalizer(mu=mu, sigma=sigma)


def normalize(norm: Normalizer, rms: np.ndarray) -> np.ndarray:
    """Elementwise (x - mu) / sigma. Works on one vector or a stack of rows."""
    x = np.asarray(rms, dtype=float)
    if x.shape[-1] != norm.mu.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} channels vs {norm.mu.shape[0]}")
    return (x - norm.mu) / norm.sigma


@dataclass(frozen=True)
class PcaBasis:
    """First K left-singular vectors (columns) of the training z-score matrix."""
    components: np.ndarray       # shape (M, K), orthonormal columns
    singular_values: np.ndarray  # all M singular values, descending

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=float)
        sv = np.asarray(self.singular_values, dtype=float)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "singular_values", sv)
        if comp.ndim != 2:
            raise ValueError("components must be an (M, K) matrix")
        gram = comp.T @ comp
        if not np.allclose(gram, np.eye(comp.shape[1]), atol=1e-8):
            raise ValueError("components must be orthonormal within 1e-8")

    @property
    def K(self) -> int:
        return int(self.components.shape[1])

    @property
    def M(self) -> int:
        return int(self.components.shape[0])

    def explained_variance_ratio(self) -> np.ndarray:
        power = self.singular_values ** 2
        total = power.sum()
        if total == 0:
            return np.zeros(self.K)
        return power[: self.K] / total


def fit_pca(z_matrix: np.ndarray, k: int = DEFAULT_PCA_COMPONENTS) -> PcaBasis:
    """SVD of the (channels x samples) z-score matrix; keep the first K left
    singular vectors, ordered by descending singular value.

    No re-centering: channel means are already ~0 by construction of the
    z-score stage.
    """
    a = np.asarray(z_matrix, dtype=float)
    if a.ndim != 2:
        raise ValueError("z_matrix must be (channels, samples)")
    m, n = a.shape
    if k < 1 or k > m:
        raise ValueError(f"K={k} must satisfy 1 <= K <= M={m}")
    if n < k:
        raise ValueError(f"need at least K={k} samples, got {n}")
    u, s, _ = np.linalg.svd(a, full_matrices=True)
    return PcaBasis(components=u[:, :k], singular_values=s)


def pca_project(basis: PcaBasis, z: np.ndarray) -> np.ndarray:
    """Project z-scores onto the basis: y_j = dot(z, u_j), j = 1..K."""
    x = np.asarray(z, dtype=float)
    if x.shape[-1] != basis.M:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs M={basis.M}")
    return x @ basis.components


@dataclass(frozen=True)
class FittedPipeline:
    """Immutable fitted preprocessing: mask -> filter -> RMS -> z -> PCA.

    Safe to share read-only across threads; create one StreamingFilter /
    OnlinePipeline per stream.
    """
    mask: ChannelMask
    filter_spec: FilterSpec
    normalizer: Normalizer
    basis: PcaBasis
    window_samples: int = DEFAULT_WINDOW_SAMPLES

    @property
    def K(self) -> int:
        return self.basis.K

    def features_from_filtered(self, window: np.ndarray) -> np.ndarray:
        """Filtered (N, M) window -> K-vector."""
        return pca_project(self.basis, normalize(self.normalizer, window_rms(window)))

    def features_from_rms(self, rms: np.ndarray) -> np.ndarray:
        return pca_project(self.basis, normalize(self.normalizer, rms))


class OnlinePipeline:
    """Streaming front half of a FittedPipeline for one stream.

    push() raw (n, channel_count) sample blocks; the accepted channels are
    filtered continuously and the last N filtered samples are kept. latest
    window -> one feature vector.
    """

    def __init__(self, fitted: FittedPipeline):
        self.fitted = fitted
        self._filter = StreamingFilter(fitted.filter_spec, fitted.mask.M)
        n = fitted.window_samples
        self._ring = np.zeros((n, fitted.mask.M))
        self._fill = 0
        self._total_samples = 0
        self._next_sample = 0  # absolute stream index of the next expected sample
        self._started = False
        self.gap_events = 0

    @property
    def samples_seen(self) -> int:
        return self._total_samples

    @property
    def next_sample(self) -> int:
        return self._next_sample

    @property
    def ready(self) -> bool:
        return self._fill >= self.fitted.window_samples

    def reset(self) -> None:
        self._filter.reset()
        self._fill = 0
        self._total_samples = 0
        self._next_sample = 0
        self._started = False

    def push(self, raw_block: np.ndarray) -> None:
        """Consume a (n_samples, channel_count) raw block (all channels;
        the mask is applied here)."""
        block = np.asarray(raw_block, dtype=float)
        if block.ndim != 2:
            raise ValueError("raw block must be (n_samples, channels)")
        if block.shape[0] == 0:
            return
        if block.shape[1] == self.fitted.mask.channel_count:
            block = self.fitted.mask.apply(block, axis=1)
        elif block.shape[1] != self.fitted.mask.M:
            raise ValueError(
                f"block has {block.shape[1]} channels; expected "
                f"{self.fitted.mask.channel_count} raw or {self.fitted.mask.M} masked")
        filtered = self._filter.process(block)
        n = self.fitted.window_samples
        if filtered.shape[0] >= n:
            self._ring[:] = filtered[-n:]
        else:
            self._ring = np.roll(self._ring, -filtered.shape[0], axis=0)
            self._ring[-filtered.shape[0]:] = filtered
        self._fill = min(n, self._fill + filtered.shape[0])
        self._total_samples += block.shape[0]
        self._next_sample += block.shape[0]

    def push_at(self, raw_block: np.ndarray, start_sample: int) -> None:
        """Push a block whose first row is absolute stream sample start_sample.

        Overlap with already-consumed samples is skipped so the filter stays
        continuous across overlapping windows; a gap resets the filter and
        window fill so no emitted window spans missing samples.
        """
        block = np.asarray(raw_block, dtype=float)
        if block.ndim != 2:
            raise ValueError("raw block must be (n_samples, channels)")
        if block.shape[0] == 0:
            return
        if not self._started:  # first push defines the stream origin
            self._next_sample = int(start_sample)
            self._started = True
        overlap = self._next_sample - int(start_sample)
        if overlap < 0:  # gap in the stream
            self._filter.reset()
            self._fill = 0
            self.gap_events += 1
            self._next_sample = int(start_sample)
            overlap = 0
        if overlap >= block.shape[0]:
            return
        self.push(block[overlap:])

    def latest_window(self) -> np.ndarray | None:
        """Copy of the last N filtered samples, or None until N samples seen."""
        if not self.ready:
            return None
        return self._ring.copy()

    def latest_features(self) -> np.ndarray | None:
        window = self.latest_window()
        if window is None:
            return None
        return self.fitted.features_from_filtered(window)
