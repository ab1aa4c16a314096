"""Session analytics: SNR, RMS heatmaps, distance/similarity matrices between
datasets, and the real-time accuracy harness.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from .bundle import ModelBundle
from .cues import CueEntry, CueSchedule
from .gestures import ALL_GESTURES, GESTURE_NAMES, NUM_GESTURES, Gesture
from .pipeline import OnlinePipeline, SIGMA_FLOOR
from .recording import Recording
from .streaming import WindowSource


def snr(mvc_window: np.ndarray, rest_window: np.ndarray) -> float:
    """sqrt(sum m^2 / sum r^2) pooled over all channels and timesteps.

    Both windows are raw (n_samples, channels) slices, conventionally the
    final 2 s of the respective holds.
    """
    m = np.asarray(mvc_window, dtype=float)
    r = np.asarray(rest_window, dtype=float)
    if m.ndim != 2 or r.ndim != 2 or m.shape[1] != r.shape[1]:
        raise ValueError("windows must be (n, channels) with equal channel counts")
    rest_energy = np.sum(np.square(r))
    if rest_energy == 0:
        raise ValueError("degenerate rest signal: zero energy")
    return float(np.sqrt(np.sum(np.square(m)) / rest_energy))


def cue_hold_tail(recording: Recording, entry: CueEntry, seconds: float = 2.0) -> np.ndarray:
    """Raw (n, channels) slice of the final `seconds` of a cue's hold."""
    if seconds > entry.hold_s:
        raise ValueError("tail longer than the hold phase")
    stop = recording.time_to_index(entry.hold_end)
    start = recording.time_to_index(entry.hold_end - seconds)
    if stop > recording.n_samples:
        raise ValueError("recording ends before the cue's hold")
    return recording.samples[:, start:stop].astype(float).T


def snr_from_session(recording: Recording, schedule: CueSchedule,
                     seconds: float = 2.0) -> float:
    """Session SNR: Fingers Closed (MVC) hold tails pooled over all cues,
    against the pooled Rest hold tails."""
    def tails(gesture: Gesture) -> np.ndarray:
        parts = [cue_hold_tail(recording, e, seconds) for e in schedule.entries
                 if e.gesture == gesture and not e.discarded]
        if not parts:
            raise ValueError(f"no {GESTURE_NAMES[gesture]} cue in the schedule")
        return np.concatenate(parts, axis=0)
    return snr(tails(Gesture.FINGERS_CLOSED), tails(Gesture.REST))


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # (grid_rows, grid_cols); NaN for rejected channels
    gesture: Gesture
    dataset_tag: str = "initial"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ValueError("heatmap values must be 2-D")


def _to_grid(channel_values: np.ndarray, grid_rows: int, grid_cols: int,
             accepted_indices: np.ndarray | None = None) -> np.ndarray:
    full = np.full(grid_rows * grid_cols, np.nan)
    if accepted_indices is None:
        if channel_values.size != full.size:
            raise ValueError(f"expected {full.size} channel values, got {channel_values.size}")
        full[:] = channel_values
    else:
        full[accepted_indices] = channel_values
    return full.reshape(grid_rows, grid_cols)


def mean_rms_heatmap(rms_windows: np.ndarray, labels: np.ndarray, gesture: Gesture,
                     grid_rows: int = 8, grid_cols: int = 8,
                     dataset_tag: str = "initial",
                     accepted_indices: np.ndarray | None = None) -> Heatmap:
    """Per-electrode mean of RMS values over every window of one gesture."""
    rms = np.asarray(rms_windows, dtype=float)
    y = np.asarray(labels, dtype=int)
    sel = y == int(gesture)
    if not np.any(sel):
        raise ValueError(f"no windows of gesture {GESTURE_NAMES[gesture]}")
    mean = rms[sel].mean(axis=0)
    return Heatmap(values=_to_grid(mean, grid_rows, grid_cols, accepted_indices),
                   gesture=gesture, dataset_tag=dataset_tag)


@dataclass(frozen=True)
class PairwiseMatrix:
    """20x20 gesture-by-dataset comparison; rows 0-9 are dataset A's gestures,
    rows 10-19 dataset B's."""
    values: np.ndarray
    row_labels: tuple  # (gesture_id, dataset_tag) per row
    metric: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (len(self.row_labels), len(self.row_labels)):
            raise ValueError("matrix must be square over the row labels")


def pairwise_matrix(rms_a: np.ndarray, labels_a: np.ndarray,
                    rms_b: np.ndarray, labels_b: np.ndarray,
                    metric: str = "euclidean",
                    tags: tuple[str, str] = ("initial", "recalibration")) -> PairwiseMatrix:
    """Distance/similarity between per-gesture mean heatmaps of two datasets.

    Each electrode is z-scored across the pooled windows of both datasets
    first, so comparisons are scale-free per electrode.
    """
    if metric not in ("euclidean", "cosine"):
        raise ValueError("metric must be 'euclidean' or 'cosine'")
    ra, rb = np.asarray(rms_a, dtype=float), np.asarray(rms_b, dtype=float)
    ya, yb = np.asarray(labels_a, dtype=int), np.asarray(labels_b, dtype=int)
    for tag, y in ((tags[0], ya), (tags[1], yb)):
        missing = sorted(set(range(NUM_GESTURES)) - set(np.unique(y).tolist()))
        if missing:
            names = ", ".join(GESTURE_NAMES[m] for m in missing)
            raise ValueError(f"dataset {tag!r} is missing gesture(s): {names}")
    pooled = np.vstack([ra, rb])
    mu = pooled.mean(axis=0)
    sigma = np.maximum(pooled.std(axis=0), SIGMA_FLOOR)
    za = (ra - mu) / sigma
    zb = (rb - mu) / sigma

    rows = []
    row_labels = []
    for tag, z, y in ((tags[0], za, ya), (tags[1], zb, yb)):
        for g in ALL_GESTURES:
            rows.append(z[y == int(g)].mean(axis=0))
            row_labels.append((int(g), tag))
    mat = np.vstack(rows)

    if metric == "euclidean":
        diff = mat[:, np.newaxis, :] - mat[np.newaxis, :, :]
        values = np.sqrt(np.sum(np.square(diff), axis=-1))
    else:
        norms = np.maximum(np.linalg.norm(mat, axis=1), SIGMA_FLOOR)
        values = (mat @ mat.T) / np.outer(norms, norms)
        np.fill_diagonal(values, 1.0)
        values = np.clip(values, -1.0, 1.0)
    values = (values + values.T) / 2.0  # enforce exact symmetry
    if metric == "euclidean":
        np.fill_diagonal(values, 0.0)
    return PairwiseMatrix(values=values, row_labels=tuple(row_labels), metric=metric)


@dataclass
class CueAccuracy:
    cue_index: int
    gesture: Gesture
    n_predictions: int
    n_correct: int
    flagged: bool

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_predictions if self.n_predictions else 0.0

    def to_dict(self) -> dict:
        return {"cue_index": self.cue_index, "gesture": GESTURE_NAMES[self.gesture],
                "n_predictions": self.n_predictions, "n_correct": self.n_correct,
                "accuracy": self.accuracy, "flagged": self.flagged}


@dataclass
class HarnessResult:
    cues: list[CueAccuracy]
    tick_rate_hz: float
    min_predictions: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([c.accuracy for c in self.cues])) if self.cues else 0.0

    @property
    def median_accuracy(self) -> float:
        return float(np.median([c.accuracy for c in self.cues])) if self.cues else 0.0

    def trendline(self) -> tuple[float, float]:
        """Least-squares (slope, intercept) of per-cue accuracy vs cue order."""
        if len(self.cues) < 2:
            return 0.0, self.mean_accuracy
        x = np.array([c.cue_index for c in self.cues], dtype=float)
        y = np.array([c.accuracy for c in self.cues])
        slope, intercept = np.polyfit(x, y, 1)
        return float(slope), float(intercept)

    def to_dict(self) -> dict:
        slope, intercept = self.trendline()
        return {"cues": [c.to_dict() for c in self.cues],
                "mean_accuracy": self.mean_accuracy,
                "median_accuracy": self.median_accuracy,
                "trend_slope": slope, "trend_intercept": intercept,
                "tick_rate_hz": self.tick_rate_hz,
                "min_predictions": self.min_predictions}


def realtime_accuracy_harness(bundle: ModelBundle, schedule: CueSchedule,
                              source: WindowSource, tick_rate_hz: float = 6.0,
                              min_predictions: int = 20,
                              classify_fn=None,
                              wait_timeout_s: float = 30.0) -> HarnessResult:
    """Pace classifier predictions at the decode tick rate against a live or
    replayed stream and score each cue's hold phase.

    For every cue, all predictions whose tick time falls inside the hold
    phase are compared with the cued gesture. Cues that collect fewer than
    min_predictions are flagged but still reported.
    """
    online = OnlinePipeline(bundle.pipeline)
    if classify_fn is None:
        def classify_fn(features, t):  # noqa: ANN001 - local default
            return clf.softmax(bundle.model.forward(features))

    holds = [(e.hold_start, e.hold_end, i, e.gesture)
             for i, e in enumerate(schedule.entries) if not e.discarded]
    counters = {i: [0, 0] for _, _, i, _ in holds}  # cue -> [n, correct]

    tick = 1
    end_time = schedule.total_duration_s
    rate = source.sample_rate_hz
    n = bundle.window_samples
    while True:
        t = tick / tick_rate_hz
        if t > end_time:
            break
        if not source.wait_for_time(t, timeout=wait_timeout_s):
            break
        # deterministic tick-to-span mapping; fall back to the newest window
        # if the exact span is no longer buffered (consumer fell behind)
        end = max(int(np.ceil(t * rate)), n)
        window = source.window_ending_at(end) or source.latest_window()
        if window is None:
            tick += 1
            continue
        online.push_at(window.samples, window.start_sample)
        features = online.latest_features()
        if features is not None:
            p = np.asarray(classify_fn(features, t), dtype=float)
            predicted = int(np.argmax(p))
            for start, stop, idx, gesture in holds:
                if start <= t <= stop:
                    counters[idx][0] += 1
                    counters[idx][1] += int(predicted == int(gesture))
                    break
        tick += 1

    cues = [CueAccuracy(cue_index=idx, gesture=gesture,
                        n_predictions=counters[idx][0], n_correct=counters[idx][1],
                        flagged=counters[idx][0] < min_predictions)
            for _, _, idx, gesture in holds]
    return HarnessResult(cues=cues, tick_rate_hz=tick_rate_hz,
                         min_predictions=min_predictions)
