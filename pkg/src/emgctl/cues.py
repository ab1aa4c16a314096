"""Cue schedules and ground-truth window labeling.

A cue is one gesture prompt: rest a, transition b, hold c, return d seconds.
Only the final c' seconds of the hold are labeled; those samples are cut into
non-overlapping N-sample windows (8 per cue at the defaults).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gestures import ALL_GESTURES, GESTURE_NAMES, NUM_GESTURES, Gesture
from .recording import Recording

DEFAULT_REST_S = 0.5          # a
DEFAULT_TRANSITION_S = 1.0    # b
DEFAULT_HOLD_S = 3.0          # c
DEFAULT_LABEL_WINDOW_S = 2.0  # c'
DEFAULT_RETURN_S = 1.0        # d
DEFAULT_INTER_SERIES_REST_S = 60.0

SIDECAR_VERSION = 1


@dataclass(frozen=True)
class CueEntry:
    gesture: Gesture
    t_start: float
    rest_s: float = DEFAULT_REST_S
    transition_s: float = DEFAULT_TRANSITION_S
    hold_s: float = DEFAULT_HOLD_S
    return_s: float = DEFAULT_RETURN_S
    discarded: bool = False

    @property
    def transition_start(self) -> float:
        return self.t_start + self.rest_s

    @property
    def hold_start(self) -> float:
        return self.transition_start + self.transition_s

    @property
    def hold_end(self) -> float:
        return self.hold_start + self.hold_s

    @property
    def t_end(self) -> float:
        return self.hold_end + self.return_s


@dataclass(frozen=True)
class CueSchedule:
    entries: tuple[CueEntry, ...]
    label_window_s: float = DEFAULT_LABEL_WINDOW_S
    seed: int = 0
    series: int = 1
    inter_series_rest_s: float = DEFAULT_INTER_SERIES_REST_S

    def __post_init__(self):
        for e in self.entries:
            if self.label_window_s > e.hold_s:
                raise ValueError("label window c' cannot exceed the hold duration c")

    @property
    def n_cues(self) -> int:
        return len(self.entries)

    @property
    def total_duration_s(self) -> float:
        return self.entries[-1].t_end if self.entries else 0.0

    def gesture_counts(self) -> dict[Gesture, int]:
        counts = {g: 0 for g in ALL_GESTURES}
        for e in self.entries:
            counts[e.gesture] += 1
        return counts

    def discard(self, cue_index: int) -> "CueSchedule":
        """Copy of the schedule with one cue flagged as discarded."""
        entries = list(self.entries)
        entries[cue_index] = replace(entries[cue_index], discarded=True)
        return replace(self, entries=tuple(entries))


def build_cue_schedule(seed: int = 0,
                       reps_per_series: int = 5,
                       series: int = 2,
                       rest_s: float = DEFAULT_REST_S,
                       transition_s: float = DEFAULT_TRANSITION_S,
                       hold_s: float = DEFAULT_HOLD_S,
                       label_window_s: float = DEFAULT_LABEL_WINDOW_S,
                       return_s: float = DEFAULT_RETURN_S,
                       inter_series_rest_s: float = DEFAULT_INTER_SERIES_REST_S) -> CueSchedule:
    """Seeded schedule: each series holds reps_per_series of every gesture in
    a random order, with a one-minute rest between series."""
    if reps_per_series < 1:
        raise ValueError("reps_per_series must be >= 1")
    if series < 1:
        raise ValueError("series must be >= 1")
    rng = np.random.default_rng(seed)
    entries: list[CueEntry] = []
    t = 0.0
    for s in range(series):
        if s > 0:
            t += inter_series_rest_s
        block = np.repeat([g.value for g in ALL_GESTURES], reps_per_series)
        order = rng.permutation(block)
        for gid in order:
            entry = CueEntry(gesture=Gesture(int(gid)), t_start=t, rest_s=rest_s,
                             transition_s=transition_s, hold_s=hold_s, return_s=return_s)
            entries.append(entry)
            t = entry.t_end
    return CueSchedule(entries=tuple(entries), label_window_s=label_window_s,
                       seed=seed, series=series, inter_series_rest_s=inter_series_rest_s)


def preset_schedule(preset: str, seed: int = 0) -> CueSchedule:
    """Named presets: 'initial' (100 cues), 'recalibration' (50 cues), and
    'feedback' (50 cues with a longer hold so >= 20 decode ticks land in it)."""
    if preset == "initial":
        return build_cue_schedule(seed=seed, reps_per_series=5, series=2)
    if preset == "recalibration":
        return build_cue_schedule(seed=seed, reps_per_series=5, series=1)
    if preset == "feedback":
        return build_cue_schedule(seed=seed, reps_per_series=5, series=1, hold_s=3.5)
    raise ValueError(f"unknown preset {preset!r} (expected initial|recalibration|feedback)")


def schedule_to_dict(schedule: CueSchedule) -> dict:
    return {
        "version": SIDECAR_VERSION,
        "seed": schedule.seed,
        "series": schedule.series,
        "label_window_s": schedule.label_window_s,
        "inter_series_rest_s": schedule.inter_series_rest_s,
        "entries": [
            {
                "gesture_id": int(e.gesture),
                "gesture_name": GESTURE_NAMES[e.gesture],
                "t_start": e.t_start,
                "rest_s": e.rest_s,
                "transition_s": e.transition_s,
                "hold_s": e.hold_s,
                "return_s": e.return_s,
                "discarded": e.discarded,
            }
            for e in schedule.entries
        ],
    }


def schedule_from_dict(data: dict) -> CueSchedule:
    if data.get("version") != SIDECAR_VERSION:
        raise ValueError(f"unsupported cue sidecar version {data.get('version')}")
    entries = tuple(
        CueEntry(
            gesture=Gesture(int(e["gesture_id"])),
            t_start=float(e["t_start"]),
            rest_s=float(e["rest_s"]),
            transition_s=float(e["transition_s"]),
            hold_s=float(e["hold_s"]),
            return_s=float(e["return_s"]),
            discarded=bool(e.get("discarded", False)),
        )
        for e in data["entries"]
    )
    return CueSchedule(entries=entries,
                       label_window_s=float(data["label_window_s"]),
                       seed=int(data.get("seed", 0)),
                       series=int(data.get("series", 1)),
                       inter_series_rest_s=float(data.get("inter_series_rest_s",
                                                          DEFAULT_INTER_SERIES_REST_S)))


def schedule_write(schedule: CueSchedule, path) -> None:
    with open(path, "w") as fh:
        json.dump(schedule_to_dict(schedule), fh, indent=2)


def schedule_read(path) -> CueSchedule:
    with open(path) as fh:
        return schedule_from_dict(json.load(fh))


@dataclass(frozen=True)
class LabeledDataset:
    """Window slice table: window i is samples[:, starts[i] : starts[i] + n].

    Provenance (cue index, window index within the cue) is kept per window so
    reports can trace a sample back to its cue.
    """
    window_starts: np.ndarray   # int sample indices
    labels: np.ndarray          # int gesture ids
    cue_indices: np.ndarray
    window_indices: np.ndarray
    window_samples: int

    def __post_init__(self):
        for name in ("window_starts", "labels", "cue_indices", "window_indices"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        if not (len(self.window_starts) == len(self.labels)
                == len(self.cue_indices) == len(self.window_indices)):
            raise ValueError("parallel arrays must have equal length")

    def __len__(self) -> int:
        return int(len(self.window_starts))

    def extract(self, samples: np.ndarray, i: int) -> np.ndarray:
        """(N, channels) window i from a (channels, n) sample array."""
        s = self.window_starts[i]
        return np.asarray(samples[:, s:s + self.window_samples], dtype=float).T

    def rms_matrix(self, filtered_samples: np.ndarray) -> np.ndarray:
        """(n_windows, channels) RMS of every window of a filtered array."""
        out = np.empty((len(self), filtered_samples.shape[0]))
        for i in range(len(self)):
            w = self.extract(filtered_samples, i)
            out[i] = np.sqrt(np.mean(np.square(w), axis=0))
        return out


def label_windows(recording: Recording, schedule: CueSchedule,
                  window_samples: int = 1000) -> LabeledDataset:
    """Cut the final c' seconds of every non-discarded cue hold into
    non-overlapping N-sample windows labeled with the cued gesture."""
    rate = recording.sample_rate_hz
    per_cue = int(math.floor(schedule.label_window_s * rate / window_samples))
    if per_cue < 1:
        raise ValueError("label window shorter than one analysis window")
    starts, labels, cue_idx, win_idx = [], [], [], []
    for ci, entry in enumerate(schedule.entries):
        end_index = recording.time_to_index(entry.hold_end)
        if end_index > recording.n_samples:
            raise ValueError(
                f"recording too short: cue {ci} ({GESTURE_NAMES[entry.gesture]}) "
                f"holds until {entry.hold_end:.2f}s but recording ends at "
                f"{recording.duration_s:.2f}s")
        if entry.discarded:
            continue
        label_start = recording.time_to_index(entry.hold_end - schedule.label_window_s)
        for w in range(per_cue):
            starts.append(label_start + w * window_samples)
            labels.append(int(entry.gesture))
            cue_idx.append(ci)
            win_idx.append(w)
    return LabeledDataset(window_starts=np.array(starts), labels=np.array(labels),
                          cue_indices=np.array(cue_idx), window_indices=np.array(win_idx),
                          window_samples=window_samples)
