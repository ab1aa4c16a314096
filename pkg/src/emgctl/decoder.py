"""Turns per-tick classifier probabilities into stable gesture decisions.

Three mechanisms in series: exponential confidence filtering of the softmax
output, thresholding (argmax appended to a short buffer only while its
confidence exceeds r, Rest otherwise), and simple majority voting over the
last m buffer entries. A 3-second Pinch Fingers hold toggles the control
mode, with a cooldown against accidental double switches.
"""
from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import classifier as clf
from .bundle import ModelBundle
from .gestures import NUM_GESTURES, Gesture
from .pipeline import OnlinePipeline, SampleWindow

DEFAULT_ALPHA = 0.5
DEFAULT_THRESHOLD = 0.5
DEFAULT_VOTE_M = 3
DEFAULT_TICK_RATE_HZ = 6.0
DEFAULT_MODE_HOLD_S = 3.0
DEFAULT_MODE_COOLDOWN_S = 2.0


class ControlMode(Enum):
    WRIST_GRIPPER = "wg"
    ARM_DRIVE = "ad"

    def toggled(self) -> "ControlMode":
        return ControlMode.ARM_DRIVE if self is ControlMode.WRIST_GRIPPER \
            else ControlMode.WRIST_GRIPPER


class ConfidenceState:
    """Exponentially filtered probability vector plus the m-length vote buffer.

    p' starts uniform (1/10 per class) and the buffer starts saturated with
    Rest, the safe-stop gesture.
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, threshold_r: float = DEFAULT_THRESHOLD,
                 m: int = DEFAULT_VOTE_M):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if m < 1:
            raise ValueError("m must be >= 1")
        self.alpha = alpha
        self.threshold_r = threshold_r
        self.m = m
        self.p_prime = np.full(NUM_GESTURES, 1.0 / NUM_GESTURES)
        self.buffer: deque[Gesture] = deque([Gesture.REST] * m, maxlen=m)

    def reset(self) -> None:
        self.p_prime[:] = 1.0 / NUM_GESTURES
        self.buffer.clear()
        self.buffer.extend([Gesture.REST] * self.m)


def confidence_update(state: ConfidenceState, p: np.ndarray) -> np.ndarray:
    """p' <- (1 - alpha) p' + alpha p. Returns the new p'."""
    probs = np.asarray(p, dtype=float)
    if probs.shape != (NUM_GESTURES,):
        raise ValueError(f"expected {NUM_GESTURES} probabilities, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0) \
            or abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("input is not a probability vector")
    state.p_prime = (1.0 - state.alpha) * state.p_prime + state.alpha * probs
    return state.p_prime


def threshold_and_vote(state: ConfidenceState, p_prime: np.ndarray | None = None) -> Gesture:
    """Append argmax(p') if it clears the threshold (Rest otherwise), then
    output the gesture holding a strict majority of the buffer; Rest if none."""
    pp = state.p_prime if p_prime is None else np.asarray(p_prime, dtype=float)
    best = int(np.argmax(pp))
    candidate = Gesture(best) if pp[best] > state.threshold_r else Gesture.REST
    state.buffer.append(candidate)
    label, count = Counter(state.buffer).most_common(1)[0]
    return label if count > state.m / 2 else Gesture.REST


@dataclass(frozen=True)
class DecodedGesture:
    label: Gesture
    tick_index: int
    consecutive_count: int  # >= 1, resets to 1 when the label changes


class ModeSwitchState:
    def __init__(self, mode: ControlMode = ControlMode.WRIST_GRIPPER,
                 hold_s: float = DEFAULT_MODE_HOLD_S,
                 cooldown_s: float = DEFAULT_MODE_COOLDOWN_S):
        self.mode = mode
        self.hold_s = hold_s
        self.cooldown_s = cooldown_s
        self.pinch_hold_ticks = 0
        self.cooldown_remaining_ticks = 0


def mode_switch_update(state: ModeSwitchState, decoded: Gesture,
                       tick_rate_hz: float = DEFAULT_TICK_RATE_HZ) -> ControlMode | None:
    """Advance the hold/cooldown counters one tick; returns the new mode on
    the tick the switch happens, else None.

    Pinch ticks only accumulate while no cooldown is pending; anything other
    than Pinch resets the hold counter.
    """
    if tick_rate_hz <= 0:
        raise ValueError("tick_rate_hz must be positive")
    if state.cooldown_remaining_ticks > 0:
        state.cooldown_remaining_ticks -= 1
        state.pinch_hold_ticks = 0
        return None
    if decoded == Gesture.PINCH_FINGERS:
        state.pinch_hold_ticks += 1
        if state.pinch_hold_ticks >= math.ceil(state.hold_s * tick_rate_hz):
            state.mode = state.mode.toggled()
            state.pinch_hold_ticks = 0
            state.cooldown_remaining_ticks = math.ceil(state.cooldown_s * tick_rate_hz)
            return state.mode
    else:
        state.pinch_hold_ticks = 0
    return None


@dataclass(frozen=True)
class DecoderTick:
    """Everything one decode tick produced, for event streams and control."""
    decoded: DecodedGesture
    p_prime: np.ndarray
    mode: ControlMode
    mode_changed: bool
    injected: bool = False


class GestureDecoder:
    """Deterministic per-stream state machine: same input stream, same output.

    Samples are pushed as they arrive (the filter runs continuously); each
    decode tick classifies the latest N filtered samples and advances the
    confidence/vote/mode state.
    """

    def __init__(self, bundle: ModelBundle,
                 alpha: float = DEFAULT_ALPHA,
                 threshold_r: float = DEFAULT_THRESHOLD,
                 vote_m: int = DEFAULT_VOTE_M,
                 tick_rate_hz: float = DEFAULT_TICK_RATE_HZ,
                 initial_mode: ControlMode = ControlMode.WRIST_GRIPPER,
                 mode_hold_s: float = DEFAULT_MODE_HOLD_S,
                 mode_cooldown_s: float = DEFAULT_MODE_COOLDOWN_S):
        self.bundle = bundle
        self.online = OnlinePipeline(bundle.pipeline)
        self.confidence = ConfidenceState(alpha, threshold_r, vote_m)
        self.mode_state = ModeSwitchState(initial_mode, mode_hold_s, mode_cooldown_s)
        self.tick_rate_hz = tick_rate_hz
        self._tick = 0
        self._last: DecodedGesture | None = None

    @property
    def tick_index(self) -> int:
        return self._tick

    @property
    def mode(self) -> ControlMode:
        return self.mode_state.mode

    def push_samples(self, block: np.ndarray, start_sample: int | None = None) -> None:
        """Feed raw stream samples (n, channels). Overlap with already-seen
        samples is skipped; a gap resets the filter so no window spans it."""
        start = self.online.next_sample if start_sample is None else int(start_sample)
        self.online.push_at(block, start)

    def step_probabilities(self, p: np.ndarray, injected: bool = False) -> DecoderTick:
        """Advance one tick from a 10-class probability vector."""
        confidence_update(self.confidence, p)
        label = threshold_and_vote(self.confidence)
        if self._last is not None and self._last.label == label:
            consecutive = self._last.consecutive_count + 1
        else:
            consecutive = 1
        decoded = DecodedGesture(label=label, tick_index=self._tick,
                                 consecutive_count=consecutive)
        self._tick += 1
        self._last = decoded
        new_mode = mode_switch_update(self.mode_state, label, self.tick_rate_hz)
        return DecoderTick(decoded=decoded, p_prime=self.p_prime_copy(),
                           mode=self.mode_state.mode, mode_changed=new_mode is not None,
                           injected=injected)

    def p_prime_copy(self) -> np.ndarray:
        return self.confidence.p_prime.copy()

    def decode_step(self, window, start_sample: int | None = None) -> DecoderTick:
        """One full tick: pipeline -> classifier -> confidence -> vote.

        The window is raw stream samples; only the part not yet seen is pushed
        so the filter stays continuous across overlapping windows. Errors
        (non-finite input, wrong width) propagate with the decoder state
        unchanged.
        """
        samples = window.samples if isinstance(window, SampleWindow) else np.asarray(window, dtype=float)
        if samples.ndim != 2:
            raise ValueError("window must be (n_samples, channels)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("non-finite sample in window")
        self.push_samples(samples, start_sample)
        feats = self.online.latest_features()
        if feats is None:
            raise ValueError("stream has fewer samples than one analysis window")
        p = clf.softmax(self.bundle.model.forward(feats))
        return self.step_probabilities(p)

    def inject_gesture(self, gesture: Gesture) -> DecoderTick:
        """Advance one tick from a one-hot probability vector, bypassing the
        classifier but not the confidence/vote/mode machinery."""
        p = np.zeros(NUM_GESTURES)
        p[int(gesture)] = 1.0
        return self.step_probabilities(p, injected=True)
