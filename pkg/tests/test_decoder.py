import itertools

import numpy as np
import pytest

from emgctl.decoder import (ConfidenceState, ControlMode, GestureDecoder,
                            ModeSwitchState, confidence_update,
                            mode_switch_update, threshold_and_vote)
from emgctl.gestures import NUM_GESTURES, Gesture

REST = Gesture.REST
FC = Gesture.FINGERS_CLOSED
PINCH = Gesture.PINCH_FINGERS


def one_hot(g):
    p = np.zeros(NUM_GESTURES)
    p[int(g)] = 1.0
    return p


# ---------------------------------------------------------------------------
# Independent oracle: a from-first-principles simulation of the three decoder
# mechanisms (exponential filter, threshold append, majority count).
# ---------------------------------------------------------------------------

def oracle_majority(buffer, m=3):
    best, count = None, 0
    for g in set(buffer):
        c = sum(1 for b in buffer if b == g)
        if c > count:
            best, count = g, c
    return best if count * 2 > m else REST


def oracle_decode(p_stream, p0=None, buffer0=None, alpha=0.5, r=0.5, m=3):
    """Replays the full mechanism; returns the list of output labels."""
    p_prime = np.full(NUM_GESTURES, 0.1) if p0 is None else np.asarray(p0, float).copy()
    buffer = list(buffer0) if buffer0 is not None else [REST] * m
    outputs = []
    for p in p_stream:
        p_prime = (1 - alpha) * p_prime + alpha * np.asarray(p, float)
        best = int(np.argmax(p_prime))
        candidate = Gesture(best) if p_prime[best] > r else REST
        buffer = (buffer + [candidate])[-m:]
        outputs.append(oracle_majority(buffer, m))
    return outputs


class TestConfidenceUpdate:
    def test_initial_state_is_uniform(self):
        state = ConfidenceState()
        assert np.allclose(state.p_prime, 0.1)

    def test_one_hot_from_init(self):
        state = ConfidenceState()
        p = confidence_update(state, one_hot(FC))
        assert p[FC] == pytest.approx(0.55)  # 0.5*0.1 + 0.5*1

    def test_geometric_convergence(self):
        state = ConfidenceState()
        for t in range(1, 20):
            confidence_update(state, one_hot(FC))
            expected = 1.0 - 0.9 * 0.5 ** t
            assert state.p_prime[FC] == pytest.approx(expected, abs=1e-12)

    def test_rejects_non_probability(self):
        state = ConfidenceState()
        before = state.p_prime.copy()
        for bad in (np.ones(NUM_GESTURES), -one_hot(FC), np.full(NUM_GESTURES, np.nan),
                    np.zeros(5)):
            with pytest.raises(ValueError):
                confidence_update(state, bad)
            assert np.array_equal(state.p_prime, before)

    def test_stays_probability_vector(self):
        rng = np.random.default_rng(0)
        state = ConfidenceState()
        for _ in range(500):
            p = rng.dirichlet(np.full(NUM_GESTURES, 0.3))
            confidence_update(state, p)
            assert abs(state.p_prime.sum() - 1.0) < 1e-9
            assert np.all(state.p_prime >= 0)


class TestThresholdAndVote:
    def test_majority_emits_gesture(self):
        state = ConfidenceState()
        state.buffer.extend([FC, FC])  # buffer now [REST, FC, FC]
        state.p_prime = np.where(np.arange(10) == int(FC), 0.55, 0.05)
        assert threshold_and_vote(state) == FC

    def test_below_threshold_appends_rest(self):
        state = ConfidenceState()
        state.p_prime = np.where(np.arange(10) == int(FC), 0.45, 0.55 / 9)
        threshold_and_vote(state)
        assert state.buffer[-1] == REST

    def test_all_distinct_buffer_gives_rest(self):
        state = ConfidenceState()
        state.buffer.clear()
        state.buffer.extend([Gesture.WRIST_LEFT, Gesture.WRIST_RIGHT])
        state.p_prime = np.where(np.arange(10) == int(FC), 0.9, 0.1 / 9)
        assert threshold_and_vote(state) == REST  # buffer [WL, WR, FC]

    def test_exhaustive_against_majority_oracle(self):
        """All 10^3 buffer states x a threshold/no-threshold append, compared
        with the brute-force majority oracle."""
        gestures = list(Gesture)
        for buffer in itertools.product(gestures, repeat=3):
            for candidate in (FC, REST):
                state = ConfidenceState()
                state.buffer.clear()
                state.buffer.extend(buffer[1:])
                if candidate == FC:
                    state.p_prime = np.where(np.arange(10) == int(FC), 0.8, 0.2 / 9)
                else:
                    state.p_prime = np.full(NUM_GESTURES, 0.1)
                new_buffer = list(buffer[1:]) + [candidate]
                expected = oracle_majority(new_buffer)
                assert threshold_and_vote(state) == expected
                assert list(state.buffer) == new_buffer

    def test_at_most_one_majority_winner(self):
        # sanity: no 3-buffer can have two labels both above m/2
        for buffer in itertools.product(list(Gesture), repeat=3):
            above = [g for g in set(buffer)
                     if sum(1 for b in buffer if b == g) * 2 > 3]
            assert len(above) <= 1


class TestDecodeDynamics:
    def probability_decoder(self):
        class Dummy:  # probability-level decoding needs no bundle
            pass
        d = GestureDecoder.__new__(GestureDecoder)
        d.confidence = ConfidenceState()
        d.mode_state = ModeSwitchState()
        d.tick_rate_hz = 6.0
        d._tick = 0
        d._last = None
        return d

    def run_stream(self, decoder, probs):
        return [decoder.step_probabilities(p).decoded.label for p in probs]

    def test_sustained_gesture_first_output_matches_oracle(self):
        # short rest then sustained gesture: the oracle pins the exact tick
        stream = [one_hot(REST)] * 3 + [one_hot(FC)] * 6
        expected = oracle_decode(stream)
        got = self.run_stream(self.probability_decoder(), stream)
        assert got == expected
        first = next(i for i, g in enumerate(expected[3:]) if g == FC) + 1
        assert first == 2  # p'_FC > 0 after 3 rest ticks, so tick 2

    def test_long_rest_converges_to_three_tick_latency(self):
        # after enough rest p'_FC underflows to 0 and the first append slips
        # one tick: emission on the 3rd gesture tick
        stream = [one_hot(REST)] * 200 + [one_hot(FC)] * 6
        expected = oracle_decode(stream)
        got = self.run_stream(self.probability_decoder(), stream)
        assert got == expected
        first = next(i for i, g in enumerate(expected[200:]) if g == FC) + 1
        assert first == 3

    def test_all_rest_stream(self):
        decoder = self.probability_decoder()
        for i in range(10):
            tick = decoder.step_probabilities(one_hot(REST))
            assert tick.decoded.label == REST
            assert tick.decoded.consecutive_count == i + 1

    def test_single_tick_spike_never_surfaces(self):
        stream = [one_hot(REST)] * 10 + [one_hot(FC)] + [one_hot(REST)] * 10
        got = self.run_stream(self.probability_decoder(), stream)
        assert FC not in got
        assert got == oracle_decode(stream)

    def test_decoder_is_deterministic(self):
        rng = np.random.default_rng(1)
        stream = [rng.dirichlet(np.ones(NUM_GESTURES)) for _ in range(100)]
        a = self.run_stream(self.probability_decoder(), stream)
        b = self.run_stream(self.probability_decoder(), stream)
        assert a == b

    def test_consecutive_count_resets_on_change(self):
        decoder = self.probability_decoder()
        outputs = []
        for p in [one_hot(FC)] * 6 + [one_hot(Gesture.WRIST_UP)] * 6:
            outputs.append(decoder.step_probabilities(p).decoded)
        for prev, cur in zip(outputs, outputs[1:]):
            if cur.label == prev.label:
                assert cur.consecutive_count == prev.consecutive_count + 1
            else:
                assert cur.consecutive_count == 1

    def test_latency_bound_over_confidence_grid_and_buffers(self):
        """Newly sustained gesture surfaces between tick 2 and 4 inclusive,
        for a grid of initial confidence states and all prior buffers not
        already containing the gesture."""
        target = FC
        rng = np.random.default_rng(2)
        grid = [np.full(NUM_GESTURES, 0.1)]
        for g in Gesture:
            grid.append(one_hot(g))
        while len(grid) < 1000:
            grid.append(rng.dirichlet(np.full(NUM_GESTURES, 0.4)))
        others = [g for g in Gesture if g != target]

        # (a) the full p' grid with an all-rest prior buffer
        for p0 in grid:
            out = oracle_decode([one_hot(target)] * 5, p0=p0, buffer0=[REST] * 3)
            first = next(i for i, g in enumerate(out) if g == target) + 1
            assert 2 <= first <= 4

        # (b) every prior buffer without the target, uniform p'
        for buffer in itertools.product(others, repeat=3):
            out = oracle_decode([one_hot(target)] * 5, buffer0=list(buffer))
            first = next(i for i, g in enumerate(out) if g == target) + 1
            assert 2 <= first <= 4

        # (c) sampled cross product of both
        for _ in range(300):
            p0 = grid[rng.integers(len(grid))]
            buffer = [others[i] for i in rng.integers(len(others), size=3)]
            out = oracle_decode([one_hot(target)] * 5, p0=p0, buffer0=buffer)
            first = next(i for i, g in enumerate(out) if g == target) + 1
            assert 2 <= first <= 4

        # and the decoder agrees with the oracle on sampled cases
        for _ in range(50):
            p0 = grid[rng.integers(len(grid))]
            stream = [np.asarray(p0)] + [one_hot(target)] * 5
            d = self.probability_decoder()
            got = self.run_stream(d, stream)
            assert got == oracle_decode(stream)


class TestModeSwitch:
    def test_three_second_hold_toggles_once(self):
        state = ModeSwitchState()
        events = [mode_switch_update(state, PINCH, 6.0) for _ in range(18)]
        toggles = [e for e in events if e is not None]
        assert len(toggles) == 1
        assert events[17] == ControlMode.ARM_DRIVE  # exactly at tick 18

    def test_seventeen_ticks_then_rest_does_not_toggle(self):
        state = ModeSwitchState()
        for _ in range(17):
            assert mode_switch_update(state, PINCH, 6.0) is None
        assert mode_switch_update(state, REST, 6.0) is None
        assert state.mode == ControlMode.WRIST_GRIPPER
        assert state.pinch_hold_ticks == 0

    def test_cooldown_blocks_second_hold(self):
        state = ModeSwitchState()
        events = [mode_switch_update(state, PINCH, 6.0) for _ in range(36)]
        assert sum(e is not None for e in events) == 1

    def test_no_double_toggle_within_hold_plus_cooldown(self):
        rng = np.random.default_rng(3)
        state = ModeSwitchState()
        hold = 18
        cooldown = 12
        last_toggle = None
        for tick in range(5000):
            gesture = PINCH if rng.random() < 0.7 else REST
            if mode_switch_update(state, gesture, 6.0) is not None:
                if last_toggle is not None:
                    assert tick - last_toggle >= hold + cooldown
                last_toggle = tick

    def test_interrupted_hold_restarts(self):
        state = ModeSwitchState()
        for _ in range(10):
            mode_switch_update(state, PINCH, 6.0)
        mode_switch_update(state, REST, 6.0)
        events = [mode_switch_update(state, PINCH, 6.0) for _ in range(18)]
        assert events[17] is not None  # needed the full 18 again

    def test_bad_tick_rate(self):
        with pytest.raises(ValueError):
            mode_switch_update(ModeSwitchState(), PINCH, 0.0)


class TestFullDecoder:
    def test_decode_step_from_stream(self, small_bundle, small_session):
        schedule, recording = small_session
        decoder = GestureDecoder(small_bundle)
        n = small_bundle.window_samples
        # find a cue and decode ticks across its hold
        entry = next(e for e in schedule.entries if e.gesture == FC)
        hold_start = recording.time_to_index(entry.hold_start)
        hold_end = recording.time_to_index(entry.hold_end)
        step = int(recording.sample_rate_hz / 6)
        labels = []
        for end in range(hold_start + n, hold_end, step):
            window = recording.samples[:, end - n:end].astype(float).T
            tick = decoder.decode_step(window, start_sample=end - n)
            labels.append(tick.decoded.label)
        assert labels[-1] == FC  # converges to the held gesture

    def test_decode_step_error_leaves_state_unchanged(self, small_bundle):
        decoder = GestureDecoder(small_bundle)
        n = small_bundle.window_samples
        channels = small_bundle.pipeline.mask.channel_count
        bad = np.full((n, channels), np.nan)
        p_before = decoder.p_prime_copy()
        tick_before = decoder.tick_index
        with pytest.raises(ValueError):
            decoder.decode_step(bad)
        assert decoder.tick_index == tick_before
        assert np.array_equal(decoder.p_prime_copy(), p_before)

    def test_short_stream_is_an_error(self, small_bundle):
        decoder = GestureDecoder(small_bundle)
        channels = small_bundle.pipeline.mask.channel_count
        with pytest.raises(ValueError, match="fewer samples"):
            decoder.decode_step(np.zeros((10, channels)))

    def test_injection_bypasses_classifier_only(self, small_bundle):
        decoder = GestureDecoder(small_bundle)
        ticks = [decoder.inject_gesture(Gesture.WRIST_UP) for _ in range(3)]
        assert all(t.injected for t in ticks)
        assert ticks[-1].decoded.label == Gesture.WRIST_UP  # voting still applies
        assert ticks[0].decoded.label == REST
