"""Real-time high-density EMG gesture decoding and teleoperation toolkit."""

__version__ = "0.1.0"

from .gestures import ALL_GESTURES, GESTURE_NAMES, NUM_GESTURES, Gesture  # noqa: F401
