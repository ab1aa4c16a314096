"""The ten gesture classes and their id <-> name table."""
from __future__ import annotations

from enum import IntEnum


class Gesture(IntEnum):
    REST = 0
    FINGERS_CLOSED = 1
    FINGERS_OPEN = 2
    WRIST_LEFT = 3
    WRIST_RIGHT = 4
    WRIST_UP = 5
    WRIST_DOWN = 6
    PALM_DOWN = 7
    PALM_UP = 8
    PINCH_FINGERS = 9

    @property
    def display_name(self) -> str:
        return GESTURE_NAMES[self.value]

    @classmethod
    def from_name(cls, name: str) -> "Gesture":
        try:
            return _NAME_TO_GESTURE[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown gesture name: {name!r}") from None


GESTURE_NAMES = (
    "Rest",
    "Fingers Closed",
    "Fingers Open",
    "Wrist Left",
    "Wrist Right",
    "Wrist Up",
    "Wrist Down",
    "Palm Down",
    "Palm Up",
    "Pinch Fingers",
)

NUM_GESTURES = len(GESTURE_NAMES)

_NAME_TO_GESTURE = {}
for _g in Gesture:
    _NAME_TO_GESTURE[GESTURE_NAMES[_g.value].lower()] = _g
    _NAME_TO_GESTURE[_g.name.lower()] = _g
    _NAME_TO_GESTURE[_g.name.replace("_", " ").lower()] = _g

ALL_GESTURES = tuple(Gesture)
