"""Gesture-to-joint mapping, speed ramping, PID joint tracking, and the
kinematic simulation of an 8-DoF Stretch-like mobile manipulator.

Arm/base joints take velocity setpoints; wrist joints take change-in-position
commands tracked by PID; the gripper moves a constant step per command tick.
Commanding a different joint stops the previous one. Command magnitudes ramp
as a * x^1.5 with the consecutive-prediction count x, capped at x = k.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .decoder import ControlMode, DecodedGesture
from .gestures import Gesture

RAMP_CAP_DEFAULT = 50
SIM_TICK_HZ = 6.0
SIM_SUBSTEPS = 10


class Joint(Enum):
    BASE_TRANSLATE = "base_translate"
    BASE_ROTATE = "base_rotate"
    LIFT = "lift"
    ARM_EXTEND = "arm_extend"
    WRIST_YAW = "wrist_yaw"
    WRIST_PITCH = "wrist_pitch"
    WRIST_ROLL = "wrist_roll"
    GRIPPER = "gripper"


class CommandKind(Enum):
    VELOCITY = "vel"
    POSITION_DELTA = "dpos"


VELOCITY_JOINTS = frozenset({Joint.BASE_TRANSLATE, Joint.BASE_ROTATE,
                             Joint.LIFT, Joint.ARM_EXTEND})


def kind_for_joint(joint: Joint) -> CommandKind:
    return CommandKind.VELOCITY if joint in VELOCITY_JOINTS else CommandKind.POSITION_DELTA


@dataclass(frozen=True)
class JointCommand:
    joint: Joint
    kind: CommandKind
    magnitude: float
    sign: int
    mode: ControlMode

    def __post_init__(self):
        if self.kind != kind_for_joint(self.joint):
            raise ValueError(f"{self.joint.value} takes {kind_for_joint(self.joint).value} commands")
        if not math.isfinite(self.magnitude) or self.magnitude < 0:
            raise ValueError("magnitude must be finite and nonnegative")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if self.magnitude == 0.0:
            object.__setattr__(self, "sign", 1)  # canonical stop

    @property
    def value(self) -> float:
        return self.sign * self.magnitude

    @classmethod
    def stop(cls, joint: Joint, mode: ControlMode) -> "JointCommand":
        return cls(joint=joint, kind=kind_for_joint(joint), magnitude=0.0, sign=1, mode=mode)

    @classmethod
    def from_value(cls, joint: Joint, value: float, mode: ControlMode) -> "JointCommand":
        sign = -1 if value < 0 else 1
        return cls(joint=joint, kind=kind_for_joint(joint), magnitude=abs(value),
                   sign=sign, mode=mode)


# (joint, sign) per gesture for each control mode; Rest and Pinch move nothing.
WRIST_GRIPPER_MAP = {
    Gesture.FINGERS_CLOSED: (Joint.GRIPPER, -1),
    Gesture.FINGERS_OPEN: (Joint.GRIPPER, 1),
    Gesture.WRIST_LEFT: (Joint.WRIST_YAW, 1),
    Gesture.WRIST_RIGHT: (Joint.WRIST_YAW, -1),
    Gesture.WRIST_UP: (Joint.WRIST_PITCH, 1),
    Gesture.WRIST_DOWN: (Joint.WRIST_PITCH, -1),
    Gesture.PALM_DOWN: (Joint.WRIST_ROLL, 1),
    Gesture.PALM_UP: (Joint.WRIST_ROLL, -1),
}
ARM_DRIVE_MAP = {
    Gesture.WRIST_UP: (Joint.LIFT, 1),
    Gesture.WRIST_DOWN: (Joint.LIFT, -1),
    Gesture.FINGERS_CLOSED: (Joint.ARM_EXTEND, -1),  # retract
    Gesture.FINGERS_OPEN: (Joint.ARM_EXTEND, 1),     # extend
    Gesture.WRIST_RIGHT: (Joint.BASE_TRANSLATE, 1),  # forward
    Gesture.WRIST_LEFT: (Joint.BASE_TRANSLATE, -1),  # backward
    Gesture.PALM_DOWN: (Joint.BASE_ROTATE, 1),       # counter clockwise
    Gesture.PALM_UP: (Joint.BASE_ROTATE, -1),        # clockwise
}


def map_gesture(mode: ControlMode, gesture: Gesture) -> tuple[Joint, int] | None:
    table = WRIST_GRIPPER_MAP if mode is ControlMode.WRIST_GRIPPER else ARM_DRIVE_MAP
    return table.get(gesture)


def ramp_magnitude(a: float, x: int, k: int = RAMP_CAP_DEFAULT) -> float:
    """a * x^1.5 up to x = k, constant a * k^1.5 beyond."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if k < 1:
        raise ValueError("k must be >= 1")
    return a * min(x, k) ** 1.5


class PidController:
    """Discrete PID: rectangular integral, backward-difference derivative,
    integral accumulator clamped to stay finite."""

    def __init__(self, kp: float, ki: float = 0.0, kd: float = 0.0,
                 integral_limit: float = 10.0):
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.integral_limit = integral_limit
        self.integral = 0.0
        self.previous_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.previous_error = None

    def update(self, error: float, dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.integral = float(np.clip(self.integral + error * dt,
                                      -self.integral_limit, self.integral_limit))
        derivative = 0.0 if self.previous_error is None else (error - self.previous_error) / dt
        self.previous_error = error
        return self.kp * error + self.ki * self.integral + self.kd * derivative


def pid_update(ctrl: PidController, error: float, dt: float) -> float:
    return ctrl.update(error, dt)


@dataclass
class JointConfig:
    ramp_a: float                 # per-joint scalar in Eq-of-motion units
    limits: tuple[float, float] | None = None
    kp: float = 6.0
    ki: float = 0.5
    kd: float = 0.0


def _default_joints() -> dict[Joint, JointConfig]:
    cap = RAMP_CAP_DEFAULT ** 1.5  # ~353.55; a = max command / cap
    return {
        Joint.BASE_TRANSLATE: JointConfig(ramp_a=0.20 / cap),
        Joint.BASE_ROTATE: JointConfig(ramp_a=0.60 / cap),
        Joint.LIFT: JointConfig(ramp_a=0.10 / cap, limits=(0.0, 1.10)),
        Joint.ARM_EXTEND: JointConfig(ramp_a=0.08 / cap, limits=(0.0, 0.52)),
        Joint.WRIST_YAW: JointConfig(ramp_a=0.06 / cap, limits=(-1.75, 4.00), kp=10.0, ki=0.0),
        Joint.WRIST_PITCH: JointConfig(ramp_a=0.06 / cap, limits=(-1.57, 0.56), kp=10.0, ki=0.0),
        Joint.WRIST_ROLL: JointConfig(ramp_a=0.06 / cap, limits=(-3.14, 3.14), kp=10.0, ki=0.0),
        Joint.GRIPPER: JointConfig(ramp_a=1.0, limits=(0.0, 1.0)),
    }


@dataclass
class RobotConfig:
    """Joint limits, ramp scalars, PID gains, and tick geometry. Shipped
    defaults approximate a Stretch-RE2-class mobile manipulator."""
    joints: dict[Joint, JointConfig] = field(default_factory=_default_joints)
    gripper_step: float = 0.04    # aperture change per command tick, no ramp
    ramp_k: int = RAMP_CAP_DEFAULT
    tick_hz: float = SIM_TICK_HZ
    substeps: int = SIM_SUBSTEPS

    def to_dict(self) -> dict:
        return {
            "gripper_step": self.gripper_step,
            "ramp_k": self.ramp_k,
            "tick_hz": self.tick_hz,
            "substeps": self.substeps,
            "joints": {
                j.value: {"ramp_a": c.ramp_a, "limits": c.limits,
                          "kp": c.kp, "ki": c.ki, "kd": c.kd}
                for j, c in self.joints.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RobotConfig":
        cfg = cls()
        cfg.gripper_step = float(data.get("gripper_step", cfg.gripper_step))
        cfg.ramp_k = int(data.get("ramp_k", cfg.ramp_k))
        cfg.tick_hz = float(data.get("tick_hz", cfg.tick_hz))
        cfg.substeps = int(data.get("substeps", cfg.substeps))
        for name, jc in data.get("joints", {}).items():
            joint = Joint(name)
            base = cfg.joints[joint]
            limits = jc.get("limits", base.limits)
            cfg.joints[joint] = JointConfig(
                ramp_a=float(jc.get("ramp_a", base.ramp_a)),
                limits=None if limits is None else (float(limits[0]), float(limits[1])),
                kp=float(jc.get("kp", base.kp)),
                ki=float(jc.get("ki", base.ki)),
                kd=float(jc.get("kd", base.kd)))
        return cfg

    @classmethod
    def load(cls, path) -> "RobotConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class RobotState:
    base_x: float = 0.0
    base_y: float = 0.0
    heading: float = 0.0
    lift: float = 0.4
    arm_extension: float = 0.0
    wrist_yaw: float = 0.0
    wrist_pitch: float = 0.0
    wrist_roll: float = 0.0
    gripper: float = 0.5
    velocities: dict = field(default_factory=dict)
    mode: ControlMode = ControlMode.WRIST_GRIPPER
    limit_hits: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "base": {"x": self.base_x, "y": self.base_y, "heading": self.heading},
            "lift": self.lift,
            "arm_extension": self.arm_extension,
            "wrist": {"yaw": self.wrist_yaw, "pitch": self.wrist_pitch, "roll": self.wrist_roll},
            "gripper": self.gripper,
            "velocities": {j.value: v for j, v in self.velocities.items()},
            "mode": self.mode.value,
            "limit_hits": sorted(j.value for j in self.limit_hits),
        }


def command_for(decoded: DecodedGesture, mode: ControlMode,
                config: RobotConfig) -> JointCommand | None:
    """Ramped JointCommand for a decoded gesture, or None for Rest/Pinch."""
    mapping = map_gesture(mode, decoded.label)
    if mapping is None:
        return None
    joint, sign = mapping
    if joint is Joint.GRIPPER:
        magnitude = config.gripper_step
    else:
        magnitude = ramp_magnitude(config.joints[joint].ramp_a,
                                   decoded.consecutive_count, config.ramp_k)
    return JointCommand(joint=joint, kind=kind_for_joint(joint),
                        magnitude=magnitude, sign=sign, mode=mode)


class RobotSimulator:
    """Kinematic joint models driven by PID, integrated with semi-implicit
    Euler at the command tick rate with substeps. Single-threaded owner of
    its state; snapshots are plain dicts safe to hand to other threads."""

    _POSITION_ATTRS = {Joint.LIFT: "lift", Joint.ARM_EXTEND: "arm_extension",
                       Joint.WRIST_YAW: "wrist_yaw", Joint.WRIST_PITCH: "wrist_pitch",
                       Joint.WRIST_ROLL: "wrist_roll"}

    def __init__(self, config: RobotConfig | None = None):
        self.config = config or RobotConfig()
        self.state = RobotState()
        self.state.velocities = {j: 0.0 for j in Joint if j is not Joint.GRIPPER}
        self.velocity_setpoints = {j: 0.0 for j in VELOCITY_JOINTS}
        self.position_targets = {j: getattr(self.state, self._POSITION_ATTRS[j])
                                 for j in self._POSITION_ATTRS if j not in VELOCITY_JOINTS}
        self.pids = {j: PidController(c.kp, c.ki, c.kd) for j, c in self.config.joints.items()}
        self.last_joint: Joint | None = None
        self.tick_count = 0
        self._command_limit_hits: set = set()  # flags raised while applying commands

    # -- command side -----------------------------------------------------

    def stop_joint(self, joint: Joint) -> None:
        if joint in self.velocity_setpoints:
            self.velocity_setpoints[joint] = 0.0
        elif joint in self.position_targets:
            self.position_targets[joint] = getattr(self.state, self._POSITION_ATTRS[joint])
        self.pids[joint].reset()

    def stop_all(self) -> None:
        for j in list(self.velocity_setpoints) + list(self.position_targets):
            self.stop_joint(j)

    def apply_command(self, cmd: JointCommand | None) -> None:
        """Latest-wins per tick. Commanding a joint different from the last
        commanded one zeroes the previous joint's setpoint first."""
        if cmd is None:
            if self.last_joint is not None:
                self.stop_joint(self.last_joint)
                self.last_joint = None
            return
        if self.last_joint is not None and self.last_joint != cmd.joint:
            self.stop_joint(self.last_joint)
        self.state.mode = cmd.mode
        if cmd.joint in self.velocity_setpoints:
            self.velocity_setpoints[cmd.joint] = cmd.value
        elif cmd.joint is Joint.GRIPPER:
            self._move_gripper(cmd.value)
        else:
            self.position_targets[cmd.joint] += cmd.value
            lim = self.config.joints[cmd.joint].limits
            if lim is not None:
                self.position_targets[cmd.joint] = float(np.clip(
                    self.position_targets[cmd.joint], lim[0], lim[1]))
        self.last_joint = cmd.joint

    def _move_gripper(self, delta: float) -> None:
        lo, hi = self.config.joints[Joint.GRIPPER].limits
        raw = self.state.gripper + delta
        self.state.gripper = float(np.clip(raw, lo, hi))
        if raw != self.state.gripper:
            self._command_limit_hits.add(Joint.GRIPPER)

    # -- simulation side ---------------------------------------------------

    def step(self, dt: float | None = None) -> RobotState:
        """Advance one command tick (default 1/tick_hz) of simulated time."""
        if dt is None:
            dt = 1.0 / self.config.tick_hz
        if dt <= 0:
            raise ValueError("dt must be positive")
        h = dt / self.config.substeps
        self.state.limit_hits = self._command_limit_hits
        self._command_limit_hits = set()
        for _ in range(self.config.substeps):
            self._substep(h)
        self.tick_count += 1
        return self.state

    def _substep(self, h: float) -> None:
        st = self.state
        # velocity-commanded joints: PID drives acceleration toward setpoint
        for joint in VELOCITY_JOINTS:
            v = st.velocities[joint]
            u = self.pids[joint].update(self.velocity_setpoints[joint] - v, h)
            st.velocities[joint] = v + u * h
        # semi-implicit Euler: integrate positions with the updated velocities
        st.heading += st.velocities[Joint.BASE_ROTATE] * h
        st.base_x += st.velocities[Joint.BASE_TRANSLATE] * math.cos(st.heading) * h
        st.base_y += st.velocities[Joint.BASE_TRANSLATE] * math.sin(st.heading) * h
        for joint, attr in ((Joint.LIFT, "lift"), (Joint.ARM_EXTEND, "arm_extension")):
            q = getattr(st, attr) + st.velocities[joint] * h
            q = self._clamp(joint, q)
            setattr(st, attr, q)
        # wrist joints: PID tracks the accumulated position target
        for joint in (Joint.WRIST_YAW, Joint.WRIST_PITCH, Joint.WRIST_ROLL):
            attr = self._POSITION_ATTRS[joint]
            q = getattr(st, attr)
            u = self.pids[joint].update(self.position_targets[joint] - q, h)
            st.velocities[joint] = u
            setattr(st, attr, self._clamp(joint, q + u * h))

    def _clamp(self, joint: Joint, q: float) -> float:
        lim = self.config.joints[joint].limits
        if lim is None:
            return q
        clamped = float(np.clip(q, lim[0], lim[1]))
        if clamped != q:
            self.state.limit_hits.add(joint)
            self.state.velocities[joint] = 0.0
        return clamped

    def step_gesture(self, decoded: DecodedGesture, mode: ControlMode,
                     dt: float | None = None) -> RobotState:
        """Map -> ramp -> command -> integrate, in one call."""
        self.apply_command(command_for(decoded, mode, self.config))
        return self.step(dt)

    def snapshot(self) -> dict:
        snap = self.state.to_dict()
        snap["tick"] = self.tick_count
        return snap
