"""PWM breathing schedules and the lagged DC-motor model.

A schedule maps time to a commanded duty fraction. The motor relaxes toward
that duty with a faster time constant when speeding up than when spinning down,
and the effective fraction maps to a port jet speed through an affine curve with
a stall threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Mode(str, Enum):
    OFF = "Off"
    CONTINUOUS = "Continuous"
    PULSED = "Pulsed"


@dataclass(frozen=True)
class Schedule:
    mode: Mode = Mode.OFF
    duty: float = 0.0
    period: float = 20.0
    on_fraction: float = 0.5
    phase: float = 0.0

    @classmethod
    def off(cls):
        return cls(Mode.OFF)

    @classmethod
    def continuous(cls, duty=1.0):
        return cls(Mode.CONTINUOUS, duty=duty)

    @classmethod
    def pulsed(cls, period, on_fraction=0.5, duty=1.0, phase=0.0):
        return cls(Mode.PULSED, duty=duty, period=period, on_fraction=on_fraction, phase=phase)

    def validate(self):
        if not 0 <= self.duty <= 1:
            raise ValueError("duty must lie in [0, 1]")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if not 0 < self.on_fraction < 1:
            raise ValueError("on_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class MotorSpec:
    v_max: float = 2.0
    stall_duty: float = 0.2
    tau_on: float = 0.5
    tau_off: float = 2.0

    def validate(self):
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if not 0 <= self.stall_duty < 1:
            raise ValueError("stall_duty must lie in [0, 1)")
        if self.tau_on <= 0 or self.tau_off <= 0:
            raise ValueError("motor time constants must be positive")


@dataclass(frozen=True)
class MotorState:
    commanded_duty: float = 0.0
    effective_speed_fraction: float = 0.0


def command_at(s: Schedule, t: float) -> float:
    mode = Mode(s.mode)
    if mode is Mode.OFF:
        return 0.0
    if mode is Mode.CONTINUOUS:
        return s.duty
    return s.duty if (t - s.phase) % s.period < s.on_fraction * s.period else 0.0


def motor_response(state: MotorState, duty: float, spec: MotorSpec, dt: float) -> MotorState:
    """Exact exponential relaxation of the effective speed toward ``duty``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = state.effective_speed_fraction
    lag = spec.tau_on if duty > f else spec.tau_off
    f = duty + (f - duty) * math.exp(-dt / lag)
    return MotorState(duty, min(max(f, 0.0), 1.0))


def port_speed(state: MotorState, spec: MotorSpec) -> float:
    f = state.effective_speed_fraction
    if f <= spec.stall_duty:
        return 0.0
    return spec.v_max * (f - spec.stall_duty) / (1.0 - spec.stall_duty)
