"""Coupled simulation runs, the experiment presets and emission calibration.

A run couples the pieces in a single time loop::

    duty = command_at(schedule, t)            (forced to 0 after motor_off_time)
    motor lag -> port speeds -> jet BCs -> flow step -> scalar sub-steps -> sensor

The scalar is sub-stepped inside each flow step so that the explicit upwind
update stays monotone. With ``flow.steady_tol > 0`` the flow step is skipped
while the jets hold still and the field has stopped changing; it resumes as
soon as a port speed moves by more than ``flow.steady_bc_tol``.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import config
from .breathing import MotorSpec, MotorState, Schedule, command_at, motor_response, port_speed
from .errors import DegenerateRun, DognoseError, SimulationError
from .flow import (FlowParams, FlowState, apply_jet_bcs, cfl_dt, step_flow, topology,
                   write_snapshot)
from .geometry import (DomainSpec, GridMask, Orientation, SamplerGeometry, ScenePose,
                       SourceSpec, build_scene)
from .metrics import SensorTrace
from .transport import (MassLedger, OutgassingSpec, ScalarStepper, SensorSpec,
                        TransportParams, scalar_dt_limit, total_mass)

log = logging.getLogger(__name__)

# emission rate (ug/s) that brings dognose_duty100 to a 325 ug/m^3 peak; most of
# the plume leaves through the open top, hence the size
DEFAULT_EMISSION_RATE = 4258477488051.8506
SCALAR_SAFETY = 0.95
CFL_BACKOFF = 0.98
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class ScenarioSpec:
    geometry: SamplerGeometry = field(default_factory=SamplerGeometry)
    pose: ScenePose = field(default_factory=ScenePose)
    domain: DomainSpec = field(default_factory=DomainSpec)
    inhale_schedule: Schedule = field(default_factory=Schedule)
    exhale_schedule: Schedule = field(default_factory=Schedule)
    inhale_motor: MotorSpec = field(default_factory=MotorSpec)
    exhale_motor: MotorSpec = field(default_factory=lambda: MotorSpec(v_max=1.0))
    source: SourceSpec = field(default_factory=lambda: SourceSpec(emission_rate=DEFAULT_EMISSION_RATE))
    outgassing: OutgassingSpec = field(default_factory=OutgassingSpec)
    transport: TransportParams = field(default_factory=TransportParams)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    flow: FlowParams = field(default_factory=FlowParams)
    duration: float = 300.0
    motor_off_time: float | None = 240.0
    snapshot_cadence: float | None = None

    def validate(self):
        for part in (self.geometry, self.pose, self.domain, self.inhale_schedule,
                     self.exhale_schedule, self.inhale_motor, self.exhale_motor, self.source,
                     self.outgassing, self.transport, self.sensor, self.flow):
            part.validate()
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.motor_off_time is not None and not 0 <= self.motor_off_time < self.duration:
            raise ValueError("motor_off_time must lie in [0, duration)")
        if self.snapshot_cadence is not None and self.snapshot_cadence <= 0:
            raise ValueError("snapshot_cadence must be positive")

    def replace(self, path: str, value) -> "ScenarioSpec":
        return config.replace_path(self, path, value)

    def to_dict(self) -> dict:
        return config.to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "ScenarioSpec":
        return config.from_dict(cls, data)


@dataclass
class RunResult:
    trace: SensorTrace
    ledger: MassLedger
    preset: str | None
    config: dict
    stats: dict
    concentration: np.ndarray | None = None
    flow: FlowState | None = None
    mask: GridMask | None = None


class _Motors:
    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.inhale = MotorState()
        self.exhale = MotorState()

    def duties(self, t):
        s = self.spec
        if s.motor_off_time is not None and t >= s.motor_off_time - _TIME_EPS:
            return 0.0, 0.0
        return command_at(s.inhale_schedule, t), command_at(s.exhale_schedule, t)

    def advanced(self, t, dt):
        di, de = self.duties(t)
        return (motor_response(self.inhale, di, self.spec.inhale_motor, dt),
                motor_response(self.exhale, de, self.spec.exhale_motor, dt))

    def speeds(self, inhale, exhale):
        return (port_speed(inhale, self.spec.inhale_motor),
                port_speed(exhale, self.spec.exhale_motor))


def _free_change(old: FlowState, new: FlowState, topo) -> float:
    du = np.abs(new.u - old.u)[topo.free_u]
    dv = np.abs(new.v - old.v)[topo.free_v]
    return max(float(du.max()) if du.size else 0.0, float(dv.max()) if dv.size else 0.0)


def run_scenario(spec: ScenarioSpec, preset: str | None = None, snapshot_dir=None,
                 keep_fields: bool = False) -> RunResult:
    """Run one coupled simulation and return its sensor trace and mass ledger."""
    wall0 = time.perf_counter()
    spec.validate()
    try:
        mask = build_scene(spec.geometry, spec.pose, spec.domain, spec.source)
    except DognoseError as exc:
        raise SimulationError("geometry", 0, 0.0, exc) from exc
    topo = topology(mask)
    fp = spec.flow
    h = mask.h
    state = FlowState.zeros(mask)
    c = np.zeros(mask.shape)
    stepper = ScalarStepper(mask, spec.source, spec.outgassing, spec.transport, spec.sensor)
    motors = _Motors(spec)
    period = spec.sensor.sample_period
    n_samples = int(math.floor(spec.duration / period + 1e-9)) + 1
    reading = spec.transport.background
    rows = [(0.0, reading, 0.0, 0.0)]
    events = sorted(x for x in (spec.motor_off_time, spec.source.start_time) if x is not None)
    visc_dt = 0.25 * h * h / fp.kinematic_viscosity

    ledger = MassLedger()
    t = 0.0
    step = 0
    sample_k = 1
    snap_k = 0
    frozen = False
    frozen_speeds = (0.0, 0.0)
    frozen_op = None
    scalar_limit = scalar_dt_limit(state, mask, spec.transport)
    stats = dict(flow_steps=0, scalar_steps=0, frozen_steps=0, max_divergence=0.0,
                 min_concentration=0.0, max_speed=0.0)
    cmin = 0.0
    if snapshot_dir is not None and spec.snapshot_cadence:
        write_snapshot(state, snapshot_dir, snap_k)
        snap_k += 1

    while sample_k < n_samples:
        t_sample = sample_k * period
        t_target = t_sample
        for ev in events:
            if t + _TIME_EPS < ev < t_target:
                t_target = ev
        module = "flow"
        try:
            if frozen:
                # scalar-only stretch on the frozen flow; motors still advance
                n = max(1, int(math.ceil((t_target - t) / (SCALAR_SAFETY * scalar_limit) - 1e-9)))
                dt = (t_target - t) / n
                dts, src_on, og_on = [], [], []
                inh, exh = motors.inhale, motors.exhale
                tk = t
                for _ in range(n):
                    motors.inhale, motors.exhale = inh, exh
                    ni, ne = motors.advanced(tk, dt)
                    si, se = motors.speeds(ni, ne)
                    if max(abs(si - frozen_speeds[0]), abs(se - frozen_speeds[1])) > fp.steady_bc_tol:
                        break
                    inh, exh = ni, ne
                    dts.append(dt)
                    src_on.append(tk >= spec.source.start_time - _TIME_EPS)
                    og_on.append(spec.outgassing.active(inh.effective_speed_fraction))
                    tk += dt
                motors.inhale, motors.exhale = inh, exh
                if not dts:
                    frozen = False
                    continue
                module = "transport"
                before = total_mass(c, mask)
                if frozen_op is None:
                    frozen_op = stepper.operator(state)
                c, led, reading, cmin = stepper.advance_frozen(c, frozen_op, dts, src_on, og_on,
                                                               reading)
                led.in_domain = total_mass(c, mask) - before
                ledger = ledger + led
                stats["scalar_steps"] += len(dts)
                stats["frozen_steps"] += len(dts)
                stats["min_concentration"] = min(stats["min_concentration"], cmin)
                t = t_target if len(dts) == n else t + dt * len(dts)
                if len(dts) < n:
                    frozen = False
            else:
                inh0, exh0 = motors.inhale, motors.exhale
                dt = min(fp.dt_max, visc_dt, t_target - t)
                for _ in range(8):
                    ni, ne = motors.advanced(t, dt)
                    si, se = motors.speeds(ni, ne)
                    bc = apply_jet_bcs(state, mask, si, se)
                    dt_cfl = cfl_dt(bc, fp)
                    if dt <= dt_cfl:
                        break
                    # port speed rises as dt shrinks during spin-down; undershoot
                    dt = CFL_BACKOFF * dt_cfl
                else:
                    raise DognoseError("could not find a CFL-compliant time step")
                motors.inhale, motors.exhale = ni, ne
                new = step_flow(bc, mask, dataclasses.replace(fp, dt=dt))
                stats["flow_steps"] += 1
                stats["max_divergence"] = max(stats["max_divergence"],
                                              new.stats.get("max_divergence", 0.0))
                speed = new.max_speed()
                stats["max_speed"] = max(stats["max_speed"], speed)
                if fp.steady_tol > 0:
                    change = _free_change(bc, new, topo)
                    still = speed == 0.0 or change / (dt * speed) <= fp.steady_tol
                    speeds_prev = motors.speeds(inh0, exh0)
                    steady_bc = max(abs(si - speeds_prev[0]), abs(se - speeds_prev[1])) \
                        <= fp.steady_bc_tol * dt
                    if still and steady_bc:
                        frozen = True
                        frozen_speeds = (si, se)
                        frozen_op = None
                state = new
                scalar_limit = scalar_dt_limit(state, mask, spec.transport)
                module = "transport"
                n = max(1, int(math.ceil(dt / (SCALAR_SAFETY * scalar_limit) - 1e-9)))
                sub = dt / n
                src_on = [t + k * sub >= spec.source.start_time - _TIME_EPS for k in range(n)]
                og_on = [spec.outgassing.active(ni.effective_speed_fraction)] * n
                before = total_mass(c, mask)
                c, led, reading, cmin = stepper.advance(c, state, [sub] * n, src_on, og_on, reading,
                                                        check=False)
                led.in_domain = total_mass(c, mask) - before
                ledger = ledger + led
                stats["scalar_steps"] += n
                stats["min_concentration"] = min(stats["min_concentration"], cmin)
                t = t_target if abs(t + dt - t_target) <= _TIME_EPS else t + dt
        except DognoseError as exc:
            if isinstance(exc, SimulationError):
                raise
            raise SimulationError(module, step, t, exc) from exc
        step += 1
        if t >= t_sample - _TIME_EPS:
            t = t_sample
            rows.append((t_sample, reading, motors.inhale.effective_speed_fraction,
                         motors.exhale.effective_speed_fraction))
            sample_k += 1
            if (snapshot_dir is not None and spec.snapshot_cadence
                    and t_sample >= snap_k * spec.snapshot_cadence - _TIME_EPS):
                write_snapshot(state, snapshot_dir, snap_k)
                snap_k += 1

    # remaining time after the last sample point
    tail = spec.duration - t
    if tail > _TIME_EPS:
        frozen_state = state
        n = max(1, int(math.ceil(tail / (SCALAR_SAFETY * scalar_dt_limit(frozen_state, mask, spec.transport)))))
        before = total_mass(c, mask)
        c, led, reading, cmin = stepper.advance(
            c, frozen_state, [tail / n] * n,
            [t >= spec.source.start_time] * n, [False] * n, reading)
        led.in_domain = total_mass(c, mask) - before
        ledger = ledger + led

    arr = np.array(rows)
    trace = SensorTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    stats["steps"] = step
    stats["wall_time"] = time.perf_counter() - wall0
    return RunResult(trace=trace, ledger=ledger.recomputed(), preset=preset,
                     config=spec.to_dict(), stats=stats,
                     concentration=c if keep_fields else None,
                     flow=state if keep_fields else None,
                     mask=mask if keep_fields else None)


# --------------------------------------------------------------------------
# presets

HEIGHTS_CM = (0.0, 1.27, 2.54, 5.08)
SCHEMES = {
    "passive": (Schedule.off(), Schedule.off()),
    "inhale": (Schedule.continuous(1.0), Schedule.off()),
    "dognose": (Schedule.continuous(1.0), Schedule.continuous(1.0)),
}


def _height_label(cm):
    return "0" if cm == 0 else f"{cm:g}"


def list_presets() -> dict:
    """Named scenarios, one per experiment reported for the physical sampler."""
    base = ScenarioSpec()
    presets = {}
    for scheme, (inh, exh) in SCHEMES.items():
        for cm in HEIGHTS_CM:
            presets[f"{scheme}_h{_height_label(cm)}cm"] = dataclasses.replace(
                base, pose=ScenePose(Orientation.FACE_DOWN, cm / 100),
                inhale_schedule=inh, exhale_schedule=exh)
    elevated = ScenePose(Orientation.FACE_DOWN, 0.0508)
    for pct in (60, 80, 100):
        presets[f"dognose_duty{pct}"] = dataclasses.replace(
            base, pose=elevated, inhale_schedule=Schedule.continuous(pct / 100),
            exhale_schedule=Schedule.continuous(1.0))
    side = ScenePose(Orientation.HORIZONTAL_90, 0.0)
    presets["ninety_inhale"] = dataclasses.replace(
        base, pose=side, inhale_schedule=Schedule.continuous(1.0), exhale_schedule=Schedule.off())
    presets["ninety_dognose"] = dataclasses.replace(
        base, pose=side, inhale_schedule=Schedule.continuous(1.0),
        exhale_schedule=Schedule.continuous(1.0))
    presets["pulsed_20s"] = dataclasses.replace(
        base, pose=elevated, inhale_schedule=Schedule.pulsed(20.0, 0.5, 1.0),
        exhale_schedule=Schedule.continuous(1.0))
    presets["no_source_outgassing"] = dataclasses.replace(
        presets["inhale_h5.08cm"], source=dataclasses.replace(base.source, emission_rate=0.0),
        outgassing=OutgassingSpec(enabled=True, rate=DEFAULT_OUTGASSING_RATE))
    return presets


DEFAULT_OUTGASSING_RATE = 1.0

ALIASES = {f"{scheme}_h0": f"{scheme}_h0cm" for scheme in SCHEMES}


def get_preset(name: str) -> ScenarioSpec:
    presets = list_presets()
    key = ALIASES.get(name, name)
    if key not in presets:
        raise KeyError(name)
    return presets[key]


def run_preset(name: str, **overrides) -> RunResult:
    spec = get_preset(name)
    for path, value in overrides.items():
        spec = spec.replace(path.replace("__", "."), value)
    return run_scenario(spec, preset=name)


# --------------------------------------------------------------------------


def peak_reading(result: RunResult, background=0.0) -> float:
    return float(result.trace.reading.max()) - background


def calibrate_emission(preset, target_peak: float, reference_rate: float = 1.0,
                       verify: bool = True, rel_tol: float = 0.01) -> float:
    """Emission rate that makes the run peak at ``target_peak``.

    The flow never sees the tracer, so the reading is linear in the emission
    rate above the background: one reference run fixes the scale.
    """
    if target_peak <= 0:
        raise ValueError("target_peak must be positive")
    spec = get_preset(preset) if isinstance(preset, str) else preset
    bg = spec.transport.background
    ref = spec.replace("source.emission_rate", reference_rate)
    p0 = peak_reading(run_scenario(ref), bg)
    if p0 <= 0:
        raise DegenerateRun("no tracer reached the sensor in the reference run")
    rate = reference_rate * (target_peak - bg) / p0
    if verify:
        got = peak_reading(run_scenario(spec.replace("source.emission_rate", rate)))
        if abs(got - target_peak) > rel_tol * target_peak:
            raise DegenerateRun(f"verification peak {got:.6g} misses target {target_peak:.6g}")
    return rate
