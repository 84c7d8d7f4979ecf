"""Passive VOC transport, the virtual sensor and the tracer mass ledger.

Concentration is a cell-centred array (ug/m^3) over the grid; non-fluid cells
hold zero. The update is conservative first-order upwind with explicit
diffusion, so it is monotone and stays non-negative whenever
``dt * outflow_rate <= 1`` (see :func:`scalar_dt_limit`).

Tracer crossing tube faces is booked as ``removed_tube``; tracer leaving
through open domain sides as ``removed_open``. Inhale ports are treated as
zero-volume conduits: what enters from outside is delivered to the chamber in
the same step. Exhale air is clean.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import _kernels as K
from .errors import StabilityViolation
from .flow import FlowState, topology
from .geometry import CellClass, GridMask, SourceSpec


@dataclass(frozen=True)
class TransportParams:
    diffusivity: float = 8e-6
    background: float = 0.0

    def validate(self):
        if self.diffusivity <= 0:
            raise ValueError("diffusivity must be positive")
        if self.background < 0:
            raise ValueError("background must be >= 0")


@dataclass(frozen=True)
class SensorSpec:
    """Sensor footprint (a rectangle against the chamber back wall) and dynamics."""

    width: float = 0.01
    depth: float = 0.004
    response_time: float = 1.0
    sample_period: float = 1.0

    def validate(self):
        if self.width <= 0 or self.depth <= 0:
            raise ValueError("sensor region must have positive size")
        if self.response_time < 0 or self.sample_period <= 0:
            raise ValueError("response_time must be >= 0 and sample_period > 0")


@dataclass(frozen=True)
class OutgassingSpec:
    enabled: bool = False
    rate: float = 0.0
    # active while the inhale motor runs below this fraction of full speed
    threshold: float = 0.1

    def validate(self):
        if self.rate < 0:
            raise ValueError("outgassing rate must be >= 0")

    def active(self, inhale_level: float) -> bool:
        return self.enabled and self.rate > 0 and inhale_level < self.threshold


@dataclass
class MassLedger:
    emitted: float = 0.0
    in_domain: float = 0.0
    removed_tube: float = 0.0
    removed_open: float = 0.0
    outgassed: float = 0.0
    residual: float = 0.0

    def __add__(self, other: "MassLedger") -> "MassLedger":
        out = MassLedger(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))
        return out.recomputed()

    def recomputed(self) -> "MassLedger":
        self.residual = (self.emitted + self.outgassed - self.in_domain
                         - self.removed_tube - self.removed_open)
        return self

    def relative_residual(self) -> float:
        supplied = self.emitted + self.outgassed
        return abs(self.residual) / supplied if supplied > 0 else abs(self.residual)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def mass_budget(ledgers) -> MassLedger:
    """Sum ledger deltas. ``in_domain`` of a delta is the change over its step."""
    total = MassLedger()
    for led in ledgers:
        total = total + led
    return total.recomputed()


def total_mass(c: np.ndarray, mask: GridMask) -> float:
    return float(c.sum()) * mask.h ** 2 * mask.thickness


def sensor_region(mask: GridMask, spec: SensorSpec) -> np.ndarray:
    """Chamber cells within the sensor rectangle at the back wall."""
    k, m = mask.local_index()
    h = mask.h
    rows = max(1, int(round(spec.depth / h)))
    half = spec.width / 2
    region = (mask.chamber & (np.abs(k) * h <= half + 1e-9 * h)
              & (m >= mask.back_row - rows) & (m < mask.back_row))
    if not region.any():
        region = mask.chamber & (k == 0) & (m == mask.back_row - 1)
    return region


def outgassing_cells(mask: GridMask) -> np.ndarray:
    """Chamber cells that share a face with a tube outlet cell."""
    tube = mask.cls == CellClass.TUBE
    near = np.zeros_like(tube)
    near[1:] |= tube[:-1]
    near[:-1] |= tube[1:]
    near[:, 1:] |= tube[:, :-1]
    near[:, :-1] |= tube[:, 1:]
    return near & (mask.cls == CellClass.FLUID)


def scalar_dt_limit(state: FlowState, mask: GridMask, params: TransportParams) -> float:
    """Largest dt keeping the explicit update monotone (and the stated CFL bounds)."""
    topo = topology(mask)
    rate = K.outflow_rate(state.u, state.v, mask.cls, mask.h, params.diffusivity, topo.open_lrbt)
    limits = [0.25 * mask.h ** 2 / params.diffusivity]
    if rate > 0:
        limits.append(1.0 / rate)
    speed = state.max_speed()
    if speed > 0:
        limits.append(mask.h / speed)
    return min(limits)


def check_stability(state: FlowState, mask: GridMask, params: TransportParams, dt: float):
    limit = scalar_dt_limit(state, mask, params)
    if dt > limit * (1 + 1e-12):
        raise StabilityViolation(f"dt={dt:.4e} s exceeds the scalar stability limit {limit:.4e} s")


def _cells(mask_bool):
    idx = np.argwhere(mask_bool)
    return idx[:, 0].astype(np.int64), idx[:, 1].astype(np.int64)


class ScalarStepper:
    """Advances a concentration field on a given flow, many steps at a time.

    Holds the resolved source, outgassing and sensor cells for one mask so the
    time loop only passes per-step arrays to the compiled kernel.
    """

    def __init__(self, mask: GridMask, src: SourceSpec, og: OutgassingSpec,
                 params: TransportParams, sensor: SensorSpec | None = None):
        self.mask = mask
        self.src = src
        self.og = og
        self.params = params
        self.sensor = sensor or SensorSpec()
        self.topo = topology(mask)
        cells = np.array(mask.source_cells, dtype=np.int64).reshape(-1, 2)
        self.src_i, self.src_j = cells[:, 0].copy(), cells[:, 1].copy()
        self.og_i, self.og_j = _cells(outgassing_cells(mask))
        self.reg_i, self.reg_j = _cells(sensor_region(mask, self.sensor))

    def advance(self, c, state: FlowState, dts, src_on, og_on, reading=0.0, check=True):
        dts = np.asarray(dts, dtype=float)
        if check and len(dts):
            check_stability(state, self.mask, self.params, float(dts.max()))
        c, led, reading, cmin = K.advance_scalar(
            c, state.u, state.v, self.mask.cls, self.mask.h, self.params.diffusivity,
            self.topo.open_lrbt, self.mask.thickness, dts,
            self.src_i, self.src_j, float(self.src.emission_rate), np.asarray(src_on, dtype=np.bool_),
            self.og_i, self.og_j, float(self.og.rate if self.og.enabled else 0.0),
            np.asarray(og_on, dtype=np.bool_),
            self.reg_i, self.reg_j, float(self.sensor.response_time),
            float(self.params.background), float(reading))
        ledger = MassLedger(emitted=led[0], outgassed=led[1], removed_tube=led[2],
                            removed_open=led[3])
        return c, ledger, reading, cmin

    def operator(self, state: FlowState):
        """Transport operator for a flow that will be held fixed."""
        m = self.mask
        nx, ny = m.cls.shape
        rows, cols, vals, tube_w, open_w = K.transport_operator(
            state.u, state.v, m.cls, m.h, self.params.diffusivity, self.topo.open_lrbt)
        d = cols - rows
        same_i = rows // ny == cols // ny
        slot = np.full(len(rows), -1)
        slot[d == 0] = 0
        slot[d == -ny] = 1
        slot[d == ny] = 2
        slot[(d == -1) & same_i] = 3
        slot[(d == 1) & same_i] = 4
        coef = np.zeros((5, nx * ny))
        near = slot >= 0
        np.add.at(coef, (slot[near], rows[near]), vals[near])
        far = ~near
        return (coef.reshape(5, nx, ny), rows[far], cols[far], vals[far],
                tube_w.reshape(nx, ny), open_w.reshape(nx, ny))

    def advance_frozen(self, c, op, dts, src_on, og_on, reading=0.0):
        """Like :meth:`advance` on the flow captured by :meth:`operator`."""
        out, led, reading, cmin = K.advance_stencil(
            c, *op, self.mask.h, self.mask.thickness, np.asarray(dts, dtype=float),
            self.src_i, self.src_j, float(self.src.emission_rate),
            np.asarray(src_on, dtype=np.bool_),
            self.og_i, self.og_j, float(self.og.rate if self.og.enabled else 0.0),
            np.asarray(og_on, dtype=np.bool_),
            self.reg_i, self.reg_j, float(self.sensor.response_time),
            float(self.params.background), float(reading))
        ledger = MassLedger(emitted=led[0], outgassed=led[1], removed_tube=led[2],
                            removed_open=led[3])
        return out, ledger, reading, cmin


def step_scalar(c: np.ndarray, state: FlowState, mask: GridMask, src: SourceSpec,
                og: OutgassingSpec, params: TransportParams, dt: float, t: float,
                inhale_level: float = 0.0):
    """One transport step. Returns the new field and the step's ledger delta.

    The source is active once ``t >= src.start_time``; outgassing while
    ``inhale_level`` (effective inhale motor fraction) is below its threshold.
    """
    stepper = ScalarStepper(mask, src, og, params)
    before = total_mass(c, mask)
    new, ledger, _, _ = stepper.advance(
        c, state, [dt], [t >= src.start_time], [og.active(inhale_level)])
    ledger.in_domain = total_mass(new, mask) - before
    return new, ledger.recomputed()


def region_mean(c: np.ndarray, region: np.ndarray) -> float:
    return float(c[region].mean()) if region.any() else 0.0


def sample_sensor(c: np.ndarray, region: np.ndarray, spec: SensorSpec, prev_reading: float,
                  dt: float, background: float = 0.0) -> float:
    """First-order sensor response toward the region mean plus background."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    target = region_mean(c, region) + background
    if spec.response_time == 0:
        return target
    return target + (prev_reading - target) * np.exp(-dt / spec.response_time)
