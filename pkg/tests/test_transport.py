import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import box_mask
from dognose.errors import StabilityViolation
from dognose.flow import FlowParams, FlowState, apply_jet_bcs, project, step_flow
from dognose.geometry import (CellClass, DomainSpec, Orientation, SamplerGeometry, ScenePose,
                              SourceSpec, build_scene)
from dognose.transport import (MassLedger, OutgassingSpec, ScalarStepper, SensorSpec,
                               TransportParams, mass_budget, sample_sensor, scalar_dt_limit,
                               sensor_region, step_scalar, total_mass)

NO_SRC = SourceSpec(emission_rate=0.0)
NO_OG = OutgassingSpec()


@pytest.fixture(scope="module")
def sampler_flow():
    mask = build_scene(SamplerGeometry(), ScenePose(Orientation.FACE_DOWN, 0.0508),
                       DomainSpec(cell_size=0.25 / 64), SourceSpec(emission_rate=5.0, offset=0.03))
    s = apply_jet_bcs(FlowState.zeros(mask), mask, 2.0, 1.0)
    for _ in range(60):
        s = apply_jet_bcs(step_flow(s, mask, FlowParams(dt=1.5e-3)), mask, 2.0, 1.0)
    return mask, s


def closed_flow(mask, rng):
    s = FlowState.zeros(mask)
    s = FlowState(rng.normal(0, 0.3, s.u.shape), rng.normal(0, 0.3, s.v.shape), s.p, s.h)
    fluid = mask.cls == CellClass.FLUID
    # zero every face touching a solid cell or the domain edge, then project
    s.u[0] = s.u[-1] = 0
    s.v[:, 0] = s.v[:, -1] = 0
    s.u[1:-1] *= fluid[:-1] & fluid[1:]
    s.v[:, 1:-1] *= fluid[:, :-1] & fluid[:, 1:]
    return project(s, mask, FlowParams(dt=1e-3))


def test_no_transport_leaves_field_unchanged(rng):
    m = box_mask()
    c = rng.random(m.shape)
    new, led = step_scalar(c, FlowState.zeros(m), m, NO_SRC, NO_OG,
                           TransportParams(diffusivity=1e-300), 0.01, 0.0)
    assert np.array_equal(new, c)
    assert led.removed_open == 0 and led.removed_tube == 0


def test_upwind_preserves_constants(rng):
    m = box_mask(open_sides=(False, False, False, False), solid_rim=True)
    s = closed_flow(m, rng)
    fluid = m.cls == CellClass.FLUID
    c = np.where(fluid, 3.0, 0.0)
    p = TransportParams()
    dt = 0.9 * scalar_dt_limit(s, m, p)
    for _ in range(20):
        c, _ = step_scalar(c, s, m, NO_SRC, NO_OG, p, dt, 0.0)
    assert np.allclose(c[fluid], 3.0, rtol=0, atol=1e-12)


def test_gaussian_diffusion_matches_heat_kernel():
    n, h = 96, 1e-3
    m = box_mask(nx=n, ny=n, h=h, open_sides=(True, True, True, True))
    d = 8e-6
    p = TransportParams(diffusivity=d)
    x = (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    x0 = n * h / 2
    s0 = 4e-3
    r2 = (X - x0) ** 2 + (Y - x0) ** 2
    c = np.exp(-r2 / (2 * s0 ** 2))
    dt = 0.2 * h * h / d
    z = FlowState.zeros(m)
    for _ in range(100):
        c, _ = step_scalar(c, z, m, NO_SRC, NO_OG, p, dt, 0.0)
    s2 = s0 ** 2 + 2 * d * 100 * dt
    exact = (s0 ** 2 / s2) * np.exp(-r2 / (2 * s2))
    err = np.sqrt(np.sum((c - exact) ** 2) / np.sum(exact ** 2))
    assert err <= 0.05


def test_sensor_first_order_response():
    region = np.ones((2, 2), dtype=bool)
    c = np.full((2, 2), 10.0)
    spec = SensorSpec(response_time=1.0)
    r = sample_sensor(c, region, spec, 0.0, 1.0)
    assert abs(r - (1 - math.exp(-1)) * 10.0) <= 0.02 * (1 - math.exp(-1)) * 10.0
    assert sample_sensor(np.zeros((2, 2)), region, spec, 0.0, 1.0) == 0.0
    assert sample_sensor(c, region, SensorSpec(response_time=0.0), 0.0, 1.0) == 10.0
    assert sample_sensor(c, region, SensorSpec(response_time=0.0), 0.0, 1.0, background=2.0) == 12.0
    with pytest.raises(ValueError):
        sample_sensor(c, region, spec, 0.0, 0.0)


def test_sealed_box_source_budget():
    m = box_mask(open_sides=(False, False, False, False), solid_rim=True,
                 source_cells=((16, 16),))
    src = SourceSpec(emission_rate=1.0)
    p = TransportParams()
    z = FlowState.zeros(m)
    c = np.zeros(m.shape)
    dt = 0.025
    ledgers = []
    for k in range(400):
        c, led = step_scalar(c, z, m, src, NO_OG, p, dt, k * dt)
        ledgers.append(led)
    total = mass_budget(ledgers)
    field_mass = float(c.sum()) * m.h ** 2 * m.thickness
    assert abs(total.in_domain - 10.0) <= 0.05
    assert abs(field_mass - 10.0) <= 0.05
    assert abs(total.residual) <= 1e-9


def test_empty_budget():
    total = mass_budget([MassLedger(), MassLedger()])
    assert all(v == 0 for v in total.as_dict().values())


def test_long_inhale_run_conserves_mass(sampler_flow):
    mask, s = sampler_flow
    src = SourceSpec(emission_rate=5.0, offset=0.03)
    p = TransportParams()
    dt = 0.95 * scalar_dt_limit(s, mask, p)
    # tracer already waiting under the snout
    k_loc, m_loc = mask.local_index()
    c = np.where((mask.cls == CellClass.FLUID) & (m_loc < 0) & (np.abs(k_loc) < 8), 50.0, 0.0)
    start = total_mass(c, mask)
    ledgers = []
    for k in range(1000):
        c, led = step_scalar(c, s, mask, src, NO_OG, p, dt, k * dt)
        ledgers.append(led)
    total = mass_budget(ledgers)
    assert total.removed_tube > 0
    assert abs(total.residual) <= 0.005 * total.emitted
    assert math.isclose(start + total.in_domain, total_mass(c, mask), rel_tol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 1.0))
def test_positivity(seed, frac):
    rng = np.random.default_rng(seed)
    m = box_mask(open_sides=(True, True, False, True))
    s = project(FlowState(rng.normal(0, 0.5, (33, 32)), rng.normal(0, 0.5, (32, 33)),
                          np.zeros((32, 32)), m.h), m, FlowParams(dt=1e-3))
    p = TransportParams()
    c = rng.random(m.shape) * (rng.random(m.shape) < 0.3)
    dt = frac * scalar_dt_limit(s, m, p)
    for _ in range(10):
        c, _ = step_scalar(c, s, m, NO_SRC, NO_OG, p, dt, 0.0)
        assert c.min() >= 0.0


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 50.0))
def test_linear_in_source(k):
    m = box_mask(open_sides=(True, True, False, True), source_cells=((10, 12), (11, 12)))
    rng = np.random.default_rng(7)
    s = project(FlowState(rng.normal(0, 0.3, (33, 32)), rng.normal(0, 0.3, (32, 33)),
                          np.zeros((32, 32)), m.h), m, FlowParams(dt=1e-3))
    p = TransportParams()
    dt = 0.9 * scalar_dt_limit(s, m, p)
    a = np.zeros(m.shape)
    b = np.zeros(m.shape)
    for n in range(30):
        a, _ = step_scalar(a, s, m, SourceSpec(emission_rate=1.0), NO_OG, p, dt, n * dt)
        b, _ = step_scalar(b, s, m, SourceSpec(emission_rate=k), NO_OG, p, dt, n * dt)
    nz = a > 1e-300
    assert np.allclose(b[nz], k * a[nz], rtol=1e-6, atol=0)


def test_stability_violation(sampler_flow):
    mask, s = sampler_flow
    p = TransportParams()
    dt = 2 * scalar_dt_limit(s, mask, p)
    with pytest.raises(StabilityViolation):
        step_scalar(np.zeros(mask.shape), s, mask, NO_SRC, NO_OG, p, dt, 0.0)


def test_source_waits_for_start_time():
    m = box_mask(source_cells=((5, 5),))
    src = SourceSpec(emission_rate=1.0, start_time=1.0)
    c, led = step_scalar(np.zeros(m.shape), FlowState.zeros(m), m, src, NO_OG,
                         TransportParams(), 0.01, 0.5)
    assert led.emitted == 0 and not c.any()
    c, led = step_scalar(c, FlowState.zeros(m), m, src, NO_OG, TransportParams(), 0.01, 1.0)
    assert led.emitted == pytest.approx(0.01)


def test_outgassing_only_while_inhale_is_slow(sampler_flow):
    mask, s = sampler_flow
    og = OutgassingSpec(enabled=True, rate=2.0)
    p = TransportParams()
    dt = 0.5 * scalar_dt_limit(s, mask, p)
    _, led = step_scalar(np.zeros(mask.shape), s, mask, NO_SRC, og, p, dt, 0.0, inhale_level=1.0)
    assert led.outgassed == 0
    c, led = step_scalar(np.zeros(mask.shape), s, mask, NO_SRC, og, p, dt, 0.0, inhale_level=0.05)
    assert led.outgassed == pytest.approx(2.0 * dt)
    assert abs(led.residual) <= 1e-12


def test_frozen_operator_matches_direct_kernel(sampler_flow):
    mask, s = sampler_flow
    src = SourceSpec(emission_rate=5.0, offset=0.03)
    og = OutgassingSpec(enabled=True, rate=1.0)
    p = TransportParams()
    stepper = ScalarStepper(mask, src, og, p, SensorSpec())
    rng = np.random.default_rng(3)
    c = rng.random(mask.shape) * (mask.cls == CellClass.FLUID)
    dt = 0.9 * scalar_dt_limit(s, mask, p)
    n = 50
    on = [True] * n
    a, la, ra, _ = stepper.advance(c, s, [dt] * n, on, on, 0.2)
    b, lb, rb, _ = stepper.advance_frozen(c, stepper.operator(s), [dt] * n, on, on, 0.2)
    assert np.allclose(a, b, rtol=1e-11, atol=1e-12)
    for f in ("emitted", "outgassed", "removed_tube", "removed_open"):
        assert getattr(la, f) == pytest.approx(getattr(lb, f), rel=1e-11, abs=1e-15)
    assert ra == pytest.approx(rb, rel=1e-11)


def test_sensor_region_sits_in_chamber(sampler_flow):
    mask, _ = sampler_flow
    reg = sensor_region(mask, SensorSpec())
    assert reg.any() and (mask.chamber[reg]).all()
