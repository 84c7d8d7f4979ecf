"""Incompressible 2D airflow on a staggered (MAC) grid.

Velocities live on cell faces (``u`` on x-faces, shape ``(nx+1, ny)``; ``v`` on
y-faces, shape ``(nx, ny+1)``), pressure at cell centres. A step is

    advect (semi-Lagrangian) -> diffuse (explicit) -> boundary conditions -> project

Faces between two fluid cells, and open-boundary faces of fluid cells, are
*free*; every other face is fixed: zero next to solids, or the jet value set by
:func:`apply_jet_bcs` next to a port.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import _kernels as K
from .errors import CflViolation, ProjectionDiverged
from .geometry import Boundary, CellClass, GridMask

log = logging.getLogger(__name__)

SPEED_EPS = 1e-9


@dataclass
class FlowState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    h: float
    stats: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, mask: GridMask) -> "FlowState":
        nx, ny = mask.shape
        return cls(np.zeros((nx + 1, ny)), np.zeros((nx, ny + 1)), np.zeros((nx, ny)), mask.h)

    def copy(self) -> "FlowState":
        return FlowState(self.u.copy(), self.v.copy(), self.p.copy(), self.h, dict(self.stats))

    def max_speed(self) -> float:
        return max(float(np.abs(self.u).max()), float(np.abs(self.v).max()))


@dataclass(frozen=True)
class FlowParams:
    kinematic_viscosity: float = 1.5e-5
    dt: float = 1e-3
    cfl_target: float = 0.9
    div_tol: float = 1e-6
    max_projection_iters: int = 10000
    dt_max: float = 0.05
    # flow is held fixed once the jets are steady and the free faces change
    # slower than steady_tol * max speed per second; 0 disables freezing
    steady_tol: float = 0.0
    # port speed drift (m/s) that ends a frozen stretch
    steady_bc_tol: float = 1e-3

    def validate(self):
        for name in ("kinematic_viscosity", "dt", "cfl_target", "div_tol",
                     "max_projection_iters", "dt_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cfl_target > 1:
            raise ValueError("cfl_target must be <= 1")
        if self.steady_tol < 0 or self.steady_bc_tol < 0:
            raise ValueError("steady_tol and steady_bc_tol must be >= 0")


# --------------------------------------------------------------------------
# per-mask topology, cached on the mask


class _Topology:
    """Free-face masks, port face table and the factorized pressure operator."""

    def __init__(self, mask: GridMask):
        cls = mask.cls
        nx, ny = cls.shape
        fluid = cls == CellClass.FLUID
        left, right, bottom, top = (Boundary(b) is Boundary.OPEN for b in mask.boundaries)
        self.open_lrbt = np.array([left, right, bottom, top])

        free_u = np.zeros((nx + 1, ny), dtype=bool)
        free_u[1:nx] = fluid[:-1] & fluid[1:]
        free_u[0] = fluid[0] & left
        free_u[nx] = fluid[-1] & right
        free_v = np.zeros((nx, ny + 1), dtype=bool)
        free_v[:, 1:ny] = fluid[:, :-1] & fluid[:, 1:]
        free_v[:, 0] = fluid[:, 0] & bottom
        free_v[:, ny] = fluid[:, -1] & top
        self.free_u, self.free_v = free_u, free_v
        self.fluid = fluid
        self._build_ports(mask)
        self._build_operator(mask)

    def _build_ports(self, mask):
        cls, jet = mask.cls, mask.jet
        nx, ny = cls.shape
        rows = {CellClass.INHALE: [], CellClass.EXHALE: [], CellClass.TUBE: []}
        # each row: (axis, fi, fj, face velocity per unit port speed)
        self.inhale_unit_flux = 0.0
        for kind in rows:
            for ci, cj in np.argwhere(cls == kind):
                d = jet[ci, cj]
                faces = []
                for axis, di, dj in ((0, 1, 0), (0, -1, 0), (1, 0, 1), (1, 0, -1)):
                    a, b = ci + di, cj + dj
                    if not (0 <= a < nx and 0 <= b < ny) or cls[a, b] != CellClass.FLUID:
                        continue
                    normal = di if axis == 0 else dj
                    if axis == 0:
                        fi, fj = (ci + 1, cj) if di > 0 else (ci, cj)
                    else:
                        fi, fj = (ci, cj + 1) if dj > 0 else (ci, cj)
                    faces.append((axis, fi, fj, normal, d[axis] * normal))
                if kind == CellClass.INHALE:
                    # a port passes air only if open on both its ends
                    if not (any(f[4] < 0 for f in faces) and any(f[4] > 0 for f in faces)):
                        continue
                    for axis, fi, fj, normal, dn in faces:
                        if dn != 0:
                            rows[kind].append((axis, fi, fj, d[axis]))
                        if dn > 0:
                            self.inhale_unit_flux += dn * mask.h
                elif kind == CellClass.EXHALE:
                    for axis, fi, fj, normal, dn in faces:
                        if dn > 0:
                            rows[kind].append((axis, fi, fj, d[axis]))
                else:
                    for axis, fi, fj, normal, dn in faces:
                        rows[kind].append((axis, fi, fj, -float(normal)))
        self.port_rows = {k: np.array(v, dtype=float).reshape(-1, 4) for k, v in rows.items()}
        port_u = np.zeros((nx + 1, ny), dtype=bool)
        port_v = np.zeros((nx, ny + 1), dtype=bool)
        for arr in self.port_rows.values():
            for axis, fi, fj, _ in arr:
                (port_u if axis == 0 else port_v)[int(fi), int(fj)] = True
        self.port_u, self.port_v = port_u, port_v
        self.tube_faces = len(self.port_rows[CellClass.TUBE])
        # per kind: (u index, u unit value, v index, v unit value)
        self.port_faces = {}
        for kind, arr in self.port_rows.items():
            on_u, on_v = arr[:, 0] == 0, arr[:, 0] == 1
            self.port_faces[kind] = (
                (arr[on_u, 1].astype(np.int64), arr[on_u, 2].astype(np.int64)), arr[on_u, 3],
                (arr[on_v, 1].astype(np.int64), arr[on_v, 2].astype(np.int64)), arr[on_v, 3])

    def _build_operator(self, mask):
        cls = mask.cls
        nx, ny = cls.shape
        fluid = self.fluid
        idx = -np.ones((nx, ny), dtype=np.int64)
        n = int(fluid.sum())
        idx[fluid] = np.arange(n)
        self.idx = idx
        self.n = n
        self.fi, self.fj = (a.astype(np.int64) for a in np.nonzero(fluid))
        rows, cols, vals = [], [], []
        diag = np.zeros(n)
        fi, fj = np.nonzero(fluid)
        me = idx[fi, fj]
        for di, dj, side in ((1, 0, 1), (-1, 0, 0), (0, 1, 3), (0, -1, 2)):
            a, b = fi + di, fj + dj
            inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
            nb = np.full(n, -1)
            nb[inside] = idx[a[inside], b[inside]]
            link = nb >= 0
            rows.append(me[link])
            cols.append(nb[link])
            vals.append(np.ones(link.sum()))
            diag[me[link]] -= 1.0
            if self.open_lrbt[side]:
                diag[me[~inside]] -= 1.0
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        A = A / mask.h ** 2
        # pin one cell in every component with no open boundary (pressure is
        # only defined up to a constant there)
        labels, count = ndimage.label(fluid)
        touches = np.zeros(count + 1, dtype=bool)
        edge = np.zeros_like(fluid)
        if self.open_lrbt[0]:
            edge[0] = True
        if self.open_lrbt[1]:
            edge[-1] = True
        if self.open_lrbt[2]:
            edge[:, 0] = True
        if self.open_lrbt[3]:
            edge[:, -1] = True
        touches[np.unique(labels[edge & fluid])] = True
        pinned = []
        A = A.tolil()
        for lab in range(1, count + 1):
            if touches[lab]:
                continue
            ci, cj = np.argwhere(labels == lab)[0]
            r = idx[ci, cj]
            A.rows[r] = [r]
            A.data[r] = [1.0]
            pinned.append(r)
        self.pinned = np.array(pinned, dtype=np.int64)
        self.A = A.tocsc()
        self.lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")


def topology(mask: GridMask) -> _Topology:
    topo = mask.meta.get("_topology")
    if topo is None or topo[0] is not mask.cls or not np.array_equal(topo[1], mask.cls):
        topo = (mask.cls, mask.cls.copy(), _Topology(mask))
        mask.meta["_topology"] = topo
    return topo[2]


# --------------------------------------------------------------------------


def apply_jet_bcs(state: FlowState, mask: GridMask, inhale_speed: float,
                  exhale_speed: float) -> FlowState:
    """Write port face velocities; the tube outflux balances inhale influx."""
    if inhale_speed < 0 or exhale_speed < 0:
        raise ValueError("port speeds must be >= 0")
    topo = topology(mask)
    u, v = state.u.copy(), state.v.copy()
    tube_speed = 0.0
    if topo.tube_faces:
        tube_speed = inhale_speed * topo.inhale_unit_flux / (topo.tube_faces * mask.h)
    for kind, speed in ((CellClass.INHALE, inhale_speed), (CellClass.EXHALE, exhale_speed),
                        (CellClass.TUBE, tube_speed)):
        iu, wu, iv, wv = topo.port_faces[kind]
        u[iu] = speed * wu
        v[iv] = speed * wv
    return FlowState(u, v, state.p.copy(), state.h, dict(state.stats))


def cfl_dt(state: FlowState, params: FlowParams) -> float:
    speed = max(state.max_speed(), SPEED_EPS)
    return min(params.cfl_target * state.h / speed, params.dt_max)


def max_divergence(state: FlowState, mask: GridMask) -> float:
    d = K.divergence(state.u, state.v, state.h)
    fluid = mask.cls == CellClass.FLUID
    return float(np.abs(d[fluid]).max()) if fluid.any() else 0.0


def kinetic_energy(state: FlowState) -> float:
    return 0.5 * state.h ** 2 * (float(np.sum(state.u ** 2)) + float(np.sum(state.v ** 2)))


def _zero_gradient_open(u, v, topo):
    nx1, ny = u.shape
    ol, orr, ob, ot = topo.open_lrbt
    if ol:
        u[0] = np.where(topo.free_u[0], u[1], u[0])
    if orr:
        u[-1] = np.where(topo.free_u[-1], u[-2], u[-1])
    if ob:
        v[:, 0] = np.where(topo.free_v[:, 0], v[:, 1], v[:, 0])
    if ot:
        v[:, -1] = np.where(topo.free_v[:, -1], v[:, -2], v[:, -1])


def project(state: FlowState, mask: GridMask, params: FlowParams) -> FlowState:
    """Make the velocity discretely divergence-free on every fluid cell.

    The pressure Poisson system is solved with a cached sparse LU
    factorization, followed by residual-correction sweeps until the largest
    cell divergence is within ``div_tol``.
    """
    topo = topology(mask)
    u, v = state.u.copy(), state.v.copy()
    h, dt = state.h, params.dt
    p = np.zeros_like(state.p)
    rhs = np.empty(topo.n)
    dmax = K.pressure_rhs(u, v, h, dt, topo.fi, topo.fj, topo.pinned, rhs)
    bnorm = float(np.linalg.norm(rhs)) or 1.0
    prev = np.inf
    it = 0
    while True:
        resid = float(np.linalg.norm(rhs)) / bnorm
        if dmax <= params.div_tol:
            break
        if it >= params.max_projection_iters or (it >= 2 and dmax >= prev):
            if dmax > prev:
                raise ProjectionDiverged(
                    f"divergence grew to {dmax:.3e} 1/s after {it} sweeps")
            log.warning("projection stalled at divergence %.3e 1/s", dmax)
            break
        prev = dmax
        K.apply_pressure(u, v, p, topo.lu.solve(rhs), topo.idx, topo.free_u, topo.free_v,
                         dt / h)
        dmax = K.pressure_rhs(u, v, h, dt, topo.fi, topo.fj, topo.pinned, rhs)
        it += 1
    stats = dict(state.stats)
    stats.update(projection_iters=it, max_divergence=dmax, relative_residual=resid)
    return FlowState(u, v, p, h, stats)


def step_flow(state: FlowState, mask: GridMask, params: FlowParams) -> FlowState:
    """Advance the velocity field by ``params.dt``."""
    topo = topology(mask)
    h, dt = state.h, params.dt
    if state.max_speed() * dt / h > params.cfl_target * (1 + 1e-12):
        raise CflViolation(
            f"dt={dt:.3e} s exceeds CFL {params.cfl_target} at speed {state.max_speed():.3e} m/s")
    fixed_u = np.where(topo.port_u, state.u, 0.0)
    fixed_v = np.where(topo.port_v, state.v, 0.0)
    u, v = K.advect_velocity(state.u, state.v, topo.free_u, topo.free_v, dt / h)
    coef = params.kinematic_viscosity * dt / h ** 2
    if coef > 0:
        u = K.diffuse_faces(u, topo.free_u, coef)
        v = K.diffuse_faces(v, topo.free_v, coef)
    _zero_gradient_open(u, v, topo)
    u = np.where(topo.free_u, u, fixed_u)
    v = np.where(topo.free_v, v, fixed_v)
    return project(FlowState(u, v, state.p, h, state.stats), mask, params)


def cell_speed(state: FlowState) -> np.ndarray:
    uc = 0.5 * (state.u[1:] + state.u[:-1])
    vc = 0.5 * (state.v[:, 1:] + state.v[:, :-1])
    return np.hypot(uc, vc)


def write_snapshot(state: FlowState, directory, frame: int) -> list[Path]:
    """Dump cell-centred speed and pressure as CSV matrices (rows = y, top first)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, arr in (("speed", cell_speed(state)), ("pressure", state.p)):
        path = directory / f"{name}_{frame:05d}.csv"
        np.savetxt(path, arr.T[::-1], delimiter=",", fmt="%.9e")
        paths.append(path)
    return paths


def with_dt(params: FlowParams, dt: float) -> FlowParams:
    return replace(params, dt=dt)
