"""Sampler dimensions, scene pose and rasterization onto the simulation grid.

The sampler is represented as a 2D vertical cross-section through both
inhalation holes. Everything is laid out in a local frame first:

* ``k`` is the lateral cell offset from the snout axis (the axis passes through
  a cell centre, so mirror cells have exactly opposite ``k``),
* ``m`` is the axial row counted backwards from the snout tip (``m = 0`` is the
  tip row).

The local stencil is then scattered into the world grid according to the pose.
World arrays are indexed ``[i, j]`` with ``i`` along x and ``j`` along y (up).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import DomainTooSmall, GeometryError, PortBlocked, ResolutionTooCoarse

log = logging.getLogger(__name__)

WALL_CELLS = 2
_EPS = 1e-9


class CellClass(IntEnum):
    FLUID = 0
    SOLID = 1
    INHALE = 2
    EXHALE = 3
    TUBE = 4


class Orientation(str, Enum):
    FACE_DOWN = "FaceDown"
    HORIZONTAL_90 = "Horizontal90"


class Boundary(str, Enum):
    SOLID = "Solid"
    OPEN = "Open"


@dataclass(frozen=True)
class SamplerGeometry:
    snout_height: float = 0.0127
    nostril_spacing: float = 0.01932
    inhale_diameter: float = 0.008
    exhale_diameter: float = 0.0055
    exhale_angle: float = math.pi / 4
    chamber_width: float = 0.05
    chamber_depth: float = 0.04
    # width of the tube mount on the back wall; sized to pass both inhale jets
    tube_width: float = 0.016

    def validate(self):
        for name in ("snout_height", "nostril_spacing", "inhale_diameter",
                     "exhale_diameter", "chamber_width", "chamber_depth", "tube_width"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        if not 0 < self.exhale_angle < math.pi / 2:
            raise GeometryError("exhale_angle must lie in (0, pi/2)")
        if self.nostril_spacing + self.inhale_diameter >= self.chamber_width:
            raise GeometryError("inhale ports do not fit on the chamber face")
        if self.tube_width >= self.chamber_width / 2:
            raise GeometryError("tube_width must be less than half the chamber width")


@dataclass(frozen=True)
class ScenePose:
    orientation: Orientation = Orientation.FACE_DOWN
    elevation: float = 0.0

    def validate(self):
        if self.elevation < 0:
            raise GeometryError("elevation must be >= 0")
        if self.orientation is Orientation.HORIZONTAL_90 and self.elevation != 0:
            raise GeometryError("Horizontal90 pose rests on the ground (elevation 0)")


@dataclass(frozen=True)
class SourceSpec:
    offset: float = 0.127
    emission_rate: float = 1.0
    start_time: float = 0.0
    radius: float = 0.002

    def validate(self):
        if self.emission_rate < 0:
            raise GeometryError("emission_rate must be >= 0")
        if self.start_time < 0:
            raise GeometryError("start_time must be >= 0")
        if self.offset <= 0 or self.radius <= 0:
            raise GeometryError("source offset and radius must be positive")


@dataclass(frozen=True)
class DomainSpec:
    width: float = 0.25
    height: float = 0.25
    cell_size: float = 0.25 / 128
    left: Boundary = Boundary.OPEN
    right: Boundary = Boundary.OPEN
    bottom: Boundary = Boundary.SOLID
    top: Boundary = Boundary.OPEN
    # out-of-plane extent used to turn areal tracer mass into micrograms
    thickness: float = 1.0

    @property
    def nx(self) -> int:
        return _cells(self.width, self.cell_size, "width")

    @property
    def ny(self) -> int:
        return _cells(self.height, self.cell_size, "height")

    def validate(self):
        if self.cell_size <= 0 or self.thickness <= 0:
            raise GeometryError("cell_size and thickness must be positive")
        if self.nx < 16 or self.ny < 16:
            raise GeometryError("domain must be at least 16 cells in each direction")

    def boundaries(self) -> tuple[Boundary, Boundary, Boundary, Boundary]:
        return (Boundary(self.left), Boundary(self.right),
                Boundary(self.bottom), Boundary(self.top))


def _cells(length, h, name):
    n = length / h
    if abs(n - round(n)) > 1e-6:
        raise GeometryError(f"domain {name} is not an integer number of cells")
    return int(round(n))


@dataclass
class GridMask:
    """Rasterized scene. Arrays are indexed ``[i, j]``."""

    cls: np.ndarray
    jet: np.ndarray
    groups: dict
    ground: np.ndarray
    chamber: np.ndarray
    h: float
    boundaries: tuple
    orientation: Orientation
    axis_index: int
    tip_index: int
    back_row: int
    source_cells: tuple = ()
    thickness: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.cls.shape

    def copy(self) -> "GridMask":
        return GridMask(
            cls=self.cls.copy(), jet=self.jet.copy(),
            groups={k: v.copy() for k, v in self.groups.items()},
            ground=self.ground.copy(), chamber=self.chamber.copy(), h=self.h,
            boundaries=self.boundaries, orientation=self.orientation,
            axis_index=self.axis_index, tip_index=self.tip_index,
            back_row=self.back_row, source_cells=self.source_cells,
            thickness=self.thickness, meta=dict(self.meta))

    def local_index(self):
        """Lateral (k) and axial (m) local indices of every world cell."""
        nx, ny = self.cls.shape
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        if self.orientation is Orientation.FACE_DOWN:
            return i - self.axis_index, j - self.tip_index
        return j - self.axis_index, self.tip_index - 1 - i

    def group_center(self, name):
        """Centre of a port group in world coordinates (m)."""
        cells = self.groups[name]
        return (cells.mean(axis=0) + 0.5) * self.h


def _frame(orientation):
    # (lateral unit, forward unit) in world coordinates
    if orientation is Orientation.FACE_DOWN:
        return np.array([1.0, 0.0]), np.array([0.0, -1.0])
    return np.array([0.0, 1.0]), np.array([1.0, 0.0])


def _stencil(geom: SamplerGeometry, h: float):
    """Classify the sampler in local (k, m) cells.

    Returns the class array indexed ``[k + K, m]`` with -1 for exterior, the
    chamber-interior flag array, and the index of the first back-wall row.
    """
    ns = geom.nostril_spacing / (2 * h)
    ri = geom.inhale_diameter / (2 * h)
    hs = geom.snout_height / h
    k_inner = math.ceil(geom.chamber_width / (2 * h) - _EPS) - 1
    k_outer = k_inner + WALL_CELLS
    k_channel = math.ceil(ns + ri - _EPS) - 1
    k_tip = k_channel + WALL_CELLS
    n_snout = math.ceil(hs - 0.5 - _EPS)
    back = math.ceil((geom.snout_height + geom.chamber_depth) / h - 0.5 - _EPS)
    n_rows = back + WALL_CELLS
    if k_tip > k_outer:
        raise GeometryError("snout tip is wider than the chamber")

    K = k_outer
    cls = np.full((2 * K + 1, n_rows), -1, dtype=np.int8)
    chamber = np.zeros_like(cls, dtype=bool)
    ks = np.arange(-K, K + 1)
    ak = np.abs(ks)
    in_channel = np.abs(ak - ns) < ri - _EPS
    for m in range(n_rows):
        if m < n_snout:
            half = math.floor(k_tip + (k_outer - k_tip) * (m + 0.5) / hs + _EPS)
            inside = ak <= half
            col = np.where(inside, CellClass.SOLID, -1)
            if m == 0:
                col = np.where(inside & in_channel, CellClass.INHALE, col)
            else:
                col = np.where(inside & in_channel, CellClass.FLUID, col)
                chamber[:, m] = inside & in_channel
        elif m < back:
            col = np.where(ak <= k_outer, CellClass.SOLID, -1)
            col = np.where(ak <= k_inner, CellClass.FLUID, col)
            chamber[:, m] = ak <= k_inner
        else:
            col = np.full_like(ks, CellClass.SOLID)
        cls[:, m] = col

    # exhale ports: outermost snout cell of each row in a band of one exhale
    # diameter centred on the face midpoint
    band = geom.exhale_diameter / (2 * h)
    jets = {}
    for m in range(1, n_snout):
        if abs((m + 0.5) - hs / 2) >= band - _EPS:
            continue
        half = math.floor(k_tip + (k_outer - k_tip) * (m + 0.5) / hs + _EPS)
        for sign in (-1, 1):
            cls[K + sign * half, m] = CellClass.EXHALE
            jets[(sign * half, m)] = sign

    tube_cells = max(1, int(round(geom.tube_width / h)))
    for k in range(k_inner - tube_cells + 1, k_inner + 1):
        cls[K + k, back] = CellClass.TUBE
    return cls, chamber, back, K, jets


def build_scene(geom: SamplerGeometry, pose: ScenePose, domain: DomainSpec,
                source: SourceSpec | None = None) -> GridMask:
    """Rasterize sampler, ground, ports and source disc onto the domain grid."""
    geom.validate()
    pose.validate()
    domain.validate()
    source = source if source is not None else SourceSpec()
    source.validate()
    h = domain.cell_size
    nx, ny = domain.nx, domain.ny
    pose_o = Orientation(pose.orientation)
    if h > geom.exhale_diameter / 3 + _EPS:
        log.warning("cell size %.4g m exceeds exhale_diameter/3; ports are coarsely resolved", h)

    stencil, chamber_l, back, K, exhale_sides = _stencil(geom, h)
    n_rows = stencil.shape[1]
    left, right, bottom, top = domain.boundaries()

    cls = np.zeros((nx, ny), dtype=np.int8)
    ground = np.zeros((nx, ny), dtype=bool)
    if bottom is Boundary.SOLID:
        ground[:, 0] = True
    if top is Boundary.SOLID:
        ground[:, -1] = True
    if left is Boundary.SOLID:
        ground[0, :] = True
    if right is Boundary.SOLID:
        ground[-1, :] = True
    cls[ground] = CellClass.SOLID
    floor = 1 if bottom is Boundary.SOLID else 0

    if pose_o is Orientation.FACE_DOWN:
        axis = nx // 2
        tip = floor + int(round(pose.elevation / h))
        source_xy = ((axis + 0.5) * h, (tip + n_rows) * h + source.offset)
    else:
        axis = floor + K
        span = n_rows * h + source.offset + source.radius
        tip = int(round((domain.width - span) / (2 * h))) + n_rows
        source_xy = (tip * h + source.offset, (axis + 0.5) * h)

    lat, fwd = _frame(pose_o)
    jet = np.zeros((nx, ny, 2))
    chamber = np.zeros((nx, ny), dtype=bool)
    kk, mm = np.nonzero(stencil >= 0)
    if pose_o is Orientation.FACE_DOWN:
        wi, wj = axis + (kk - K), tip + mm
    else:
        wi, wj = tip - 1 - mm, axis + (kk - K)
    if wi.min() < 1 or wj.min() < 0 or wi.max() > nx - 2 or wj.max() > ny - 2:
        raise DomainTooSmall("sampler does not fit inside the domain")
    for a, b, ci, cj in zip(kk, mm, wi, wj):
        c = stencil[a, b]
        if ground[ci, cj]:
            if c in (CellClass.INHALE, CellClass.EXHALE, CellClass.TUBE):
                raise PortBlocked(f"port cell ({ci}, {cj}) lies inside a solid boundary")
            raise DomainTooSmall(f"sampler cell ({ci}, {cj}) lies inside a solid boundary")
        cls[ci, cj] = c
        chamber[ci, cj] = chamber_l[a, b]
        k = a - K
        if c == CellClass.INHALE:
            jet[ci, cj] = -fwd
        elif c == CellClass.EXHALE:
            d = exhale_sides[(k, b)] * math.cos(geom.exhale_angle) * lat \
                + math.sin(geom.exhale_angle) * fwd
            jet[ci, cj] = d

    # logical port groups
    k_all, m_all = _local(pose_o, axis, tip, nx, ny)
    groups = {}
    for name, c, sign in (("inhale_left", CellClass.INHALE, -1),
                          ("inhale_right", CellClass.INHALE, 1),
                          ("exhale_left", CellClass.EXHALE, -1),
                          ("exhale_right", CellClass.EXHALE, 1)):
        sel = (cls == c) & (np.sign(k_all) == sign)
        groups[name] = np.argwhere(sel)
    groups["tube"] = np.argwhere(cls == CellClass.TUBE)
    for name, cells in groups.items():
        if len(cells) == 0:
            raise ResolutionTooCoarse(f"port group {name} rasterized to zero cells")

    src = _source_cells(source_xy, source.radius, h, nx, ny)
    for ci, cj in src:
        if (ci < 1 or cj < 1 or ci > nx - 2 or cj > ny - 2
                or cls[ci, cj] != CellClass.FLUID or ground[ci, cj]):
            raise DomainTooSmall("source disc does not fit strictly inside the fluid domain")

    mask = GridMask(
        cls=cls, jet=jet, groups=groups, ground=ground, chamber=chamber, h=h,
        boundaries=(left, right, bottom, top), orientation=pose_o,
        axis_index=axis, tip_index=tip, back_row=back,
        source_cells=tuple(src), thickness=domain.thickness,
        meta={"elevation_cells": tip - floor if pose_o is Orientation.FACE_DOWN else 0,
              "source_center": source_xy})
    _check_ports(mask)
    return mask


def _local(orientation, axis, tip, nx, ny):
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    if orientation is Orientation.FACE_DOWN:
        return i - axis, j - tip
    return j - axis, tip - 1 - i


def _source_cells(center, radius, h, nx, ny):
    cx, cy = center
    i0 = int(math.floor((cx - radius) / h)) - 1
    i1 = int(math.ceil((cx + radius) / h)) + 1
    j0 = int(math.floor((cy - radius) / h)) - 1
    j1 = int(math.ceil((cy + radius) / h)) + 1
    cells = []
    best, best_d = None, math.inf
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            d = math.hypot((i + 0.5) * h - cx, (j + 0.5) * h - cy)
            if d <= radius + _EPS * h:
                cells.append((i, j))
            if d < best_d - _EPS * h:
                best, best_d = (i, j), d
    if not cells:
        cells = [best]
    for i, j in cells:
        if not (0 <= i < nx and 0 <= j < ny):
            raise DomainTooSmall("source disc lies outside the domain")
    return cells


def _neighbours(i, j, nx, ny):
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        a, b = i + di, j + dj
        if 0 <= a < nx and 0 <= b < ny:
            yield a, b


def _check_ports(mask: GridMask):
    nx, ny = mask.shape
    for ci, cj in np.argwhere((mask.cls == CellClass.INHALE) | (mask.cls == CellClass.EXHALE)):
        if not any(mask.cls[a, b] == CellClass.FLUID for a, b in _neighbours(ci, cj, nx, ny)):
            raise PortBlocked(f"port cell ({ci}, {cj}) has no fluid neighbour")


def mirror_check(mask: GridMask) -> bool:
    """True if cell classes are mirror-symmetric about the snout axis.

    The tube outlet is deliberately off-centre, so it is compared as the wall
    it is cut into. Boundary solid cells (ground) are ignored.
    """
    cls = np.where(mask.cls == CellClass.TUBE, CellClass.SOLID, mask.cls)
    if mask.orientation is Orientation.FACE_DOWN:
        cls, ground, c = cls, mask.ground, mask.axis_index
    else:
        cls, ground, c = cls.T, mask.ground.T, mask.axis_index
    n = min(c, cls.shape[0] - 1 - c)
    lo = cls[c - n:c][::-1]
    hi = cls[c + 1:c + n + 1]
    keep = ~(ground[c - n:c][::-1] | ground[c + 1:c + n + 1])
    return bool(np.array_equal(lo[keep], hi[keep]))
