"""Grids, fields, scenes and recording cubes shared by all solver stages.

Unit conventions used throughout the package:

* lengths are in meters;
* time is scaled so that the wave speed in the reference medium
  (relative permittivity 1) equals 1, i.e. one time unit is one meter
  of travel in air;
* permittivity values are dimensionless relative permittivities.

All containers here are immutable after construction and safe to share
across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Grid3D",
    "ScalarField",
    "MediumModel",
    "TimeSeriesCube",
    "Inclusion",
    "SceneSpec",
    "IndexBox",
    "build_grid",
    "rasterize_scene",
]

_COORD_TOL = 1e-9


@dataclass(frozen=True)
class Grid3D:
    """Axis-aligned uniform node lattice.

    Node ``(i, j, k)`` sits at ``origin + (i*dx, j*dy, k*dz)`` exactly.
    """

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if min(self.dx, self.dy, self.dz) <= 0.0:
            raise ValueError("grid spacings must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    def axis(self, dim: int) -> np.ndarray:
        """Node coordinates along dimension ``dim`` (0=x, 1=y, 2=z)."""
        n = self.shape[dim]
        d = self.spacing[dim]
        return self.origin[dim] + d * np.arange(n)

    @property
    def x(self) -> np.ndarray:
        return self.axis(0)

    @property
    def y(self) -> np.ndarray:
        return self.axis(1)

    @property
    def z(self) -> np.ndarray:
        return self.axis(2)

    def extent(self, dim: int) -> tuple[float, float]:
        a = self.axis(dim)
        return (float(a[0]), float(a[-1]))

    def node_coords(self, i: int, j: int, k: int) -> tuple[float, float, float]:
        return (
            self.origin[0] + i * self.dx,
            self.origin[1] + j * self.dy,
            self.origin[2] + k * self.dz,
        )

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    def index_of(self, coord: float, dim: int) -> int:
        """Index of the node at ``coord`` along ``dim``; rejects off-node coords."""
        d = self.spacing[dim]
        raw = (coord - self.origin[dim]) / d
        idx = int(round(raw))
        if abs(raw - idx) > _COORD_TOL / d or not (0 <= idx < self.shape[dim]):
            raise ValueError(f"coordinate {coord} is not a grid node on axis {dim}")
        return idx

    def index_box(self, lo: Sequence[float], hi: Sequence[float]) -> "IndexBox":
        """Index box spanning the node-aligned physical box [lo, hi]."""
        los = tuple(self.index_of(lo[d], d) for d in range(3))
        his = tuple(self.index_of(hi[d], d) for d in range(3))
        return IndexBox(los, his)


@dataclass(frozen=True)
class IndexBox:
    """Inclusive node-index box ``lo[d] .. hi[d]`` inside some grid."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self) -> None:
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError("index box is empty")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h + 1) for l, h in zip(self.lo, self.hi))

    def subgrid(self, grid: Grid3D) -> Grid3D:
        nx, ny, nz = self.shape
        return Grid3D(
            nx, ny, nz, grid.dx, grid.dy, grid.dz,
            origin=grid.node_coords(*self.lo),
        )


@dataclass(frozen=True)
class ScalarField:
    """One real value per node of a :class:`Grid3D`.

    ``values[i, j, k]`` indexes (x, y, z); the z axis is contiguous in
    memory, matching the stencil sweep direction of the solvers.
    """

    grid: Grid3D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def full(cls, grid: Grid3D, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def restrict(self, box: IndexBox) -> "ScalarField":
        return ScalarField(box.subgrid(self.grid), self.values[box.slices()].copy())


@dataclass(frozen=True)
class MediumModel:
    """Relative permittivity field with admissible bounds.

    The medium is homogeneous (eps = 1) outside the inversion box; scenes
    are rasterized so that inclusions never touch the exterior region.
    """

    field: ScalarField
    eps_lower: float = 1.0
    eps_upper: float = 25.0

    def __post_init__(self) -> None:
        v = self.field.values
        if self.eps_lower > self.eps_upper:
            raise ValueError("eps_lower > eps_upper")
        if v.min() < self.eps_lower - 1e-12 or v.max() > self.eps_upper + 1e-12:
            raise ValueError(
                f"permittivity range [{v.min()}, {v.max()}] outside "
                f"[{self.eps_lower}, {self.eps_upper}]"
            )

    @property
    def grid(self) -> Grid3D:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values


@dataclass(frozen=True)
class TimeSeriesCube:
    """Detector-plane recordings u(x, y, t) on a uniform lattice.

    ``values[ix, iy, it]``; detectors are spaced ``dx`` by ``dy`` and
    centered on x = y = 0 unless an origin is supplied. Sample ``it``
    is at time ``t0 + it*dt``.
    """

    values: np.ndarray
    dt: float
    dx: float
    dy: float
    plane_z: float = 0.0
    t0: float = 0.0
    x0: float | None = None
    y0: float | None = None

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 3:
            raise ValueError("cube values must be 3-D (nx, ny, nt)")
        if not np.all(np.isfinite(v)):
            raise ValueError("cube contains non-finite values")
        if self.dt <= 0 or self.dx <= 0 or self.dy <= 0:
            raise ValueError("cube steps must be positive")
        object.__setattr__(self, "values", v)
        if self.x0 is None:
            object.__setattr__(self, "x0", -0.5 * (v.shape[0] - 1) * self.dx)
        if self.y0 is None:
            object.__setattr__(self, "y0", -0.5 * (v.shape[1] - 1) * self.dy)

    @property
    def nxd(self) -> int:
        return self.values.shape[0]

    @property
    def nyd(self) -> int:
        return self.values.shape[1]

    @property
    def nt(self) -> int:
        return self.values.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nxd)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.nyd)

    def with_values(self, values: np.ndarray, **kw) -> "TimeSeriesCube":
        return replace(self, values=values, **kw)


@dataclass(frozen=True)
class Inclusion:
    """One scatterer: an axis-aligned box, a sphere, or a z-axis cylinder.

    ``size`` is (sx, sy, sz) for a box, (radius,) for a sphere and
    (radius, height) for a cylinder; ``position`` is the center.
    """

    shape: str
    position: tuple[float, float, float]
    size: tuple[float, ...]
    eps: float

    def __post_init__(self) -> None:
        if self.shape not in ("box", "sphere", "cylinder"):
            raise ValueError(f"unknown inclusion shape {self.shape!r}")
        need = {"box": 3, "sphere": 1, "cylinder": 2}[self.shape]
        if len(self.size) != need:
            raise ValueError(f"{self.shape} needs {need} size entries")
        if any(s <= 0 for s in self.size):
            raise ValueError("inclusion sizes must be positive")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.position, dtype=float)
        if self.shape == "box":
            half = 0.5 * np.asarray(self.size, dtype=float)
        elif self.shape == "sphere":
            half = np.full(3, self.size[0])
        else:
            r, hgt = self.size
            half = np.array([r, r, 0.5 * hgt])
        return c - half, c + half

    def mask(self, grid: Grid3D) -> np.ndarray:
        X, Y, Z = grid.meshgrid()
        cx, cy, cz = self.position
        if self.shape == "box":
            sx, sy, sz = self.size
            return (
                (np.abs(X - cx) <= 0.5 * sx + _COORD_TOL)
                & (np.abs(Y - cy) <= 0.5 * sy + _COORD_TOL)
                & (np.abs(Z - cz) <= 0.5 * sz + _COORD_TOL)
            )
        if self.shape == "sphere":
            r = self.size[0]
            return (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= r**2 + _COORD_TOL
        r, hgt = self.size
        return ((X - cx) ** 2 + (Y - cy) ** 2 <= r**2 + _COORD_TOL) & (
            np.abs(Z - cz) <= 0.5 * hgt + _COORD_TOL
        )


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene: background medium plus a list of inclusions.

    Later inclusions overwrite earlier ones where they overlap. The
    source plane ``z0`` must stay clear of the inversion box.
    """

    inclusions: tuple[Inclusion, ...] = ()
    background_eps: float = 1.0
    source_z0: float = 0.2
    omega: float = 30.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if self.background_eps <= 0:
            raise ValueError("background permittivity must be positive")
        if self.omega <= 0:
            raise ValueError("waveform angular frequency must be positive")


def build_grid(
    extents: Sequence[tuple[float, float]],
    spacing: float | Sequence[float],
) -> Grid3D:
    """Uniform grid covering the physical box ``extents``.

    Each extent must be an exact integer multiple of the corresponding
    spacing; node coordinates are then reproducible bit-exactly from
    the origin and spacing alone.
    """
    if np.isscalar(spacing):
        spacing = (float(spacing),) * 3
    spacing = tuple(float(s) for s in spacing)
    if len(extents) != 3 or len(spacing) != 3:
        raise ValueError("need three extents and three spacings")
    counts = []
    for (lo, hi), d in zip(extents, spacing):
        if d <= 0:
            raise ValueError("spacing must be positive")
        length = hi - lo
        if length <= 0:
            raise ValueError("extents must have positive length")
        n_cells = length / d
        if abs(n_cells - round(n_cells)) > 1e-9 * max(1.0, abs(n_cells)):
            raise ValueError(
                f"extent {lo}..{hi} is not an integer multiple of spacing {d}"
            )
        counts.append(int(round(n_cells)) + 1)
    origin = tuple(float(e[0]) for e in extents)
    return Grid3D(counts[0], counts[1], counts[2], *spacing, origin=origin)


def rasterize_scene(
    scene: SceneSpec,
    grid: Grid3D,
    inversion_box: IndexBox | None = None,
    eps_lower: float = 1.0,
    eps_upper: float = 25.0,
) -> MediumModel:
    """Sample a scene onto a grid: inclusion value inside each shape,
    background elsewhere, last inclusion winning on overlap.

    When ``inversion_box`` is given, every inclusion must fit inside it
    (the medium has to stay homogeneous outside the inversion region).
    """
    values = np.full(grid.shape, float(scene.background_eps))
    if inversion_box is not None:
        box_lo = np.asarray(grid.node_coords(*inversion_box.lo))
        box_hi = np.asarray(grid.node_coords(*inversion_box.hi))
    for inc in scene.inclusions:
        if not (eps_lower - 1e-12 <= inc.eps <= eps_upper + 1e-12):
            raise ValueError(f"inclusion eps {inc.eps} outside [{eps_lower}, {eps_upper}]")
        if inversion_box is not None:
            lo, hi = inc.bounds()
            if np.any(lo < box_lo - _COORD_TOL) or np.any(hi > box_hi + _COORD_TOL):
                raise ValueError("inclusion extends outside the inversion box")
        m = inc.mask(grid)
        values[m] = inc.eps
    values = np.clip(values, eps_lower, eps_upper)
    return MediumModel(ScalarField(grid, values), eps_lower, eps_upper)
