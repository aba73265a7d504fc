"""Pseudo-frequency machinery: Laplace transforms of time data and the
derived quantities used by the layer-stripping inversion.

For a recorded field u and excitation transform ft(s), the working
quantities are

* ``w(x, s) = L(u)(x, s) / ft(s)``, positive wherever the theory holds;
* ``v = ln(w) / s**2`` and its s-derivative ``q = dv/ds``;
* the tail ``V(x) = ln w(x, s_bar) / s_bar**2`` at the top frequency;
* boundary data ``psi = d/ds [ln(phi)/s**2]`` with ``phi`` the
  transformed boundary traces.

The transform is never inverted. All operations are pure functions of
immutable inputs and parallelize trivially over s and over nodes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .forward import FACE_NAMES, BoundaryTraces, Waveform
from .model import Grid3D, IndexBox, ScalarField

__all__ = [
    "PseudoFrequencyGrid",
    "PseudoFreqField",
    "BoundaryData",
    "laplace_transform",
    "tilde_f",
    "compute_w0",
    "v0_analytic",
    "psi0_analytic",
    "w_from_timedata",
    "psi_from_boundary",
    "tail_from_w",
    "complete_boundary_data",
    "helmholtz_residual",
]

BACKSCATTER_FACE = "z_hi"

_ROLES = ("w", "v", "q", "V", "p")


@dataclass(frozen=True)
class PseudoFrequencyGrid:
    """Descending pseudo-frequency ladder s_bar = s_0 > s_1 > ... > s_N.

    The ladder is extended by one step beyond each end when boundary
    data are differentiated in s.
    """

    s_under: float = 7.0
    s_bar: float = 9.0
    h: float = 0.05

    def __post_init__(self) -> None:
        if not (self.s_bar > self.s_under > 0.0):
            raise ValueError("need s_bar > s_under > 0")
        if self.h <= 0:
            raise ValueError("step h must be positive")
        n = (self.s_bar - self.s_under) / self.h
        if abs(n - round(n)) > 1e-9:
            raise ValueError("(s_bar - s_under) must be an integer multiple of h")

    @property
    def n_layers(self) -> int:
        return int(round((self.s_bar - self.s_under) / self.h))

    @property
    def s_values(self) -> np.ndarray:
        """s_0 .. s_N, descending."""
        return self.s_bar - self.h * np.arange(self.n_layers + 1)

    @property
    def s_extended(self) -> np.ndarray:
        """Ladder with one extra step beyond each end (for d/ds)."""
        return self.s_bar + self.h - self.h * np.arange(self.n_layers + 3)

    def layer_bounds(self, n: int) -> tuple[float, float]:
        """(s_n, s_{n-1}) for layer ``n`` in 1..N."""
        if not 1 <= n <= self.n_layers:
            raise ValueError(f"layer {n} outside 1..{self.n_layers}")
        s = self.s_values
        return float(s[n]), float(s[n - 1])


@dataclass(frozen=True)
class PseudoFreqField:
    """Scalar field tagged with its pseudo frequency and role.

    Fields in the ``w`` role must be strictly positive.
    """

    grid: Grid3D
    s: float
    values: np.ndarray
    role: str = "w"

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.shape != self.grid.shape:
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        if self.role == "w" and v.min() <= 0.0:
            raise ValueError("w-role field must be strictly positive")
        object.__setattr__(self, "values", v)

    def as_scalar_field(self) -> ScalarField:
        return ScalarField(self.grid, self.values)


def laplace_transform(series: np.ndarray, dt: float, s: float, t0: float = 0.0):
    """Trapezoid-rule Laplace transform along the last axis.

    The record is assumed effectively zero by its end; the quadrature
    error is bounded by the refined-step oracle in the tests.
    """
    if s <= 0:
        raise ValueError("pseudo frequency s must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    series = np.asarray(series, dtype=np.float64)
    nt = series.shape[-1]
    t = t0 + dt * np.arange(nt)
    wgt = np.full(nt, dt)
    wgt[0] = 0.5 * dt
    wgt[-1] = 0.5 * dt
    kernel = wgt * np.exp(-s * t)
    return series @ kernel


def tilde_f(w: Waveform, s: float) -> float:
    """Closed-form transform of the cosine burst:
    ``2*omega*s*(1 - exp(-2*pi*s/omega)) / (s**2 + omega**2)``.

    Aborts when the value is too small to divide by safely.
    """
    if s <= 0:
        raise ValueError("pseudo frequency s must be positive")
    om = w.omega
    val = 2.0 * om * s * (1.0 - math.exp(-s * w.t1)) / (s * s + om * om)
    if abs(val) < 1e-12:
        raise ArithmeticError(f"waveform transform ~ 0 at s={s}; cannot normalize")
    return val


def compute_w0(z, z0: float, s: float):
    """Free-space plane-source solution ``exp(-s|z - z0|) / (2 s)``."""
    if s <= 0:
        raise ValueError("pseudo frequency s must be positive")
    z = np.asarray(z, dtype=float)
    out = np.exp(-s * np.abs(z - z0)) / (2.0 * s)
    return float(out) if out.ndim == 0 else out


def v0_analytic(z, z0: float, s: float):
    """``ln(w0)/s**2 = -(s|z - z0| + ln 2s)/s**2``, the homogeneous v."""
    z = np.asarray(z, dtype=float)
    out = -(s * np.abs(z - z0) + math.log(2.0 * s)) / s**2
    return float(out) if out.ndim == 0 else out


def psi0_analytic(z, z0: float, s: float):
    """d/ds of :func:`v0_analytic`:
    ``|z-z0|/s**2 - 1/s**3 + 2 ln(2s)/s**3``."""
    z = np.asarray(z, dtype=float)
    r = np.abs(z - z0)
    out = r / s**2 - 1.0 / s**3 + 2.0 * math.log(2.0 * s) / s**3
    return float(out) if out.ndim == 0 else out


def _positivity_guard(values: np.ndarray, what: str, clamp_floor: float | None):
    n_bad = int(np.count_nonzero(values <= 0.0))
    if n_bad == 0:
        return values
    if clamp_floor is None:
        raise ValueError(
            f"{what}: {n_bad} non-positive values (positivity of w violated)"
        )
    warnings.warn(
        f"{what}: clamping {n_bad} non-positive values to {clamp_floor}",
        RuntimeWarning,
        stacklevel=3,
    )
    return np.maximum(values, clamp_floor)


def w_from_timedata(source, waveform: Waveform, s: float,
                    clamp_floor: float | None = None):
    """Normalized transform ``w = L(u)/ft(s)`` of recorded time data.

    ``source`` may be a forward-run result carrying accumulated
    transforms (returns a w-role :class:`PseudoFreqField`), a
    :class:`~gcmi.model.TimeSeriesCube` (returns a 2-D detector-lattice
    array) or a plain array with time on the last axis. Non-positive
    values raise unless ``clamp_floor`` is given (then they are clamped
    with a warning).
    """
    ft = tilde_f(waveform, s)
    if hasattr(source, "laplace_fields"):
        try:
            acc = source.laplace_fields[s]
        except KeyError:
            raise KeyError(
                f"run has no accumulated transform at s={s}; "
                f"available: {sorted(source.laplace_fields)}"
            ) from None
        vals = _positivity_guard(acc.values / ft, f"w at s={s}", clamp_floor)
        return PseudoFreqField(acc.grid, s, vals, role="w")
    if hasattr(source, "values") and hasattr(source, "dt"):
        vals = laplace_transform(source.values, source.dt, s, source.t0) / ft
        return _positivity_guard(vals, f"w at s={s}", clamp_floor)
    arr = np.asarray(source)
    raise TypeError(f"unsupported source of shape {arr.shape} for w_from_timedata")


def tail_from_w(w, s_bar: float) -> PseudoFreqField:
    """Tail ``V = ln(w)/s_bar**2`` from a positive w field."""
    if isinstance(w, PseudoFreqField):
        grid, vals = w.grid, w.values
    elif isinstance(w, ScalarField):
        grid, vals = w.grid, w.values
    else:
        raise TypeError("tail_from_w expects a field")
    if vals.min() <= 0.0:
        raise ValueError("tail requires strictly positive w")
    return PseudoFreqField(grid, s_bar, np.log(vals) / s_bar**2, role="V")


@dataclass
class BoundaryData:
    """Per-face boundary data on the pseudo-frequency ladder.

    ``psi[face]`` has shape ``(n1, n2, N+1)`` over the descending ladder
    s_0..s_N; ``psi_n[face]`` has shape ``(n1, n2, N)`` holding the
    per-layer midpoint averages. ``v_prop`` is the tail of the measured
    (propagated) data on the backscatter face, used by the stopping
    rule. ``provenance`` records which faces are measured versus
    completed from the homogeneous reference.
    """

    grid: Grid3D
    box: IndexBox
    sgrid: PseudoFrequencyGrid
    psi: dict[str, np.ndarray]
    psi_n: dict[str, np.ndarray]
    v_prop: np.ndarray
    provenance: dict[str, str]

    def dirichlet_layer(self, n: int) -> np.ndarray:
        """Assemble psi_n of layer ``n`` onto a full inversion-grid array
        (only boundary entries are meaningful). The backscatter face is
        written last so measured data win on shared edges."""
        if not 1 <= n <= self.sgrid.n_layers:
            raise ValueError(f"layer {n} out of range")
        shape = self.box.shape
        g = np.zeros(shape)
        j = n - 1
        order = [f for f in FACE_NAMES if f != BACKSCATTER_FACE] + [BACKSCATTER_FACE]
        for face in order:
            vals = self.psi_n[face][..., j]
            if face == "x_lo":
                g[0, :, :] = vals
            elif face == "x_hi":
                g[-1, :, :] = vals
            elif face == "y_lo":
                g[:, 0, :] = vals
            elif face == "y_hi":
                g[:, -1, :] = vals
            elif face == "z_lo":
                g[:, :, 0] = vals
            else:
                g[:, :, -1] = vals
        return g

    def psi_at_s_bar(self) -> np.ndarray:
        """Full-grid boundary array of psi(., s_bar) (index 0 of the ladder)."""
        shape = self.box.shape
        g = np.zeros(shape)
        order = [f for f in FACE_NAMES if f != BACKSCATTER_FACE] + [BACKSCATTER_FACE]
        for face in order:
            vals = self.psi[face][..., 0]
            if face == "x_lo":
                g[0, :, :] = vals
            elif face == "x_hi":
                g[-1, :, :] = vals
            elif face == "y_lo":
                g[:, 0, :] = vals
            elif face == "y_hi":
                g[:, -1, :] = vals
            elif face == "z_lo":
                g[:, :, 0] = vals
            else:
                g[:, :, -1] = vals
        return g


def psi_from_boundary(
    traces: BoundaryTraces,
    waveform: Waveform,
    sgrid: PseudoFrequencyGrid,
    reject_fraction: float = 0.01,
) -> BoundaryData:
    """Boundary data psi on the ladder from time traces on the six faces.

    phi = L(g)/ft is evaluated on the ladder extended one step beyond
    each end; psi is the central difference of ln(phi)/s**2 in s and
    psi_n the midpoint average over each layer. Nodes with non-positive
    phi are clamped and counted; more than ``reject_fraction`` of bad
    nodes aborts.
    """
    s_ext = sgrid.s_extended
    psi_faces: dict[str, np.ndarray] = {}
    psi_n_faces: dict[str, np.ndarray] = {}
    n_bad_total = 0
    n_nodes_total = 0
    v_prop = None
    for face in FACE_NAMES:
        tr = traces.faces[face]
        phis = np.empty(tr.shape[:-1] + (s_ext.size,))
        for k, s in enumerate(s_ext):
            phis[..., k] = laplace_transform(tr, traces.dt, s) / tilde_f(waveform, s)
        bad = phis <= 0.0
        n_bad = int(bad.sum())
        if n_bad:
            n_bad_total += n_bad
            tiny = max(np.abs(phis).max() * 1e-14, 1e-300)
            phis = np.where(bad, tiny, phis)
        n_nodes_total += phis.size
        lnphi = np.log(phis) / s_ext[None, None, :] ** 2
        # central difference on the descending ladder: d/ds at s_k
        psi = (lnphi[..., :-2] - lnphi[..., 2:]) / (2.0 * sgrid.h)
        psi_faces[face] = psi
        psi_n_faces[face] = 0.5 * (psi[..., 1:] + psi[..., :-1])
        if face == BACKSCATTER_FACE:
            v_prop = lnphi[..., 1]  # ln(phi(s_bar))/s_bar^2
    frac = n_bad_total / max(n_nodes_total, 1)
    if frac > reject_fraction:
        raise ValueError(
            f"{frac:.2%} of boundary transform values non-positive "
            f"(limit {reject_fraction:.2%}); data unusable"
        )
    if n_bad_total:
        warnings.warn(
            f"clamped {n_bad_total} non-positive boundary transform values "
            f"({frac:.3%} of nodes)",
            RuntimeWarning,
            stacklevel=2,
        )
    provenance = dict(getattr(traces, "provenance", {})) or {
        f: "simulated" for f in FACE_NAMES
    }
    return BoundaryData(
        grid=traces.grid,
        box=traces.box,
        sgrid=sgrid,
        psi=psi_faces,
        psi_n=psi_n_faces,
        v_prop=v_prop,
        provenance=provenance,
    )


def complete_boundary_data(
    measured_face: np.ndarray,
    reference: BoundaryTraces,
) -> BoundaryTraces:
    """Combine one measured backscatter face with five reference faces.

    ``measured_face`` is an ``(nx, ny, nt)`` trace array on the lattice
    of the reference's backscatter face. The result carries provenance
    flags ("measured" vs "completed").
    """
    ref_face = reference.faces[BACKSCATTER_FACE]
    measured_face = np.asarray(measured_face, dtype=np.float64)
    if measured_face.shape != ref_face.shape:
        raise ValueError(
            f"measured face shape {measured_face.shape} != reference "
            f"face shape {ref_face.shape}"
        )
    faces = {k: v.copy() for k, v in reference.faces.items()}
    faces[BACKSCATTER_FACE] = measured_face.copy()
    out = BoundaryTraces(reference.grid, reference.box, reference.dt, faces)
    out.provenance = {
        f: ("measured" if f == BACKSCATTER_FACE else "completed")
        for f in FACE_NAMES
    }
    return out


def helmholtz_residual(
    w: PseudoFreqField,
    eps: np.ndarray,
    z0: float,
    exclude_margin: int = 3,
) -> float:
    """Relative residual of ``lap(w) - s^2 eps w = 0`` on interior nodes.

    Uses the same 7-point discrete Laplacian as the solvers; nodes
    within ``exclude_margin`` of the box faces and the two planes
    around the source are excluded (the delta forcing lives there).
    """
    g = w.grid
    W = w.values
    lap = np.zeros(g.shape)
    lap[1:-1, :, :] += (W[2:, :, :] - 2 * W[1:-1, :, :] + W[:-2, :, :]) / g.dx**2
    lap[:, 1:-1, :] += (W[:, 2:, :] - 2 * W[:, 1:-1, :] + W[:, :-2, :]) / g.dy**2
    lap[:, :, 1:-1] += (W[:, :, 2:] - 2 * W[:, :, 1:-1] + W[:, :, :-2]) / g.dz**2
    rhs = (w.s**2) * eps * W
    res = lap - rhs
    m = exclude_margin
    mask = np.zeros(g.shape, dtype=bool)
    mask[m:-m, m:-m, m:-m] = True
    k_src = g.index_of(z0, 2)
    lo = max(k_src - 2, 0)
    mask[:, :, lo:k_src + 3] = False
    return float(
        np.linalg.norm(res[mask]) / max(np.linalg.norm(rhs[mask]), 1e-300)
    )
