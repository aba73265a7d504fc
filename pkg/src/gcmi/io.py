"""Bit-exact binary file formats and the run-configuration schema.

Cube files (detector-plane recordings) and field files (3-D node
fields) use little-endian headers and float64 payloads so that
write/read round-trips are bit-identical across platforms:

``Cube`` (magic ``GCMC``, version 1)
    magic[4] | version u16 | nxd u32 | nyd u32 | nt u32 |
    dt f64 | dx f64 | dy f64 | plane_z f64 | t0 f64 |
    payload nt*nyd*nxd f64, t-major (t slowest, then y, then x).
    The detector lattice is centered on x = y = 0 by convention.

``Field`` (magic ``GCMF``, version 1)
    magic[4] | version u16 | nx u32 | ny u32 | nz u32 |
    dx f64 | dy f64 | dz f64 | x0 f64 | y0 f64 | z0 f64 |
    payload nx*ny*nz f64 with z running fastest.

Config files are plain ``key = value`` text plus ``inclusion`` lines;
unknown keys are rejected and every run emits a resolved-config echo
that reproduces the run bit-identically when parsed back.
"""

from __future__ import annotations

import io as _io
import struct
from dataclasses import dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np

from .model import Grid3D, Inclusion, ScalarField, SceneSpec, TimeSeriesCube

__all__ = [
    "CUBE_MAGIC",
    "FIELD_MAGIC",
    "FORMAT_VERSION",
    "FileFormatError",
    "write_cube",
    "read_cube",
    "write_field",
    "read_field",
    "RunConfig",
    "ConfigError",
    "parse_config",
    "parse_config_text",
    "format_config",
]

CUBE_MAGIC = b"GCMC"
FIELD_MAGIC = b"GCMF"
FORMAT_VERSION = 1

_CUBE_HEADER = struct.Struct("<4sHIII ddddd".replace(" ", ""))
_FIELD_HEADER = struct.Struct("<4sHIII dddddd".replace(" ", ""))


class FileFormatError(IOError):
    pass


def write_cube(path, cube: TimeSeriesCube) -> None:
    header = _CUBE_HEADER.pack(
        CUBE_MAGIC, FORMAT_VERSION, cube.nxd, cube.nyd, cube.nt,
        cube.dt, cube.dx, cube.dy, cube.plane_z, cube.t0,
    )
    payload = np.ascontiguousarray(
        cube.values.transpose(2, 1, 0), dtype="<f8"
    ).tobytes()
    Path(path).write_bytes(header + payload)


def read_cube(path) -> TimeSeriesCube:
    raw = Path(path).read_bytes()
    if len(raw) < _CUBE_HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, nxd, nyd, nt, dt, dx, dy, plane_z, t0 = _CUBE_HEADER.unpack(
        raw[:_CUBE_HEADER.size]
    )
    if magic != CUBE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported cube version {version}")
    expect = _CUBE_HEADER.size + 8 * nxd * nyd * nt
    if len(raw) != expect:
        raise FileFormatError(
            f"{path}: payload length {len(raw) - _CUBE_HEADER.size} does not "
            f"match header dims {(nxd, nyd, nt)}"
        )
    payload = np.frombuffer(raw, dtype="<f8", offset=_CUBE_HEADER.size)
    values = payload.reshape(nt, nyd, nxd).transpose(2, 1, 0)
    return TimeSeriesCube(
        values.copy(), dt=dt, dx=dx, dy=dy, plane_z=plane_z, t0=t0
    )


def write_field(path, field: ScalarField) -> None:
    g = field.grid
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC, FORMAT_VERSION, g.nx, g.ny, g.nz,
        g.dx, g.dy, g.dz, g.origin[0], g.origin[1], g.origin[2],
    )
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_field(path) -> ScalarField:
    raw = Path(path).read_bytes()
    if len(raw) < _FIELD_HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, nx, ny, nz, dx, dy, dz, x0, y0, z0 = _FIELD_HEADER.unpack(
        raw[:_FIELD_HEADER.size]
    )
    if magic != FIELD_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported field version {version}")
    expect = _FIELD_HEADER.size + 8 * nx * ny * nz
    if len(raw) != expect:
        raise FileFormatError(f"{path}: payload length mismatch")
    payload = np.frombuffer(raw, dtype="<f8", offset=_FIELD_HEADER.size)
    grid = Grid3D(nx, ny, nz, dx, dy, dz, origin=(x0, y0, z0))
    return ScalarField(grid, payload.reshape(nx, ny, nz).copy())


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline, defaulting to the reference setup
    (0.02 m mesh, dt = 0.0015, T = 1.2, omega = 30, s in [7, 9] with
    h = 0.05, lam = 20)."""

    # geometry
    outer_box: tuple[float, ...] = (-0.5, 0.5, -0.5, 0.5, -0.3, 0.3)
    omega_box: tuple[float, ...] = (-0.4, 0.4, -0.4, 0.4, -0.2, 0.04)
    spacing: float = 0.02
    # forward model
    omega: float = 30.0
    T: float = 1.2
    dt: float = 0.0015
    source_z0: float = 0.2
    lateral_bc: str = "absorbing"  # "neumann" for plane-wave-clean runs
    measurement_z: float = 0.26
    # pseudo-frequency ladder
    s_under: float = 7.0
    s_bar: float = 9.0
    h: float = 0.05
    # inversion
    lam: float = 20.0
    mode: str = "test1"
    i_max: int = 0          # 0 = default for the mode (8 / 5)
    tail_mode: str = "direct-s"
    chi_margin: int = 3
    solver_tol: float = 1e-8
    eps_upper: float = 25.0
    gamma: float = 0.0      # 0 = default for the mode (0.7 / 0.6)
    # preprocessing
    beta: float = 0.5
    n_sand: float = 2.0
    eps_sand: float = 4.0
    depth_factor: float = 1.0
    n_exclude: int = 4
    noise_floor: float = 0.05
    # synthetic measurement
    noise: float = 0.0
    seed: int = 0
    calibration_distortion: float = 1.0
    time_zero_offset: float = 0.0
    # experiment description
    scene_kind: str = "in-air"
    sand_surface_z: float = 0.0
    target_name: str = "target"
    true_depth: float = float("nan")
    true_ratio: float = float("nan")
    # scene
    background_eps: float = 1.0
    inclusions: tuple[Inclusion, ...] = ()

    def resolved(self) -> "RunConfig":
        """Fill mode-dependent defaults (i_max, gamma)."""
        out = self
        if self.i_max == 0:
            out = replace(out, i_max=8 if self.mode == "test1" else 5)
        if self.gamma == 0.0:
            out = replace(out, gamma=0.7 if self.mode == "test1" else 0.6)
        return out

    def scene(self) -> SceneSpec:
        return SceneSpec(
            inclusions=self.inclusions,
            background_eps=self.background_eps,
            source_z0=self.source_z0,
            omega=self.omega,
        )


_SCALAR_KEYS = {
    "spacing": float, "omega": float, "T": float, "dt": float,
    "source_z0": float, "lateral_bc": str, "measurement_z": float,
    "s_under": float, "s_bar": float, "h": float,
    "lam": float, "mode": str, "i_max": int, "tail_mode": str,
    "chi_margin": int, "solver_tol": float, "eps_upper": float,
    "gamma": float, "beta": float, "n_sand": float, "eps_sand": float,
    "depth_factor": float, "n_exclude": int, "noise_floor": float,
    "noise": float, "seed": int, "calibration_distortion": float,
    "time_zero_offset": float, "background_eps": float,
    "scene_kind": str, "sand_surface_z": float, "target_name": str,
    "true_depth": float, "true_ratio": float,
}
_BOX_KEYS = ("outer_box", "omega_box")
_INCLUSION_SIZES = {"box": 3, "sphere": 1, "cylinder": 2}


def _parse_inclusion(value: str, errors: list[str]) -> Inclusion | None:
    parts = value.split()
    if not parts:
        errors.append("inclusion: empty specification")
        return None
    shape = parts[0]
    if shape not in _INCLUSION_SIZES:
        errors.append(f"inclusion: unknown shape {shape!r}")
        return None
    n_size = _INCLUSION_SIZES[shape]
    need = 1 + 3 + n_size + 1
    if len(parts) != need:
        errors.append(
            f"inclusion {shape}: expected {need - 1} numbers "
            f"(cx cy cz {'size ' * n_size}eps), got {len(parts) - 1}"
        )
        return None
    try:
        nums = [float(p) for p in parts[1:]]
    except ValueError:
        errors.append(f"inclusion {shape}: non-numeric entry in {value!r}")
        return None
    try:
        return Inclusion(shape, tuple(nums[0:3]), tuple(nums[3:3 + n_size]), nums[-1])
    except ValueError as exc:
        errors.append(f"inclusion {shape}: {exc}")
        return None


def parse_config_text(text: str) -> RunConfig:
    """Parse the key/value + inclusion-list format; an empty file yields
    all defaults. All schema violations are reported together."""
    values: dict = {}
    inclusions: list[Inclusion] = []
    errors: list[str] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "inclusion":
            inc = _parse_inclusion(value, errors)
            if inc is not None:
                inclusions.append(inc)
        elif key in _BOX_KEYS:
            parts = value.split()
            if len(parts) != 6:
                errors.append(f"line {lineno}: {key} needs 6 numbers")
                continue
            try:
                values[key] = tuple(float(p) for p in parts)
            except ValueError:
                errors.append(f"line {lineno}: {key}: non-numeric entry")
        elif key in _SCALAR_KEYS:
            typ = _SCALAR_KEYS[key]
            try:
                values[key] = typ(value)
            except ValueError:
                errors.append(f"line {lineno}: {key}: cannot parse {value!r} as {typ.__name__}")
        else:
            errors.append(f"line {lineno}: unknown key {key!r}")
    if inclusions:
        values["inclusions"] = tuple(inclusions)

    cfg = None
    if not errors:
        try:
            cfg = RunConfig(**values)
        except (TypeError, ValueError) as exc:
            errors.append(str(exc))
    if cfg is not None:
        errors.extend(_validate(cfg))
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def _validate(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.s_bar <= cfg.s_under:
        errors.append(f"s_bar ({cfg.s_bar}) must exceed s_under ({cfg.s_under})")
    if cfg.s_under <= 0:
        errors.append("s_under must be positive")
    if cfg.h <= 0:
        errors.append("h must be positive")
    elif cfg.s_bar > cfg.s_under:
        n = (cfg.s_bar - cfg.s_under) / cfg.h
        if abs(n - round(n)) > 1e-9:
            errors.append("(s_bar - s_under) must be an integer multiple of h")
    if cfg.dt <= 0 or cfg.T <= 0:
        errors.append("dt and T must be positive")
    if cfg.spacing <= 0:
        errors.append("spacing must be positive")
    if cfg.mode not in ("test1", "test2"):
        errors.append(f"mode must be test1 or test2, got {cfg.mode!r}")
    if cfg.tail_mode not in ("direct-s", "time-domain"):
        errors.append(f"tail_mode must be direct-s or time-domain, got {cfg.tail_mode!r}")
    if cfg.lateral_bc not in ("absorbing", "neumann"):
        errors.append(f"lateral_bc must be absorbing or neumann, got {cfg.lateral_bc!r}")
    if cfg.scene_kind not in ("in-air", "sand"):
        errors.append(f"scene_kind must be in-air or sand, got {cfg.scene_kind!r}")
    if cfg.noise < 0:
        errors.append("noise must be non-negative")
    if cfg.lam <= 0:
        errors.append("lam must be positive")
    for key in _BOX_KEYS:
        box = getattr(cfg, key)
        if any(box[2 * d] >= box[2 * d + 1] for d in range(3)):
            errors.append(f"{key}: each (lo, hi) pair needs lo < hi")
    return errors


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    """Canonical echo: parsing it back reproduces the config exactly
    (floats are emitted with repr round-tripping)."""
    lines = []
    for f in dc_fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "inclusions":
            for inc in val:
                nums = " ".join(repr(v) for v in (*inc.position, *inc.size, inc.eps))
                lines.append(f"inclusion = {inc.shape} {nums}")
        elif f.name in _BOX_KEYS:
            lines.append(f"{f.name} = " + " ".join(repr(v) for v in val))
        elif isinstance(val, float):
            lines.append(f"{f.name} = {val!r}")
        else:
            lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"
