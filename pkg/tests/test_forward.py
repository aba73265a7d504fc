import math

import numpy as np
import pytest

from gcmi.forward import (
    SimConfig,
    Waveform,
    cfl_limit,
    incident_wave_1d,
    record_boundary,
    run_fdtd,
    waveform_value,
)
from gcmi.model import SceneSpec, build_grid, rasterize_scene

from conftest import MEASUREMENT_Z, SOURCE_Z0, make_geometry


def solve_1d_reference(dz, dt, z0, zlo, zhi, T, omega, z_rec):
    """Independent 1-D leapfrog for u_tt = u_zz + delta(z-z0) f(t) with
    one-way boundaries; the oracle for plane-wave runs."""
    n = int(round((zhi - zlo) / dz)) + 1
    k_src = int(round((z0 - zlo) / dz))
    k_rec = int(round((z_rec - zlo) / dz))
    nt = int(round(T / dt)) + 1
    t = dt * np.arange(nt)
    t1 = 2 * math.pi / omega
    u_prev = np.zeros(n)
    u_cur = np.zeros(n)
    rec = np.zeros(nt)
    c = (dt - dz) / (dt + dz)
    for it in range(1, nt):
        tau = t[it - 1]
        f = 2 * omega * math.cos(omega * tau) if tau <= t1 else 0.0
        lap = np.zeros(n)
        lap[1:-1] = (u_cur[2:] - 2 * u_cur[1:-1] + u_cur[:-2]) / dz**2
        lap[k_src] += f / dz
        if it == 1:
            u_next = u_cur + 0.5 * dt * dt * lap
        else:
            u_next = 2 * u_cur - u_prev + dt * dt * lap
        u_next[0] = u_cur[1] + c * (u_next[1] - u_cur[0])
        u_next[-1] = u_cur[-2] + c * (u_next[-2] - u_cur[-1])
        u_prev, u_cur = u_cur, u_next
        rec[it] = u_cur[k_rec]
    return t, rec


class TestWaveform:
    def test_value_at_zero(self):
        assert waveform_value(Waveform(30.0), 0.0) == 60.0

    def test_cosine_zero(self):
        w = Waveform(30.0)
        assert abs(waveform_value(w, math.pi / 60.0)) < 1e-12

    def test_zero_after_burst(self):
        w = Waveform(30.0)
        assert waveform_value(w, w.t1 + 1.0) == 0.0

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            waveform_value(Waveform(30.0), -0.1)


class TestCfl:
    def test_limit_value(self):
        g = build_grid([(0, 0.2), (0, 0.2), (0, 0.2)], 0.02)
        med = rasterize_scene(SceneSpec(), g)
        assert cfl_limit(med) == pytest.approx(0.02 / math.sqrt(3.0))

    def test_violation_rejected(self):
        g = build_grid([(0, 0.2), (0, 0.2), (0, 0.2)], 0.02)
        med = rasterize_scene(SceneSpec(), g)
        cfg = SimConfig(T=0.1, dt=0.02, source_z0=0.1)
        with pytest.raises(ValueError, match="CFL"):
            run_fdtd(med, Waveform(), cfg)


@pytest.fixture(scope="module")
def small_run():
    """Plane-wave run on a compact box with symmetric lateral faces."""
    g = build_grid([(-0.2, 0.2), (-0.2, 0.2), (-0.2, 0.2)], 0.02)
    med = rasterize_scene(SceneSpec(), g)
    cfg = SimConfig(T=0.5, dt=0.0015, source_z0=0.1,
                    bc=("neumann", "neumann", "absorbing"))
    res = run_fdtd(med, Waveform(30.0), cfg, record_planes=(0.0,))
    return g, cfg, res


class TestPlaneWaveOracle:
    def test_matches_1d_reference_to_roundoff(self, small_run):
        """The 3-D solver on a laterally uniform problem must reproduce
        the independent 1-D scheme at the same steps exactly."""
        g, cfg, res = small_run
        cube = res.plane_cubes[0.0]
        tr = cube.values[g.nx // 2, g.ny // 2]
        t, ref = solve_1d_reference(0.02, cfg.dt, cfg.source_z0,
                                    -0.2, 0.2, cfg.T, 30.0, 0.0)
        assert np.linalg.norm(tr - ref) <= 1e-9 * np.linalg.norm(ref)

    def test_1d_scheme_converges_to_dalembert(self):
        """High-resolution 1-D oracle vs the closed-form solution: the
        shared kernel converges below 1% (coarser steps stay ordered)."""
        errs = []
        for dz, dt in [(0.005, 0.002), (0.0025, 0.001), (0.00125, 0.0005)]:
            t, rec = solve_1d_reference(dz, dt, 0.2, -0.3, 0.3, 0.45, 30.0, 0.1)
            ref = incident_wave_1d(0.1, t, 0.2, Waveform(30.0))
            errs.append(np.linalg.norm(rec - ref) / np.linalg.norm(ref))
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= 0.01

    def test_causality(self, small_run):
        """No signal before distance over unit speed (minus a tolerance)."""
        g, cfg, res = small_run
        cube = res.plane_cubes[0.0]
        tr = cube.values[g.nx // 2, g.ny // 2]
        t = cube.times
        arrival = abs(0.0 - cfg.source_z0)
        early = tr[t < arrival - 5 * cfg.dt]
        assert np.abs(early).max() <= 1e-8 * np.abs(tr).max()


class TestRunProperties:
    def test_zero_forcing_zero_field(self):
        g = build_grid([(-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1)], 0.02)
        med = rasterize_scene(SceneSpec(), g)

        class Silent(Waveform):
            pass

        silent = Silent(30.0)
        cfg = SimConfig(T=0.2, dt=0.0015, source_z0=0.0)
        import gcmi.forward as fwd

        orig = fwd.waveform_value
        try:
            fwd.waveform_value = lambda w, t: 0.0
            res = run_fdtd(med, silent, cfg, record_planes=(0.04,))
        finally:
            fwd.waveform_value = orig
        assert np.all(res.plane_cubes[0.04].values == 0.0)

    def test_linearity_in_forcing(self):
        """Doubling the waveform amplitude doubles the field."""
        g = build_grid([(-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1)], 0.02)
        med = rasterize_scene(SceneSpec(), g)
        cfg = SimConfig(T=0.3, dt=0.0015, source_z0=0.06)
        r1 = run_fdtd(med, Waveform(30.0), cfg, record_planes=(0.0,))
        import gcmi.forward as fwd

        orig = fwd.waveform_value
        try:
            fwd.waveform_value = lambda w, t: 2.0 * orig(w, t)
            r2 = run_fdtd(med, Waveform(30.0), cfg, record_planes=(0.0,))
        finally:
            fwd.waveform_value = orig
        a = r1.plane_cubes[0.0].values
        b = r2.plane_cubes[0.0].values
        assert np.allclose(2.0 * a, b, rtol=0, atol=1e-12 * np.abs(b).max())

    def test_zero_contrast_inclusion_bit_identical(self):
        from gcmi.model import Inclusion

        g = build_grid([(-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1)], 0.02)
        box = g.index_box((-0.06, -0.06, -0.06), (0.06, 0.06, 0.06))
        cfg = SimConfig(T=0.3, dt=0.0015, source_z0=0.08)
        plain = rasterize_scene(SceneSpec(), g)
        ghost = rasterize_scene(
            SceneSpec(inclusions=(Inclusion("box", (0, 0, 0), (0.04,) * 3, 1.0),)),
            g, box)
        r1 = run_fdtd(plain, Waveform(30.0), cfg, record_planes=(0.04,))
        r2 = run_fdtd(ghost, Waveform(30.0), cfg, record_planes=(0.04,))
        assert np.array_equal(r1.plane_cubes[0.04].values,
                              r2.plane_cubes[0.04].values)

    def test_first_samples_zero(self, ref_run_clean):
        """Zero initial data: the first recorded sample of every trace is 0."""
        for face in ref_run_clean.boundary.faces.values():
            assert np.all(face[..., 0] == 0.0)
        assert np.all(ref_run_clean.plane_cubes[MEASUREMENT_Z].values[..., 0] == 0.0)


class TestRecordBoundary:
    def test_face_bookkeeping(self, ref_run_clean, geom_clean):
        traces = record_boundary(ref_run_clean)
        assert set(traces.faces) == {"x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi"}
        nx, ny, nz = geom_clean.omega_box.shape
        nt = ref_run_clean.times.size
        assert traces.faces["z_hi"].shape == (nx, ny, nt)
        assert traces.faces["x_lo"].shape == (ny, nz, nt)

    def test_backscatter_face_pure_incident(self, ref_run_clean, geom_clean):
        """Homogeneous medium: after subtracting the 1-D incident wave the
        backscatter face holds only discretization noise."""
        g = geom_clean.grid
        face = ref_run_clean.boundary.faces["z_hi"]
        z_face = geom_clean.backscatter_z
        t = ref_run_clean.times
        ref1d = solve_1d_reference(g.dz, geom_clean.sim.dt, SOURCE_Z0,
                                   g.z[0], g.z[-1], geom_clean.sim.T, 30.0, z_face)[1]
        resid = face - ref1d[None, None, :]
        assert np.abs(resid).max() <= 1e-9 * np.abs(face).max()

    def test_box_mismatch_rejected(self, ref_run_clean, geom_clean):
        other = geom_clean.grid.index_box((-0.3, -0.3, -0.2), (0.3, 0.3, 0.04))
        with pytest.raises(ValueError):
            record_boundary(ref_run_clean, other)
