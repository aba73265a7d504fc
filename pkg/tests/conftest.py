"""Shared fixtures: forward runs are expensive, so the reference and
scene runs are computed once per session and reused."""

import numpy as np
import pytest

from gcmi.forward import SimConfig, Waveform, run_fdtd
from gcmi.inversion import InversionGeometry
from gcmi.laplace import PseudoFrequencyGrid, psi_from_boundary
from gcmi.model import Inclusion, SceneSpec, build_grid, rasterize_scene

MEASUREMENT_Z = 0.26
DIRECT_Z = 0.12
SOURCE_Z0 = 0.2


def make_geometry(lateral_bc: str = "neumann") -> InversionGeometry:
    grid = build_grid([(-0.5, 0.5), (-0.5, 0.5), (-0.3, 0.3)], 0.02)
    box = grid.index_box((-0.4, -0.4, -0.2), (0.4, 0.4, 0.04))
    sim = SimConfig(T=1.2, dt=0.0015, source_z0=SOURCE_Z0,
                    bc=(lateral_bc, lateral_bc, "absorbing"))
    return InversionGeometry(grid, box, Waveform(30.0), sim)


STRONG_BOX = Inclusion("box", (0.0, 0.0, -0.045), (0.1, 0.1, 0.1), 4.0)


@pytest.fixture(scope="session")
def geom_clean():
    return make_geometry("neumann")


@pytest.fixture(scope="session")
def geom_mur():
    return make_geometry("absorbing")


def _run(geom, scene):
    medium = rasterize_scene(scene, geom.grid, inversion_box=geom.omega_box)
    return run_fdtd(
        medium, geom.waveform, geom.sim,
        record_planes=(MEASUREMENT_Z, DIRECT_Z),
        boundary_box=geom.omega_box,
        laplace_s=(7.0, 8.0, 9.0),
    )


@pytest.fixture(scope="session")
def ref_run_clean(geom_clean):
    return _run(geom_clean, SceneSpec(source_z0=SOURCE_Z0))


@pytest.fixture(scope="session")
def scene_run_clean(geom_clean):
    return _run(geom_clean, SceneSpec(inclusions=(STRONG_BOX,), source_z0=SOURCE_Z0))


@pytest.fixture(scope="session")
def ref_run_mur(geom_mur):
    return _run(geom_mur, SceneSpec(source_z0=SOURCE_Z0))


@pytest.fixture(scope="session")
def scene_run_mur(geom_mur):
    return _run(geom_mur, SceneSpec(inclusions=(STRONG_BOX,), source_z0=SOURCE_Z0))


@pytest.fixture(scope="session")
def sgrid():
    return PseudoFrequencyGrid(7.0, 9.0, 0.05)


@pytest.fixture(scope="session")
def bdata_ref(ref_run_clean, geom_clean, sgrid):
    return psi_from_boundary(ref_run_clean.boundary, geom_clean.waveform, sgrid)
