import numpy as np
import pytest

from gcmi.model import (
    Grid3D,
    Inclusion,
    MediumModel,
    ScalarField,
    SceneSpec,
    TimeSeriesCube,
    build_grid,
    rasterize_scene,
)


class TestBuildGrid:
    def test_reference_box_node_counts(self):
        g = build_grid([(-0.5, 0.5), (-0.5, 0.5), (-0.3, 0.3)], 0.02)
        assert g.shape == (51, 51, 31)

    def test_unit_cube_coarse(self):
        g = build_grid([(0, 1), (0, 1), (0, 1)], 0.5)
        assert g.shape == (3, 3, 3)

    def test_zero_spacing_rejected(self):
        with pytest.raises(ValueError):
            build_grid([(0, 1), (0, 1), (0, 1)], 0.0)

    def test_non_multiple_extent_rejected(self):
        with pytest.raises(ValueError, match="integer multiple"):
            build_grid([(0, 1), (0, 1), (0, 0.95)], 0.2)

    def test_node_coords_exact(self):
        g = build_grid([(-0.4, 0.4), (-0.4, 0.4), (-0.2, 0.04)], 0.02)
        # coordinate identity: origin + index * spacing, bit-exact
        assert g.node_coords(3, 5, 7) == (
            -0.4 + 3 * 0.02, -0.4 + 5 * 0.02, -0.2 + 7 * 0.02,
        )
        assert g.z[0] == -0.2

    def test_index_box_round_trip(self):
        g = build_grid([(-0.5, 0.5), (-0.5, 0.5), (-0.3, 0.3)], 0.02)
        box = g.index_box((-0.4, -0.4, -0.2), (0.4, 0.4, 0.04))
        assert box.shape == (41, 41, 13)
        sub = box.subgrid(g)
        assert sub.origin == (-0.4, -0.4, -0.2)
        with pytest.raises(ValueError):
            g.index_of(0.013, 0)  # off-node coordinate


class TestScalarField:
    def test_shape_checked(self):
        g = build_grid([(0, 1), (0, 1), (0, 1)], 0.5)
        with pytest.raises(ValueError):
            ScalarField(g, np.zeros((2, 3, 3)))

    def test_finite_checked(self):
        g = build_grid([(0, 1), (0, 1), (0, 1)], 0.5)
        vals = np.zeros(g.shape)
        vals[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            ScalarField(g, vals)

    def test_restrict(self):
        g = build_grid([(0, 1), (0, 1), (0, 1)], 0.25)
        f = ScalarField(g, np.arange(g.n_nodes, dtype=float).reshape(g.shape))
        box = g.index_box((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))
        sub = f.restrict(box)
        assert sub.values.shape == (3, 3, 3)
        assert sub.values[0, 0, 0] == f.values[1, 1, 1]


class TestRasterize:
    def setup_method(self):
        self.grid = build_grid([(-0.5, 0.5), (-0.5, 0.5), (-0.3, 0.3)], 0.02)
        self.box = self.grid.index_box((-0.4, -0.4, -0.2), (0.4, 0.4, 0.04))

    def test_empty_scene_homogeneous(self):
        med = rasterize_scene(SceneSpec(), self.grid)
        assert np.all(med.values == 1.0)

    def test_sphere_inside_outside(self):
        inc = Inclusion("sphere", (0.0, 0.0, -0.1), (0.04,), 4.0)
        med = rasterize_scene(SceneSpec(inclusions=(inc,)), self.grid, self.box)
        g = self.grid
        center = (g.index_of(0.0, 0), g.index_of(0.0, 1), g.index_of(-0.1, 2))
        assert med.values[center] == 4.0
        far = (g.index_of(0.2, 0), g.index_of(0.2, 1), g.index_of(-0.1, 2))
        assert med.values[far] == 1.0

    def test_overlap_last_writer_wins(self):
        box = Inclusion("box", (0.0, 0.0, -0.1), (0.1, 0.1, 0.1), 4.0)
        ball = Inclusion("sphere", (0.0, 0.0, -0.1), (0.03,), 25.0)
        med = rasterize_scene(SceneSpec(inclusions=(box, ball)), self.grid, self.box)
        g = self.grid
        center = (g.index_of(0.0, 0), g.index_of(0.0, 1), g.index_of(-0.1, 2))
        edge = (g.index_of(0.04, 0), g.index_of(0.0, 1), g.index_of(-0.1, 2))
        assert med.values[center] == 25.0
        assert med.values[edge] == 4.0

    def test_inclusion_outside_box_rejected(self):
        inc = Inclusion("box", (0.45, 0.0, -0.1), (0.2, 0.1, 0.1), 4.0)
        with pytest.raises(ValueError, match="outside"):
            rasterize_scene(SceneSpec(inclusions=(inc,)), self.grid, self.box)

    def test_bounds_always_satisfied(self):
        inc = Inclusion("cylinder", (0.0, 0.0, -0.1), (0.05, 0.08), 25.0)
        med = rasterize_scene(SceneSpec(inclusions=(inc,)), self.grid, self.box)
        assert med.values.min() >= med.eps_lower
        assert med.values.max() <= med.eps_upper

    def test_eps_outside_bounds_rejected(self):
        inc = Inclusion("sphere", (0.0, 0.0, -0.1), (0.04,), 40.0)
        with pytest.raises(ValueError, match="outside"):
            rasterize_scene(SceneSpec(inclusions=(inc,)), self.grid, self.box)


class TestCube:
    def test_lattice_defaults_centered(self):
        cube = TimeSeriesCube(np.zeros((5, 5, 10)), dt=0.01, dx=0.02, dy=0.02)
        assert cube.x[2] == 0.0
        assert cube.times[0] == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeSeriesCube(np.zeros((5, 5)), dt=0.01, dx=0.02, dy=0.02)
        with pytest.raises(ValueError):
            TimeSeriesCube(np.zeros((5, 5, 10)), dt=-1.0, dx=0.02, dy=0.02)


class TestMediumModel:
    def test_bounds_enforced(self):
        g = build_grid([(0, 1), (0, 1), (0, 1)], 0.5)
        with pytest.raises(ValueError):
            MediumModel(ScalarField(g, 0.5 * np.ones(g.shape)), 1.0, 25.0)
