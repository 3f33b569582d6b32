import math

import numpy as np
import pytest

from xdhom.errors import CoefficientError, GeometryError, ResolutionError
from xdhom.geometry import (
    CellGeometry,
    HoleSpec,
    build_cell_grid,
    expand_periodic,
    sample_coefficient,
)


def unit_square(hole=None):
    return CellGeometry((1.0, 1.0), hole=hole)


class TestCellGeometry:
    def test_lengths_must_be_positive(self):
        with pytest.raises(GeometryError):
            CellGeometry((1.0, -1.0))

    def test_only_low_dimensions(self):
        with pytest.raises(GeometryError):
            CellGeometry((1.0, 1.0, 1.0))

    def test_hole_requires_2d(self):
        with pytest.raises(GeometryError):
            CellGeometry((1.0,), hole=HoleSpec("box", (0.5,), 0.2))

    def test_ball_hole_exiting_cell_rejected(self):
        # radius 0.6 from the center reaches outside the unit square
        with pytest.raises(GeometryError):
            unit_square(HoleSpec("ball", (0.5, 0.5), 0.6))

    def test_box_hole_touching_boundary_rejected(self):
        with pytest.raises(GeometryError):
            unit_square(HoleSpec("box", (0.5, 0.5), 1.0))

    def test_unknown_hole_shape(self):
        with pytest.raises(GeometryError):
            HoleSpec("triangle", (0.5, 0.5), 0.2)


class TestBuildCellGrid:
    def test_no_hole_full_fluid(self):
        grid = build_cell_grid(unit_square(), 8)
        assert grid.mask.size == 64
        assert grid.mask.all()
        assert grid.fluid_fraction == 1.0
        assert grid.cell_measure == 1.0

    def test_centered_box_hole_exact_fraction(self):
        # hole (0.25, 0.75)^2 aligns with element boundaries at N = 8:
        # 16 of 64 elements are masked out
        grid = build_cell_grid(unit_square(HoleSpec("box", (0.5, 0.5), 0.5)), 8)
        assert np.count_nonzero(~grid.mask) == 16
        assert grid.fluid_fraction == 0.75

    def test_box_fraction_constant_under_refinement(self):
        hole = HoleSpec("box", (0.5, 0.5), 0.5)
        for n in (8, 16, 32, 64):
            grid = build_cell_grid(unit_square(hole), n)
            assert grid.fluid_fraction == 0.75

    def test_ball_fluid_measure_first_order(self):
        hole = HoleSpec("ball", (0.5, 0.5), 0.3)
        exact = 1.0 - math.pi * 0.3**2
        errors = []
        for n in (32, 64, 128, 256):
            grid = build_cell_grid(unit_square(hole), n)
            errors.append(abs(grid.fluid_measure - exact))
        assert all(err <= 4.0 / n for err, n in zip(errors, (32, 64, 128, 256)))
        assert errors[-1] < errors[0]

    def test_resolution_floor(self):
        with pytest.raises(ResolutionError):
            build_cell_grid(unit_square(), 3)

    def test_unresolved_hole(self):
        hole = HoleSpec("ball", (0.52, 0.52), 0.01)
        with pytest.raises(ResolutionError):
            build_cell_grid(unit_square(hole), 8)

    def test_periodic_identification_of_fields(self):
        grid = build_cell_grid(unit_square(), 8)
        field = np.cos(2 * math.pi * grid.node_coordinates()[0])
        out = expand_periodic(field, 2)
        assert out.shape == (9, 9)
        np.testing.assert_array_equal(out[-1], out[0])
        np.testing.assert_array_equal(out[:, -1], out[:, 0])


class TestSampleCoefficient:
    def test_constant_vector(self):
        grid = build_cell_grid(unit_square(), 8)
        P = sample_coefficient((2.0, 3.0), grid)
        assert np.all(P.values[0] == 2.0)
        assert np.all(P.values[1] == 3.0)
        assert P.d0 == 2.0

    def test_two_phase_1d(self):
        grid = build_cell_grid(CellGeometry((1.0,)), 64)
        P = sample_coefficient(
            {"kind": "piecewise", "axis": 0, "breaks": [0.5], "values": [1.0, 4.0]},
            grid,
        )
        assert np.count_nonzero(P.values[0] == 1.0) == 32
        assert np.count_nonzero(P.values[0] == 4.0) == 32
        assert P.d0 == 1.0

    def test_expression_at_centers(self):
        grid = build_cell_grid(CellGeometry((1.0,)), 4)
        P = sample_coefficient({"kind": "expression", "expr": "2 + sin(2*pi*y1)"}, grid)
        expected = [2.0 + math.sin(2 * math.pi * c) for c in (1 / 8, 3 / 8, 5 / 8, 7 / 8)]
        np.testing.assert_allclose(P.values[0], expected, rtol=0, atol=1e-15)

    def test_nonpositive_sample_rejected(self):
        grid = build_cell_grid(CellGeometry((1.0,)), 8)
        with pytest.raises(CoefficientError):
            sample_coefficient({"kind": "expression", "expr": "sin(2*pi*y1)"}, grid)
        with pytest.raises(CoefficientError):
            sample_coefficient(0.0, grid)

    def test_component_count_must_match(self):
        grid = build_cell_grid(unit_square(), 8)
        with pytest.raises(CoefficientError):
            sample_coefficient((1.0, 2.0, 3.0), grid)

    def test_callable_spec(self):
        grid = build_cell_grid(CellGeometry((1.0,)), 8)
        P = sample_coefficient(lambda y: 1.0 + y, grid)
        assert P.values.shape == (1, 8)
        assert P.d0 == 1.0 + 1.0 / 16.0
