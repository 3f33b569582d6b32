import math

import numpy as np
import pytest

from xdhom.cellproblem import (
    delta_continuation,
    element_gradients,
    l2_node_norm,
    node_weights,
    solve_coupled_cell,
    solve_scalar_cell,
)
from xdhom.effective import ahat
from xdhom.errors import ParameterError, SolverError
from xdhom.geometry import CellGeometry, HoleSpec, build_cell_grid, sample_coefficient
from xdhom.models import builtin_model

TWO_PHASE = {"kind": "piecewise", "axis": 0, "breaks": [0.5], "values": [1.0, 4.0]}


def grid_1d(n):
    return build_cell_grid(CellGeometry((1.0,)), n)


def grid_2d(n, hole=None):
    return build_cell_grid(CellGeometry((1.0, 1.0), hole=hole), n)


def zero_mean(grid, field):
    return float(np.sum(node_weights(grid) * field))


def one_d_two_phase_corrector(y):
    """Closed form: P (1 + w') is constant, giving a tent with slopes +-0.6."""
    y = np.mod(y, 1.0)
    return np.where(y < 0.5, -0.15 + 0.6 * y, 0.15 - 0.6 * (y - 0.5))


class TestScalarCell:
    def test_constant_coefficient_trivial(self):
        grid = grid_1d(64)
        P = sample_coefficient(3.0, grid)
        sol = solve_scalar_cell(P, grid)
        assert np.abs(sol.fields).max() <= 1e-10
        assert sol.residuals.max() <= 1e-10

    def test_two_phase_tent(self):
        grid = grid_1d(512)
        P = sample_coefficient(TWO_PHASE, grid)
        sol = solve_scalar_cell(P, grid)
        w = sol.fields[0]
        assert abs(w[0] - (-0.15)) <= 1e-6
        assert abs(w[256] - 0.15) <= 1e-6
        grads = element_gradients(grid, w)[0]
        np.testing.assert_allclose(grads[:256], 0.6, atol=1e-6)
        np.testing.assert_allclose(grads[256:], -0.6, atol=1e-6)

    def test_two_phase_nodal_closed_form(self):
        grid = grid_1d(512)
        P = sample_coefficient(TWO_PHASE, grid)
        sol = solve_scalar_cell(P, grid)
        y = grid.node_coordinates()[0]
        np.testing.assert_allclose(
            sol.fields[0], one_d_two_phase_corrector(y), atol=1e-8
        )

    def test_separable_2d_reduces_to_1d(self):
        # P1 depends only on y1 -> w^1 is the 1-D corrector of P1 along y1
        grid = grid_2d(64)
        P = sample_coefficient(
            [TWO_PHASE, {"kind": "expression", "expr": "2 + sin(2*pi*y2)"}], grid
        )
        sol = solve_scalar_cell(P, grid)
        w1 = sol.fields[0]
        spread = np.abs(w1 - w1[:, :1]).max()
        assert spread <= 1e-8
        y = grid.node_coordinates()[0][:, 0]
        np.testing.assert_allclose(w1[:, 0], one_d_two_phase_corrector(y), atol=1e-8)

    def test_zero_mean_and_periodic_storage(self):
        grid = grid_2d(32)
        P = sample_coefficient(
            {"kind": "expression", "expr": "2 + sin(2*pi*y1)*cos(2*pi*y2)"}, grid
        )
        sol = solve_scalar_cell(P, grid)
        for ell in range(2):
            scale = max(np.abs(sol.fields[ell]).max(), 1e-30)
            assert abs(zero_mean(grid, sol.fields[ell])) <= 1e-12 * scale

    def test_grid_convergence_second_order(self):
        # smooth coefficient: successive L2 gaps shrink at order >= 1.9
        spec = {"kind": "expression", "expr": "2 + sin(2*pi*y1)"}
        solutions = {}
        for n in (16, 32, 64, 128):
            grid = grid_1d(n)
            solutions[n] = solve_scalar_cell(sample_coefficient(spec, grid), grid)
        gaps = []
        for n in (16, 32, 64):
            coarse = solutions[n].fields[0]
            fine = solutions[2 * n].fields[0][::2]
            gaps.append(l2_node_norm(grid_1d(n), coarse - fine))
        x = np.log([16, 32, 64])
        slope = np.polyfit(x, np.log(gaps), 1)[0]
        assert -slope >= 1.9

    def test_perforated_neumann_no_hole_identical(self):
        grid = grid_2d(16)
        P = sample_coefficient(1.0, grid)
        a = solve_scalar_cell(P, grid)
        b = solve_scalar_cell(P, grid)
        np.testing.assert_array_equal(a.fields, b.fields)

    def test_perforated_solve_invariants(self):
        grid = grid_2d(32, hole=HoleSpec("box", (0.5, 0.5), 0.5))
        P = sample_coefficient(1.0, grid)
        sol = solve_scalar_cell(P, grid)
        assert sol.residuals.max() <= 1e-10
        for ell in range(2):
            scale = max(np.abs(sol.fields[ell]).max(), 1e-30)
            assert abs(zero_mean(grid, sol.fields[ell])) <= 1e-12 * scale

    def test_unreachable_tolerance_raises_with_residual(self):
        grid = grid_1d(64)
        P = sample_coefficient(TWO_PHASE, grid)
        with pytest.raises(SolverError) as err:
            solve_scalar_cell(P, grid, tol=1e-17)
        assert err.value.residual is not None


class TestCoupledCell:
    def test_constant_coefficient_trivial(self):
        grid = grid_1d(64)
        P = sample_coefficient(2.0, grid)
        ah = np.array([[0.75, -0.25], [-0.25, 0.75]])
        sol = solve_coupled_cell(ah, P, grid)
        assert np.abs(sol.fields).max() <= 1e-10

    def test_diagonal_decoupling_oracle(self):
        # diagonal constant Ahat: W^{kl}_j = delta_{jl} w^k
        grid = grid_1d(128)
        P = sample_coefficient(TWO_PHASE, grid)
        scalar = solve_scalar_cell(P, grid)
        coupled = solve_coupled_cell(np.diag([2.0, 3.0]), P, grid)
        assert np.abs(coupled.fields[0, 0, 1]).max() <= 1e-10
        assert np.abs(coupled.fields[0, 1, 0]).max() <= 1e-10
        np.testing.assert_allclose(
            coupled.fields[0, 0, 0], scalar.fields[0], atol=1e-10
        )
        np.testing.assert_allclose(
            coupled.fields[0, 1, 1], scalar.fields[0], atol=1e-10
        )

    def test_biofilm_contract(self):
        model = builtin_model("biofilm")
        grid = grid_1d(128)
        P = sample_coefficient(TWO_PHASE, grid)
        ah = ahat(model, np.array([0.25, 0.25]), 1e-6)
        sol = solve_coupled_cell(ah, P, grid, delta=1e-6)
        assert sol.residuals.max() <= 1e-10
        assert sol.delta == 1e-6
        for k in range(1):
            for ell in range(2):
                for j in range(2):
                    field = sol.fields[k, ell, j]
                    scale = max(np.abs(field).max(), 1e-30)
                    assert abs(zero_mean(grid, field)) <= 1e-12 * scale

    def test_nonsymmetric_unique_for_interior_states(self):
        # different Krylov starts agree to 1e-8 when all u_i >= 0.1
        model = builtin_model("biofilm", {"D1": 1.0, "D2": 2.0})
        grid = grid_1d(64)
        P = sample_coefficient(TWO_PHASE, grid)
        ah = ahat(model, np.array([0.3, 0.4]), 1e-6)
        rng = np.random.default_rng(0)
        a = solve_coupled_cell(ah, P, grid, x0=np.zeros(2 * 64))
        b = solve_coupled_cell(ah, P, grid, x0=rng.standard_normal(2 * 64))
        diff = a.fields - b.fields
        gap = math.sqrt(
            sum(
                l2_node_norm(grid, diff[idx]) ** 2
                for idx in np.ndindex(diff.shape[:3])
            )
        )
        assert gap <= 1e-8

    def test_square_matrix_required(self):
        grid = grid_1d(16)
        P = sample_coefficient(1.0, grid)
        with pytest.raises(ParameterError):
            solve_coupled_cell(np.ones((2, 3)), P, grid)


class TestDeltaContinuation:
    def test_constant_coefficient_all_zero(self):
        model = builtin_model("biofilm")
        grid = grid_1d(64)
        P = sample_coefficient(2.0, grid)
        u = np.array([0.25, 0.25])
        result = delta_continuation(
            lambda d: ahat(model, u, d), P, grid, [1e-2, 1e-3, 1e-4]
        )
        assert all(g <= 1e-10 for g in result.gaps)
        assert result.monotone

    def test_interior_state_gaps_decrease(self):
        # at interior states the corrector is exactly independent of the
        # (invertible, y-constant) species matrix, so the gaps quantify the
        # solver's smooth response to the O(delta) operator perturbation;
        # they shrink geometrically with the delta increments.  An
        # anisotropic 2-D coefficient keeps the coupled system from
        # collapsing onto a shared scalar stiffness.
        model = builtin_model("biofilm")
        grid = grid_2d(32)
        P = sample_coefficient(
            [
                TWO_PHASE,
                {"kind": "expression", "expr": "2 + sin(2*pi*y2) + 0.5*cos(2*pi*y1)"},
            ],
            grid,
        )
        u = np.array([0.25, 0.25])
        result = delta_continuation(
            lambda d: ahat(model, u, d), P, grid, [1e-2, 1e-3, 1e-4, 1e-5]
        )
        assert result.errors == [None] * 4
        assert all(b < a for a, b in zip(result.gaps, result.gaps[1:]))

    def test_boundary_adjacent_state_gaps_recorded(self):
        # uniqueness is not guaranteed as u_i -> 0; only record the gaps
        model = builtin_model("biofilm")
        grid = grid_1d(64)
        P = sample_coefficient(TWO_PHASE, grid)
        u = np.array([1e-8, 0.25])
        result = delta_continuation(
            lambda d: ahat(model, u, d), P, grid, [1e-2, 1e-3, 1e-4]
        )
        assert len(result.gaps) == 2
        assert all(g is not None and np.isfinite(g) for g in result.gaps)

    def test_sequence_validation(self):
        model = builtin_model("biofilm")
        grid = grid_1d(16)
        P = sample_coefficient(1.0, grid)
        fn = lambda d: ahat(model, np.array([0.25, 0.25]), d)
        with pytest.raises(ParameterError):
            delta_continuation(fn, P, grid, [1e-3, 1e-2])
        with pytest.raises(ParameterError):
            delta_continuation(fn, P, grid, [1e-2, -1e-3])
