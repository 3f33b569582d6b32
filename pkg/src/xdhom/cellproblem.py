"""Periodic unit-cell (corrector) problems on the discrete cell grid.

Discretization: continuous piecewise-multilinear (Q1) elements on the
uniform tensor-product grid with periodically identified degrees of
freedom.  Coefficients use midpoint quadrature (one value per element,
taken at the element center), which integrates Q1 gradients exactly and
makes constant-coefficient correctors vanish in floating point.

Masked (hole) elements are simply absent from the bilinear form, which
imposes the no-flux condition on the hole boundary naturally.  Nodes not
touched by any fluid element are pinned to zero and excluded from the
mean constraint.

The zero-mean constraint is enforced without a Lagrange multiplier: the
right-hand sides are compatible by construction, Krylov iterates are kept
in the mean-free subspace by projection, and the converged field is
normalized to exact weighted zero mean afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import ParameterError, SolverError
from .geometry import CellGrid, PeriodicCoefficient

__all__ = [
    "CellOperator",
    "CellSolutionSet",
    "DeltaContinuationResult",
    "solve_scalar_cell",
    "solve_coupled_cell",
    "delta_continuation",
    "element_gradients",
    "node_weights",
    "l2_node_norm",
]

_KRYLOV_TOL = 1e-10

# local Q1 matrices on [0,1]^2, node order (0,0), (1,0), (0,1), (1,1);
# K_XX scales with hy/hx, K_YY with hx/hy, the rhs vectors with hy resp. hx
_K_XX = np.array(
    [[2, -2, 1, -1], [-2, 2, -1, 1], [1, -1, 2, -2], [-1, 1, -2, 2]], dtype=float
) / 6.0
_K_YY = np.array(
    [[2, 1, -2, -1], [1, 2, -1, -2], [-2, -1, 2, 1], [-1, -2, 1, 2]], dtype=float
) / 6.0
_G_X = np.array([-0.5, 0.5, -0.5, 0.5])
_G_Y = np.array([-0.5, -0.5, 0.5, 0.5])


def _element_node_ids(grid: CellGrid) -> np.ndarray:
    """Global node ids of each element's local nodes, shape (n_elements, 2^d)."""
    n = grid.resolution
    if grid.dim == 1:
        e = np.arange(n)
        return np.stack([e, (e + 1) % n], axis=1)
    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ex, ey = ex.ravel(), ey.ravel()
    exp, eyp = (ex + 1) % n, (ey + 1) % n

    def nid(ix, iy):
        return ix * n + iy

    return np.stack(
        [nid(ex, ey), nid(exp, ey), nid(ex, eyp), nid(exp, eyp)], axis=1
    )


class CellOperator:
    """Assembled periodic stiffness, split per coordinate direction.

    ``S[m]`` is the stiffness of the form  sum_e P_m(c_e) int_e d_m u d_m v
    restricted to active nodes; ``G[k]`` assembles int_Y P_k d_k phi_p.  The
    coupled operator for a species matrix Ahat is sum_m kron(Ahat, S[m]).
    """

    def __init__(self, P: PeriodicCoefficient, grid: CellGrid):
        if P.grid.key != grid.key:
            raise ParameterError("coefficient was sampled on a different grid")
        self.grid = grid
        self.P = P
        nodes = _element_node_ids(grid)
        fluid = grid.mask.ravel()
        nodes = nodes[fluid]
        pvals = P.values.reshape(grid.dim, -1)[:, fluid]

        n_nodes = grid.n_nodes
        touched = np.zeros(n_nodes, dtype=bool)
        touched[nodes.ravel()] = True
        self.active = np.flatnonzero(touched)
        self.full_to_active = np.full(n_nodes, -1, dtype=np.int64)
        self.full_to_active[self.active] = np.arange(self.active.size)
        self.n_active = self.active.size

        h = grid.spacing
        vol = grid.element_volume
        if grid.dim == 1:
            k_loc = [np.array([[1.0, -1.0], [-1.0, 1.0]]) / h[0]]
            g_loc = [np.array([-1.0, 1.0])]
        else:
            k_loc = [(h[1] / h[0]) * _K_XX, (h[0] / h[1]) * _K_YY]
            g_loc = [h[1] * _G_X, h[0] * _G_Y]

        nloc = nodes.shape[1]
        rows = np.repeat(nodes, nloc, axis=1).ravel()
        cols = np.tile(nodes, (1, nloc)).ravel()
        rows = self.full_to_active[rows]
        cols = self.full_to_active[cols]
        self.S = []
        for m in range(grid.dim):
            data = (pvals[m][:, None, None] * k_loc[m]).ravel()
            s = sps.coo_matrix(
                (data, (rows, cols)), shape=(self.n_active, self.n_active)
            )
            self.S.append(s.tocsr())

        self.G = []
        for k in range(grid.dim):
            g = np.zeros(self.n_active)
            np.add.at(
                g,
                self.full_to_active[nodes.ravel()],
                (pvals[k][:, None] * g_loc[k]).ravel(),
            )
            self.G.append(g)

        # quadrature weight of each active node in int_{Y_1} (FE-exact)
        w = np.zeros(n_nodes)
        np.add.at(w, nodes.ravel(), vol / nloc)
        self.weights = w[self.active]

    @property
    def stiffness(self) -> sps.csr_matrix:
        return sum(self.S[1:], start=self.S[0].copy())

    def to_full(self, vec: np.ndarray) -> np.ndarray:
        """Scatter an active-node vector onto the full periodic node grid."""
        out = np.zeros(self.grid.n_nodes)
        out[self.active] = vec
        return out.reshape(self.grid.node_shape)

    def normalize_mean(self, vec: np.ndarray, blocks: int = 1) -> np.ndarray:
        """Subtract the weighted mean per species block: discrete avg = 0."""
        out = vec.reshape(blocks, self.n_active).copy()
        wsum = self.weights.sum()
        out -= (out @ self.weights)[:, None] / wsum
        return out.reshape(vec.shape)


def _project_blocks(x: np.ndarray, blocks: int) -> np.ndarray:
    v = x.reshape(blocks, -1)
    return (v - v.mean(axis=1, keepdims=True)).ravel()


def _krylov(K, b, blocks, symmetric, x0=None, tol=_KRYLOV_TOL):
    """Diagonally preconditioned CG/GMRES on the mean-free subspace.

    Returns (solution, relative residual).  Raises SolverError carrying the
    achieved residual when the iteration cap (50 sqrt(#unknowns)) does not
    reach the tolerance.
    """
    ndof = b.size
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(ndof), 0.0
    cap = int(50 * math.sqrt(ndof)) + 10

    diag = K.diagonal()
    use_jacobi = np.all(diag > 0)
    M = sps.diags(1.0 / diag) if use_jacobi else None

    def matvec(x):
        return _project_blocks(K @ _project_blocks(x, blocks), blocks)

    A = spla.LinearOperator((ndof, ndof), matvec=matvec, dtype=float)
    bp = _project_blocks(b, blocks)
    if x0 is not None:
        x0 = _project_blocks(np.asarray(x0, dtype=float).ravel(), blocks)

    if symmetric:
        x, _ = spla.cg(A, bp, x0=x0, rtol=0.2 * tol, atol=0.0, maxiter=cap, M=M)
    else:
        restart = min(150, ndof)
        x, _ = spla.gmres(
            A,
            bp,
            x0=x0,
            rtol=0.2 * tol,
            atol=0.0,
            restart=restart,
            maxiter=max(1, cap // restart + 1),
            M=M,
        )
    x = _project_blocks(x, blocks)
    residual = float(np.linalg.norm(K @ x - b)) / bnorm
    if residual > tol:
        raise SolverError(
            f"cell solver stalled at relative residual {residual:.3e} "
            f"(tolerance {tol:.1e})",
            residual=residual,
        )
    return x, residual


@dataclass
class CellSolutionSet:
    """Corrector fields on the cell grid.

    kind "scalar": ``fields[l]`` is w^l, shape (d, *nodes).
    kind "coupled": ``fields[k, l, j]`` is the j-th component of W^{kl},
    shape (d, n, n, *nodes).  All fields have weighted zero mean over the
    fluid part and live on periodically identified nodes.
    """

    kind: str
    fields: np.ndarray = field(repr=False)
    grid: CellGrid
    residuals: np.ndarray
    delta: float | None = None

    @property
    def n_species(self) -> int:
        return 1 if self.kind == "scalar" else self.fields.shape[1]


def solve_scalar_cell(
    P: PeriodicCoefficient,
    grid: CellGrid,
    operator: CellOperator | None = None,
    x0: np.ndarray | None = None,
    tol: float = _KRYLOV_TOL,
) -> CellSolutionSet:
    """Solve div_y(P(y)(grad w^l + e_l)) = 0 for l = 1..d.

    With a perforated grid the masked elements are absent from the form,
    which realizes (grad w^l + e_l) . nu = 0 on the hole boundary.
    """
    op = operator if operator is not None else CellOperator(P, grid)
    K = op.stiffness
    fields = np.zeros((grid.dim,) + grid.node_shape)
    residuals = np.zeros(grid.dim)
    for ell in range(grid.dim):
        b = -op.G[ell]
        x, res = _krylov(K, b, blocks=1, symmetric=True, x0=x0, tol=tol)
        fields[ell] = op.to_full(op.normalize_mean(x))
        residuals[ell] = res
    return CellSolutionSet("scalar", fields, grid, residuals)


def _is_spd(a: np.ndarray) -> bool:
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (a + a.T)).min() > 0.0)


def solve_coupled_cell(
    ahat: np.ndarray,
    P: PeriodicCoefficient,
    grid: CellGrid,
    delta: float = 1e-6,
    operator: CellOperator | None = None,
    x0: np.ndarray | None = None,
    tol: float = _KRYLOV_TOL,
) -> CellSolutionSet:
    """Solve the coupled corrector system for every direction/species pair.

    ``ahat`` is the regularized species matrix (constant over Y, evaluated
    at a delta-clamped state by the caller).  The n components of W^{kl}
    form one block system sum_m kron(ahat, S_m); its d*n right-hand sides
    reuse the assembled operator.  The forcing e_k e_l is the d x n matrix
    with entries delta_{km} delta_{jl} (row = space, column = species).
    """
    ahat = np.asarray(ahat, dtype=float)
    n = ahat.shape[0]
    if ahat.shape != (n, n):
        raise ParameterError("ahat must be a square species matrix")
    op = operator if operator is not None else CellOperator(P, grid)
    K = sum(
        (sps.kron(sps.csr_matrix(ahat), s, format="csr") for s in op.S),
        start=sps.csr_matrix((n * op.n_active, n * op.n_active)),
    )
    symmetric = _is_spd(ahat)
    fields = np.zeros((grid.dim, n, n) + grid.node_shape)
    residuals = np.zeros((grid.dim, n))
    for k in range(grid.dim):
        for ell in range(n):
            b = -(ahat[:, ell][:, None] * op.G[k][None, :]).ravel()
            x, res = _krylov(K, b, blocks=n, symmetric=symmetric, x0=x0, tol=tol)
            x = op.normalize_mean(x, blocks=n).reshape(n, op.n_active)
            for j in range(n):
                fields[k, ell, j] = op.to_full(x[j])
            residuals[k, ell] = res
    return CellSolutionSet("coupled", fields, grid, residuals, delta=float(delta))


@dataclass
class DeltaContinuationResult:
    """Solutions along a decreasing delta sequence with Cauchy gaps.

    ``gaps[k]`` is the L2(Y) distance between the solutions at deltas[k]
    and deltas[k+1]; ``monotone`` records whether the gaps are
    non-increasing (the numerical witness of delta -> 0 convergence).
    Failed solves leave None entries and their message in ``errors``.
    """

    deltas: list
    solutions: list
    gaps: list
    errors: list

    @property
    def monotone(self) -> bool:
        gaps = [g for g in self.gaps if g is not None]
        return all(b <= a for a, b in zip(gaps, gaps[1:]))


def delta_continuation(
    ahat_of_delta: Callable[[float], np.ndarray],
    P: PeriodicCoefficient,
    grid: CellGrid,
    deltas: Sequence[float],
) -> DeltaContinuationResult:
    """Solve the regularized cell problem along a decreasing delta sequence."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ParameterError("delta sequence must be strictly positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ParameterError("delta sequence must be strictly decreasing")
    op = CellOperator(P, grid)
    solutions, errors = [], []
    for d in deltas:
        try:
            sol = solve_coupled_cell(ahat_of_delta(d), P, grid, delta=d, operator=op)
            solutions.append(sol)
            errors.append(None)
        except SolverError as exc:
            solutions.append(None)
            errors.append(str(exc))
    gaps = []
    w = node_weights(grid)
    for a, b in zip(solutions, solutions[1:]):
        if a is None or b is None:
            gaps.append(None)
            continue
        diff = a.fields - b.fields
        sq = 0.0
        for idx in np.ndindex(diff.shape[: diff.ndim - grid.dim]):
            sq += float(np.sum(w * diff[idx] ** 2))
        gaps.append(math.sqrt(sq))
    return DeltaContinuationResult(deltas, solutions, gaps, errors)


# ---------------------------------------------------------------------------
# discrete field utilities
# ---------------------------------------------------------------------------


def element_gradients(grid: CellGrid, nodal: np.ndarray) -> np.ndarray:
    """Gradient of a Q1 nodal field at element centers, shape (d, *elements).

    For Q1 the element average of the gradient equals its midpoint value, so
    these are the exact per-element gradient integrals divided by |e|.
    """
    h = grid.spacing
    if grid.dim == 1:
        return ((np.roll(nodal, -1) - nodal) / h[0])[np.newaxis]
    right = np.roll(nodal, -1, axis=0)
    up = np.roll(nodal, -1, axis=1)
    diag = np.roll(right, -1, axis=1)
    gx = (right + diag - nodal - up) / (2.0 * h[0])
    gy = (up + diag - nodal - right) / (2.0 * h[1])
    return np.stack([gx, gy])


def node_weights(grid: CellGrid) -> np.ndarray:
    """Quadrature weight of each node in int_{Y_1}, shape node_shape."""
    nodes = _element_node_ids(grid)
    nodes = nodes[grid.mask.ravel()]
    w = np.zeros(grid.n_nodes)
    np.add.at(w, nodes.ravel(), grid.element_volume / nodes.shape[1])
    return w.reshape(grid.node_shape)


def l2_node_norm(grid: CellGrid, nodal: np.ndarray) -> float:
    """Weighted discrete L2(Y_1) norm of a nodal field."""
    return math.sqrt(float(np.sum(node_weights(grid) * np.asarray(nodal) ** 2)))
