"""Entropy-stable implicit time integrators for the oscillating and limit systems.

Spatial discretization: cell-centered finite volumes on a uniform tensor
grid over the domain, two-point fluxes, zero-flux boundary faces.  The
implicit Euler step is solved by damped Newton in the entropy variables
w = h'(u): the unknowns are w per cell and u = (h')^{-1}(w), so every
Newton iterate lies strictly inside the admissible region regardless of
step size.

Coefficient freezing: the diffusion matrices entering the face fluxes
(the four-index tensor B for local models, D_hom A(u) for nonlocal ones,
P(x/eps) a(u) for the microscopic system) are evaluated per cell at the
previous time level and averaged arithmetically to faces; the scalar
micro coefficient P is harmonically averaged.  This makes the three
steppers carry literally identical discrete operators when P is constant
and keeps the flux linear within a step; the consistency error is O(dt).

Jacobians are finite differences of the residual with distance-3 grid
coloring over the 5-point stencil (3 colors in 1-D, 9 in 2-D, times the
species count).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .effective import EffectiveTensor, EffectiveTensorCache
from .errors import ConfigError, InputError, RunError, StepError
from .models import DiffusionModel, interior_clamp
from .geometry import coefficient_fn

__all__ = [
    "DomainGrid",
    "StateField",
    "TrajectoryLog",
    "MacroStepperLocal",
    "MacroStepperNonlocal",
    "MicroStepper",
    "default_dt",
    "run_transient",
]

_NEWTON_MAX = 40
_BACKTRACK_MAX = 30
_SPEC_RTOL = 1e-10


@dataclass(frozen=True)
class DomainGrid:
    """Uniform cell-centered grid on the macroscopic domain."""

    lengths: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if len(self.lengths) != len(self.shape):
            raise ConfigError("domain lengths and resolution dimension mismatch")
        if len(self.shape) not in (1, 2):
            raise ConfigError("only 1-D and 2-D domains are supported")
        if any(n < 2 for n in self.shape):
            raise ConfigError("domain needs at least 2 cells per axis")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(l / n for l, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def cell_centers(self) -> np.ndarray:
        axes = [
            (np.arange(n) + 0.5) * h for n, h in zip(self.shape, self.spacing)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"))


@dataclass
class StateField:
    """Species fractions per cell at one time level."""

    grid: DomainGrid
    u: np.ndarray = field(repr=False)
    t: float
    model: DiffusionModel
    mass0: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        expected = (self.model.n,) + self.grid.shape
        if self.u.shape != expected:
            raise InputError(f"state shape {self.u.shape}, expected {expected}")
        if not np.all(np.isfinite(self.u)):
            raise InputError("state values must be finite")
        if not self.model.in_region(self.u.reshape(self.model.n, -1), tol=1e-12):
            raise InputError("state values must lie in the closed admissible region")
        if self.mass0 is None:
            self.mass0 = self.mass()

    def mass(self) -> np.ndarray:
        return self.u.reshape(self.model.n, -1).sum(axis=1) * self.grid.cell_volume

    def entropy(self) -> float:
        return float(np.sum(self.model.h(self.u)) * self.grid.cell_volume)


@dataclass
class TrajectoryLog:
    """Per-step diagnostics of a transient run."""

    t: list = field(default_factory=list)
    H: list = field(default_factory=list)
    production: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    dt: list = field(default_factory=list)

    def append(self, state: StateField, production: float, iters: int, dt: float):
        self.t.append(state.t)
        self.H.append(state.entropy())
        self.production.append(production)
        self.mass.append(state.mass().tolist())
        self.newton_iters.append(iters)
        self.dt.append(dt)

    def __len__(self) -> int:
        return len(self.t)


def default_dt(grid: DomainGrid) -> float:
    return 1e-3 * max(grid.lengths) ** 2


def _axis_slices(dim: int, axis: int):
    lo = tuple(
        slice(None) if a != axis else slice(0, -1) for a in range(dim)
    )
    hi = tuple(
        slice(None) if a != axis else slice(1, None) for a in range(dim)
    )
    return (slice(None),) + lo, (slice(None),) + hi


def _grid_colors(shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 1:
        return np.arange(shape[0]) % 3
    ix, iy = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return (ix % 3) * 3 + iy % 3


def _stencil_pattern(shape: tuple[int, ...]):
    """Per grid color: (column cells, row cells) of possibly nonzero entries."""
    dim = len(shape)
    n_cells = int(np.prod(shape))
    cells = np.arange(n_cells).reshape(shape)
    colors = _grid_colors(shape)
    offsets = [np.zeros(dim, dtype=int)]
    for a in range(dim):
        for sgn in (-1, 1):
            o = np.zeros(dim, dtype=int)
            o[a] = sgn
            offsets.append(o)
    patterns = []
    for g in range(colors.max() + 1):
        idx = np.argwhere(colors == g)
        col_cells, row_cells = [], []
        for o in offsets:
            nbr = idx + o
            ok = np.all((nbr >= 0) & (nbr < np.asarray(shape)), axis=1)
            col_cells.append(cells[tuple(idx[ok].T)])
            row_cells.append(cells[tuple(nbr[ok].T)])
        patterns.append(
            (np.concatenate(col_cells), np.concatenate(row_cells))
        )
    return patterns


class _ImplicitStepper:
    """Shared Newton machinery; subclasses provide the frozen face matrices."""

    def __init__(self, model: DiffusionModel, grid: DomainGrid):
        self.model = model
        self.grid = grid
        self._patterns = _stencil_pattern(grid.shape)
        self._sqrt_eps = math.sqrt(np.finfo(float).eps)

    # -- subclass hook -----------------------------------------------------
    def _face_matrices(self, state: StateField) -> list[np.ndarray]:
        """Per direction m: C[i, j, *faces] with flux_i = C_ij (u_j,R - u_j,L)/h."""
        raise NotImplementedError

    # -- residual ----------------------------------------------------------
    def _residual(self, w, u_old, faceC, dt):
        model, grid = self.model, self.grid
        u = model.invert_h_grad(w)
        vol = grid.cell_volume
        r = vol * (u - u_old)
        for m, C in enumerate(faceC):
            lo, hi = _axis_slices(grid.dim, m)
            du = u[hi] - u[lo]
            flux = np.einsum("ij...,j...->i...", C, du)
            scale = dt * vol / grid.spacing[m] ** 2
            r[lo] -= scale * flux
            r[hi] += scale * flux
        if model.reaction is not None:
            r -= dt * vol * model.reaction(u)
        return r, u

    def _jacobian(self, w, r0, u_old, faceC, dt):
        n = self.model.n
        n_cells = self.grid.n_cells
        wf = w.reshape(n, n_cells)
        h = self._sqrt_eps * (1.0 + np.abs(wf))
        rows, cols, data = [], [], []
        colors = _grid_colors(self.grid.shape).ravel()
        for j0 in range(n):
            for g, (col_cells, row_cells) in enumerate(self._patterns):
                pert = np.zeros_like(wf)
                sel = colors == g
                pert[j0, sel] = h[j0, sel]
                rp, _ = self._residual(
                    (wf + pert).reshape(w.shape), u_old, faceC, dt
                )
                dr = (rp - r0).reshape(n, n_cells)
                hcols = h[j0, col_cells]
                for i in range(n):
                    rows.append(i * n_cells + row_cells)
                    cols.append(j0 * n_cells + col_cells)
                    data.append(dr[i, row_cells] / hcols)
        J = sps.coo_matrix(
            (
                np.concatenate(data),
                (np.concatenate(rows), np.concatenate(cols)),
            ),
            shape=(n * n_cells, n * n_cells),
        )
        return J.tocsr()

    def _newton(self, u_old, faceC, dt):
        # Unknowns are the entropy variables.  Cells with exhausted solvent
        # have their root at w -> infinity along a residual valley that is
        # already below tolerance, so updates are capped componentwise and
        # the iterate is kept inside the overflow-safe logit range.
        model, grid = self.model, self.grid
        interior = np.min(u_old) > 1e-8 and (
            not model.simplex or np.min(1.0 - u_old.sum(axis=0)) > 1e-8
        )
        # the initial clamp keeps du/dw numerically regular at the guess;
        # boundary-pinned cells then walk outward under the capped updates
        u_init = (
            u_old
            if interior
            else interior_clamp(np.clip(u_old, 0.0, 1.0), 1e-8, model.simplex)
        )
        w = model.h_grad(u_init)
        r, u = self._residual(w, u_old, faceC, dt)
        rnorm2 = float(np.linalg.norm(r))
        r0norm = max(rnorm2, 1e-300)
        atol_inf = 1e-13 * grid.cell_volume
        iters = 0
        while iters < _NEWTON_MAX:
            if float(np.abs(r).max()) <= atol_inf:
                return u, iters
            J = self._jacobian(w, r, u_old, faceC, dt)
            # the plain Newton direction first; if the line search cannot
            # use it (near-singular du/dw in boundary-pinned cells), retry
            # with increasing diagonal regularization before giving up
            accepted = None
            diag_scale = float(np.abs(J.diagonal()).max())
            for mu in (0.0, 1e-8, 1e-4, 1e-2):
                Jmu = J if mu == 0.0 else J + mu * diag_scale * sps.identity(
                    J.shape[0], format="csr"
                )
                try:
                    step = spla.spsolve(Jmu, -r.ravel()).reshape(w.shape)
                except RuntimeError as exc:
                    raise StepError(f"Newton linear solve failed: {exc}") from exc
                step = np.nan_to_num(step, nan=0.0, posinf=0.0, neginf=0.0)
                np.clip(step, -30.0, 30.0, out=step)
                lam = 1.0
                for _ in range(_BACKTRACK_MAX + 1):
                    w_new = np.clip(w + lam * step, -100.0, 100.0)
                    r_new, u_new = self._residual(w_new, u_old, faceC, dt)
                    if float(np.linalg.norm(r_new)) < rnorm2:
                        accepted = (w_new, r_new, u_new)
                        break
                    lam *= 0.5
                if accepted is not None:
                    break
            if accepted is None:
                if rnorm2 <= _SPEC_RTOL * r0norm:
                    return u, iters
                raise StepError(
                    "Newton stagnated (line search exhausted); reduce dt"
                )
            w, r, u = accepted
            rnorm2 = float(np.linalg.norm(r))
            iters += 1
        if rnorm2 <= _SPEC_RTOL * r0norm or float(np.abs(r).max()) <= atol_inf:
            return u, iters
        raise StepError("Newton did not converge within the iteration cap")

    # -- public ------------------------------------------------------------
    def step(self, state: StateField, dt: float, _depth: int = 0):
        """One implicit step of size dt; halves dt internally on failure.

        Returns (new state, info) with the accumulated Newton iteration
        count and the number of sub-steps taken.
        """
        if dt <= 0:
            raise InputError("dt must be positive")
        faceC = self._face_matrices(state)
        try:
            u_new, iters = self._newton(state.u, faceC, dt)
        except StepError:
            if _depth >= 5:
                raise
            s1, i1 = self.step(state, dt / 2.0, _depth + 1)
            s2, i2 = self.step(s1, dt / 2.0, _depth + 1)
            return s2, {
                "newton_iters": i1["newton_iters"] + i2["newton_iters"],
                "substeps": i1["substeps"] + i2["substeps"],
            }
        new_state = StateField(
            grid=state.grid,
            u=u_new,
            t=state.t + dt,
            model=state.model,
            mass0=state.mass0,
        )
        return new_state, {"newton_iters": iters, "substeps": 1}

    def production(self, state: StateField, delta: float = 1e-6) -> float:
        """Discrete entropy-production form sum_faces vol (du/h : h''A(u) du/h).

        Face states are arithmetic means, clamped into the interior where
        the Hessian would be singular; nonnegative up to round-off.
        """
        model, grid = self.model, self.grid
        u = state.u
        total = 0.0
        for m in range(grid.dim):
            lo, hi = _axis_slices(grid.dim, m)
            du = (u[hi] - u[lo]) / grid.spacing[m]
            ubar = 0.5 * (u[hi] + u[lo])
            ubar = interior_clamp(np.clip(ubar, 0.0, 1.0), delta, model.simplex)
            mat = model.production_matrix(ubar)
            quad = np.einsum("i...,ij...,j...->...", du, mat, du)
            total += float(quad.sum() * grid.cell_volume)
        return total


def _face_mean(cellwise: np.ndarray, axis: int, dim: int) -> np.ndarray:
    lo = tuple(
        slice(None) if a != axis else slice(0, -1) for a in range(dim)
    )
    hi = tuple(
        slice(None) if a != axis else slice(1, None) for a in range(dim)
    )
    full = (slice(None), slice(None))
    return 0.5 * (cellwise[full + lo] + cellwise[full + hi])


class MacroStepperLocal(_ImplicitStepper):
    """Homogenized system with the four-index tensor B(u) per cell.

    B is refreshed from the cache at the previous time level (lagged) and
    averaged to faces; only the normal entries B[:, :, m, m] enter the
    two-point flux, consistent with grid-aligned microstructures where the
    cross entries vanish.
    """

    def __init__(self, model: DiffusionModel, grid: DomainGrid,
                 cache: EffectiveTensorCache):
        super().__init__(model, grid)
        self.cache = cache

    def _face_matrices(self, state):
        n = self.model.n
        d = self.grid.dim
        flat = state.u.reshape(n, -1)
        b_cells = np.empty((n, n, d, d, flat.shape[1]))
        for c in range(flat.shape[1]):
            b_cells[..., c] = self.cache.lookup(flat[:, c]).values
        b_cells = b_cells.reshape((n, n, d, d) + self.grid.shape)
        out = []
        for m in range(d):
            normal = b_cells[:, :, m, m]
            out.append(_face_mean(normal, m, d))
        return out


class MacroStepperNonlocal(_ImplicitStepper):
    """Homogenized system div(D_hom A(u) grad u) for the volume-filling models."""

    def __init__(self, model: DiffusionModel, grid: DomainGrid,
                 dhom_tensor: EffectiveTensor | np.ndarray):
        super().__init__(model, grid)
        values = (
            dhom_tensor.values
            if isinstance(dhom_tensor, EffectiveTensor)
            else np.asarray(dhom_tensor, dtype=float)
        )
        if values.shape != (grid.dim, grid.dim):
            raise ConfigError("D_hom shape does not match the domain dimension")
        self.dhom = values

    def _face_matrices(self, state):
        a_cells = self.model.a_mat(state.u)
        return [
            self.dhom[m, m] * _face_mean(a_cells, m, self.grid.dim)
            for m in range(self.grid.dim)
        ]


class MicroStepper(_ImplicitStepper):
    """Oscillating system with coefficients P_k(x/eps) a_ij(u).

    P is sampled at cell centers of the resolved grid and harmonically
    averaged to faces; the grid must carry at least 8 cells per
    eps-period on every axis.
    """

    def __init__(
        self,
        model: DiffusionModel,
        grid: DomainGrid,
        coefficient,
        eps: float,
        cell_lengths: tuple[float, ...] | None = None,
    ):
        super().__init__(model, grid)
        if eps <= 0:
            raise ConfigError("eps must be positive")
        self.eps = float(eps)
        lengths = cell_lengths or (1.0,) * grid.dim
        for h, b in zip(grid.spacing, lengths):
            if eps * b / h < 8.0 - 1e-9:
                raise ConfigError(
                    "micro grid too coarse: need at least 8 cells per eps-period"
                )
        fn = coefficient_fn(coefficient, grid.dim)
        centers = grid.cell_centers()
        period = np.asarray(lengths).reshape((grid.dim,) + (1,) * grid.dim)
        y = np.mod(centers / self.eps, period)
        self._p_cells = np.asarray(fn(y), dtype=float)
        if np.any(self._p_cells <= 0):
            raise ConfigError("micro coefficient must stay positive")
        self._p_faces = []
        for m in range(grid.dim):
            lo = tuple(
                slice(None) if a != m else slice(0, -1) for a in range(grid.dim)
            )
            hi = tuple(
                slice(None) if a != m else slice(1, None) for a in range(grid.dim)
            )
            a = self._p_cells[m][lo]
            b = self._p_cells[m][hi]
            self._p_faces.append(2.0 * a * b / (a + b))

    def _face_matrices(self, state):
        a_cells = self.model.a_mat(state.u)
        return [
            self._p_faces[m][np.newaxis, np.newaxis] *
            _face_mean(a_cells, m, self.grid.dim)
            for m in range(self.grid.dim)
        ]


def run_transient(
    stepper: _ImplicitStepper,
    initial: StateField,
    t_end: float,
    dt: float | None = None,
) -> tuple[StateField, TrajectoryLog]:
    """Fixed-dt implicit loop with per-step halving retries and full logging."""
    if t_end < 0:
        raise InputError("t_end must be nonnegative")
    if dt is None:
        dt = default_dt(initial.grid)
    log = TrajectoryLog()
    log.append(initial, stepper.production(initial), 0, 0.0)
    state = initial
    t_final = initial.t + t_end
    while state.t < t_final - 1e-14 * max(t_final, 1.0):
        dt_step = min(dt, t_final - state.t)
        try:
            state, info = stepper.step(state, dt_step)
        except StepError as exc:
            raise RunError(
                f"transient run failed at t = {state.t:.6g}: {exc}",
                partial_log=log,
            ) from exc
        log.append(state, stepper.production(state), info["newton_iters"], dt_step)
    return state, log
