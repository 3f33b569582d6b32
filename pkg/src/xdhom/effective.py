"""Homogenized diffusion tensors assembled from cell-problem correctors.

Two kinds are produced: the four-index array B[i, l, m, k] of the coupled
cross-diffusion limit (indices: equation species i, gradient species l,
divergence direction m, gradient direction k) and the d x d matrix D_hom
of the scalar limits.  Perforated variants average over the fluid part
Y_1 with |Y_1|^{-1} normalization; the ``porosity_scaling`` switch rescales
by the fluid fraction for the |Y|^{-1} convention instead.

The interior clamp u_delta = (u + delta/2)/(1 + delta) is applied before
every evaluation of the regularized species matrix and of the tensor
prefactors, so all power weights stay finite up to the boundary of the
admissible region.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .cellproblem import (
    CellOperator,
    CellSolutionSet,
    element_gradients,
    solve_coupled_cell,
    solve_scalar_cell,
)
from .errors import ParameterError
from .geometry import CellGrid, PeriodicCoefficient, sample_coefficient
from .models import LOCAL, DiffusionModel, clamp_state

__all__ = [
    "EffectiveTensor",
    "EffectiveTensorCache",
    "ahat",
    "effective_tensor_local",
    "effective_tensor_perforated",
    "dhom",
    "dhom_perforated",
]


@dataclass
class EffectiveTensor:
    """Assembled macroscopic diffusion coefficients.

    four_index: ``values[i, l, m, k]``; two_index: ``values[k, l]``.  The
    JSON serialization documents the index-major order i, l, m, k.
    """

    kind: str
    values: np.ndarray = field(repr=False)
    state: np.ndarray | None = None
    state_clamped: np.ndarray | None = None
    delta: float | None = None
    provenance: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "index_order": "i,l,m,k" if self.kind == "four_index" else "k,l",
            "values": self.values.tolist(),
            "delta": self.delta,
            "provenance": self.provenance,
        }
        if self.state is not None:
            out["state"] = np.asarray(self.state).tolist()
        if self.state_clamped is not None:
            out["state_clamped"] = np.asarray(self.state_clamped).tolist()
        return out

    def min_eigenvalue(self) -> float:
        if self.kind != "two_index":
            raise ParameterError("eigenvalues are defined for two_index tensors")
        return float(np.linalg.eigvalsh(0.5 * (self.values + self.values.T)).min())


def ahat(model: DiffusionModel, u, delta: float) -> np.ndarray:
    """Regularized species matrix A^_ij = a_ij(u_d) / ((s_j + 1) u_d,j^{s_j}).

    ``u_d`` is the interior clamp of ``u``; with delta = 0 the state must be
    strictly interior, otherwise the power weights are singular.
    """
    if model.kind != LOCAL:
        raise ParameterError("ahat is defined for locally degenerate models")
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    u = np.asarray(u, dtype=float)
    ud = clamp_state(u, delta)
    if delta == 0.0 and np.any(ud <= 0.0):
        raise ParameterError("delta = 0 requires a strictly interior state")
    s = np.asarray(model.s)
    return model.a_mat(ud) / ((s + 1.0) * ud**s)[np.newaxis, :]


def _flux_average(
    grid: CellGrid, pvals: np.ndarray, gradients: np.ndarray, norm: float
) -> np.ndarray:
    """Midpoint quadrature of P_m d_m f over the fluid elements, per m."""
    mask = grid.mask
    vol = grid.element_volume
    return np.array(
        [
            float(np.sum(pvals[m][mask] * gradients[m][mask])) * vol / norm
            for m in range(grid.dim)
        ]
    )


def _assemble_four_index(
    model: DiffusionModel,
    u: np.ndarray,
    P: PeriodicCoefficient,
    grid: CellGrid,
    delta: float,
    solution: CellSolutionSet,
) -> np.ndarray:
    n, d = model.n, grid.dim
    s = np.asarray(model.s)
    ud = clamp_state(np.asarray(u, dtype=float), delta)
    a = model.a_mat(ud)
    ah = ahat(model, u, delta)
    mask = grid.mask
    vol = grid.element_volume
    norm = float(np.count_nonzero(mask)) * vol
    p_mean = np.array(
        [float(np.sum(P.values[m][mask])) * vol / norm for m in range(d)]
    )
    values = np.zeros((n, n, d, d))
    for k in range(d):
        for ell in range(n):
            # F[j, m] = avg of P_m d_m W^{kl}_j over the fluid part
            F = np.zeros((n, d))
            for j in range(n):
                grads = element_gradients(grid, solution.fields[k, ell, j])
                F[j] = _flux_average(grid, P.values, grads, norm)
            prefactor = (s[ell] + 1.0) * ud[ell] ** s[ell]
            for m in range(d):
                values[:, ell, m, k] += prefactor * (ah @ F[:, m])
                if m == k:
                    values[:, ell, m, k] += a[:, ell] * p_mean[m]
    return values


def effective_tensor_local(
    model: DiffusionModel,
    u,
    P: PeriodicCoefficient,
    grid: CellGrid,
    delta: float = 1e-6,
    operator: CellOperator | None = None,
) -> EffectiveTensor:
    """Four-index tensor B(u) from the coupled cell problem with coefficient P."""
    u = np.asarray(u, dtype=float)
    ah = ahat(model, u, delta)
    solution = solve_coupled_cell(ah, P, grid, delta=delta, operator=operator)
    values = _assemble_four_index(model, u, P, grid, delta, solution)
    return EffectiveTensor(
        kind="four_index",
        values=values,
        state=u.copy(),
        state_clamped=clamp_state(u, delta),
        delta=float(delta),
        provenance={
            "model": model.name,
            "grid": repr(grid.key),
            "residual_max": float(solution.residuals.max()),
        },
    )


def effective_tensor_perforated(
    model: DiffusionModel,
    u,
    grid: CellGrid,
    delta: float = 1e-6,
    operator: CellOperator | None = None,
    porosity_scaling: bool = False,
) -> EffectiveTensor:
    """Four-index tensor from the perforated cell problem (coefficient 1).

    Cell averages are taken over the fluid part with |Y_1|^{-1}
    normalization; ``porosity_scaling`` multiplies the result by the fluid
    fraction to obtain the |Y|^{-1} convention instead.
    """
    u = np.asarray(u, dtype=float)
    P = sample_coefficient(1.0, grid)
    ah = ahat(model, u, delta)
    solution = solve_coupled_cell(ah, P, grid, delta=delta, operator=operator)
    values = _assemble_four_index(model, u, P, grid, delta, solution)
    if porosity_scaling:
        values = values * grid.fluid_fraction
    return EffectiveTensor(
        kind="four_index",
        values=values,
        state=u.copy(),
        state_clamped=clamp_state(u, delta),
        delta=float(delta),
        provenance={
            "model": model.name,
            "grid": repr(grid.key),
            "residual_max": float(solution.residuals.max()),
            "porosity_scaling": porosity_scaling,
            "fluid_fraction": grid.fluid_fraction,
        },
    )


def _assemble_two_index(
    P: PeriodicCoefficient, grid: CellGrid, solution: CellSolutionSet
) -> np.ndarray:
    d = grid.dim
    mask = grid.mask
    vol = grid.element_volume
    norm = float(np.count_nonzero(mask)) * vol
    values = np.zeros((d, d))
    for ell in range(d):
        grads = element_gradients(grid, solution.fields[ell])
        for k in range(d):
            base = 1.0 if k == ell else 0.0
            values[k, ell] = (
                float(np.sum(P.values[k][mask] * (base + grads[k][mask])))
                * vol
                / norm
            )
    return values


def dhom(
    P: PeriodicCoefficient,
    grid: CellGrid,
    solution: CellSolutionSet | None = None,
) -> EffectiveTensor:
    """D_hom[k, l] = avg_Y P_k (delta_kl + d_k w^l) from the scalar correctors."""
    if solution is None:
        solution = solve_scalar_cell(P, grid)
    values = _assemble_two_index(P, grid, solution)
    return EffectiveTensor(
        kind="two_index",
        values=values,
        provenance={
            "grid": repr(grid.key),
            "residual_max": float(solution.residuals.max()),
        },
    )


def dhom_perforated(
    grid: CellGrid,
    solution: CellSolutionSet | None = None,
    porosity_scaling: bool = False,
) -> EffectiveTensor:
    """Perforated D_hom with unit coefficient, averaged over the fluid part."""
    P = sample_coefficient(1.0, grid)
    if solution is None:
        solution = solve_scalar_cell(P, grid)
    values = _assemble_two_index(P, grid, solution)
    if porosity_scaling:
        values = values * grid.fluid_fraction
    return EffectiveTensor(
        kind="two_index",
        values=values,
        provenance={
            "grid": repr(grid.key),
            "residual_max": float(solution.residuals.max()),
            "porosity_scaling": porosity_scaling,
            "fluid_fraction": grid.fluid_fraction,
        },
    )


class EffectiveTensorCache:
    """Memoizes B(u) over states quantized to a componentwise lattice.

    States are rounded to the lattice q Z, clipped to [0, 1]; for simplex
    models a rounded state whose components sum above one is pulled back
    onto the simplex by decrementing its largest components, so lattice
    states near the simplex boundary may sit up to q (instead of q/2) from
    the query.  Concurrent lookups may race benignly: both compute, one
    insertion wins, the results agree to solver tolerance.
    """

    def __init__(
        self,
        model: DiffusionModel,
        P: PeriodicCoefficient,
        grid: CellGrid,
        quantization: float = 1e-2,
        delta: float = 1e-6,
        porosity_scaling: bool = False,
    ):
        if quantization <= 0:
            raise ParameterError("quantization step must be positive")
        self.model = model
        self.P = P
        self.grid = grid
        self.q = float(quantization)
        self.delta = float(delta)
        self.perforated = grid.geometry.hole is not None
        self.porosity_scaling = porosity_scaling
        self.operator = CellOperator(P, grid)
        self._store: dict[bytes, EffectiveTensor] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def quantize(self, u) -> np.ndarray:
        uq = np.clip(np.round(np.asarray(u, dtype=float) / self.q) * self.q, 0.0, 1.0)
        if self.model.simplex:
            guard = 0
            while uq.sum() > 1.0 + 1e-12 and guard < 8 * uq.size:
                uq[int(np.argmax(uq))] -= self.q
                guard += 1
            uq = np.maximum(uq, 0.0)
        return uq

    def lookup(self, u) -> EffectiveTensor:
        """Tensor at the lattice point nearest to ``u`` (assembled on miss)."""
        uq = self.quantize(u)
        key = uq.tobytes()
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        if self.perforated:
            tensor = effective_tensor_perforated(
                self.model,
                uq,
                self.grid,
                delta=self.delta,
                operator=self.operator,
                porosity_scaling=self.porosity_scaling,
            )
        else:
            tensor = effective_tensor_local(
                self.model, uq, self.P, self.grid, delta=self.delta,
                operator=self.operator,
            )
        with self._lock:
            self._store.setdefault(key, tensor)
            tensor = self._store[key]
        return tensor

    @property
    def stats(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "size": len(self._store)}
