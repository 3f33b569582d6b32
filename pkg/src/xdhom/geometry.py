"""Periodicity cell, perforations, periodic grids, and oscillatory coefficients.

The cell Y = (0, b_1) x ... x (0, b_d) is discretized with a uniform
tensor-product grid whose nodes are periodically identified (node 0 and
node N on each axis are the same unknown).  A perforation Y_0 is realized
as a staircase mask over elements: an element belongs to the hole iff its
center does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CoefficientError, GeometryError, ResolutionError

__all__ = [
    "HoleSpec",
    "CellGeometry",
    "CellGrid",
    "PeriodicCoefficient",
    "build_cell_grid",
    "coefficient_fn",
    "sample_coefficient",
    "expand_periodic",
]


@dataclass(frozen=True)
class HoleSpec:
    """Axis-aligned box or ball removed from the cell.

    ``size`` is the side length for a box and the radius for a ball.
    """

    shape: str
    center: tuple[float, ...]
    size: float

    def __post_init__(self):
        if self.shape not in ("box", "ball"):
            raise GeometryError(f"unsupported hole shape {self.shape!r}")
        if self.size <= 0:
            raise GeometryError("hole size must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict membership of points (shape (d, ...)) in the open hole."""
        c = np.asarray(self.center).reshape((-1,) + (1,) * (points.ndim - 1))
        if self.shape == "box":
            half = 0.5 * self.size
            return np.all(np.abs(points - c) < half, axis=0)
        return np.sum((points - c) ** 2, axis=0) < self.size**2


@dataclass(frozen=True)
class CellGeometry:
    """The periodicity cell Y with an optional reference hole Y_0."""

    lengths: tuple[float, ...]
    hole: HoleSpec | None = None

    def __post_init__(self):
        lengths = tuple(float(b) for b in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) not in (1, 2):
            raise GeometryError("only 1-D and 2-D cells are supported")
        if any(b <= 0 for b in lengths):
            raise GeometryError("cell side lengths must be strictly positive")
        if self.hole is not None:
            if len(lengths) != 2:
                raise GeometryError("a perforation requires a 2-D cell")
            if len(self.hole.center) != 2:
                raise GeometryError("hole center dimension mismatch")
            self._check_hole_inside()

    def _check_hole_inside(self):
        # closure of the hole must stay strictly inside Y
        hole = self.hole
        for k, b in enumerate(self.lengths):
            if hole.shape == "box":
                reach = 0.5 * hole.size
            else:
                reach = hole.size
            if hole.center[k] - reach <= 0 or hole.center[k] + reach >= b:
                raise GeometryError(
                    "hole closure must be strictly contained in the cell"
                )

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def key(self) -> tuple:
        hole = self.hole
        hk = None if hole is None else (hole.shape, hole.center, hole.size)
        return (self.lengths, hk)


@dataclass(frozen=True)
class CellGrid:
    """Uniform periodic grid on the cell with a fluid mask chi_{Y_1}.

    ``mask`` has one boolean per element (True = fluid, i.e. element lies in
    Y_1); it is all ones without a hole.  Nodes are stored once per axis
    (periodic identification), so fields on the grid have shape
    ``(N,) * dim``.
    """

    geometry: CellGeometry
    resolution: int
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.mask.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.geometry.dim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(b / self.resolution for b in self.geometry.lengths)

    @property
    def element_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def cell_measure(self) -> float:
        return self.geometry.measure

    @property
    def fluid_measure(self) -> float:
        return float(np.count_nonzero(self.mask)) * self.element_volume

    @property
    def fluid_fraction(self) -> float:
        return self.fluid_measure / self.cell_measure

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.resolution**self.dim

    @property
    def key(self) -> tuple:
        return (self.geometry.key, self.resolution)

    def element_centers(self) -> np.ndarray:
        """Coordinates of element centers, shape (dim,) + mask.shape."""
        axes = [
            (np.arange(self.resolution) + 0.5) * h for h in self.spacing
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def node_coordinates(self) -> np.ndarray:
        """Coordinates of the identified nodes, shape (dim,) + node_shape."""
        axes = [np.arange(self.resolution) * h for h in self.spacing]
        return np.stack(np.meshgrid(*axes, indexing="ij"))


def build_cell_grid(geometry: CellGeometry, resolution: int) -> CellGrid:
    """Build the periodic discrete grid and the staircase perforation mask.

    Raises ``ResolutionError`` when the resolution is below 4 per axis or the
    hole is too small to cover a single element center.
    """
    resolution = int(resolution)
    if resolution < 4:
        raise ResolutionError("resolution must be at least 4 per axis")
    shape = (resolution,) * geometry.dim
    if geometry.hole is None:
        mask = np.ones(shape, dtype=bool)
        return CellGrid(geometry, resolution, mask)

    grid = CellGrid(geometry, resolution, np.ones(shape, dtype=bool))
    centers = grid.element_centers()
    inside = geometry.hole.contains(centers)
    if not inside.any():
        raise ResolutionError(
            "resolution too small: the hole does not cover any element"
        )
    if inside.all():
        raise GeometryError("hole covers the whole cell")
    return CellGrid(geometry, resolution, ~inside)


# ---------------------------------------------------------------------------
# coefficient fields P(y) = diag(P_1(y), ..., P_d(y))
# ---------------------------------------------------------------------------

_EXPR_NAMES = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "pi": math.pi,
}


def _component_fn(comp, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Resolve one diagonal entry spec to a callable on points (dim, ...)."""
    if callable(comp):
        return comp
    if isinstance(comp, (int, float)):
        value = float(comp)
        return lambda y: np.full(y.shape[1:], value)
    if isinstance(comp, dict):
        kind = comp.get("kind")
        if kind == "piecewise":
            axis = int(comp.get("axis", 0))
            if not 0 <= axis < dim:
                raise CoefficientError(f"piecewise axis {axis} out of range")
            breaks = np.asarray(comp["breaks"], dtype=float)
            values = np.asarray(comp["values"], dtype=float)
            if values.size != breaks.size + 1:
                raise CoefficientError(
                    "piecewise spec needs len(values) == len(breaks) + 1"
                )
            if breaks.size and np.any(np.diff(breaks) <= 0):
                raise CoefficientError("piecewise breaks must be increasing")

            def piecewise(y, axis=axis, breaks=breaks, values=values):
                idx = np.searchsorted(breaks, y[axis], side="right")
                return values[idx]

            return piecewise
        if kind == "expression":
            expr = comp["expr"]
            code = compile(expr, "<coefficient>", "eval")

            def expression(y, code=code):
                ns = dict(_EXPR_NAMES)
                for k in range(y.shape[0]):
                    ns[f"y{k + 1}"] = y[k]
                out = eval(code, {"__builtins__": {}}, ns)
                return np.broadcast_to(np.asarray(out, dtype=float), y.shape[1:])

            return expression
        raise CoefficientError(f"unknown coefficient kind {kind!r}")
    raise CoefficientError(f"cannot interpret coefficient component {comp!r}")


def coefficient_fn(spec, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a coefficient spec into ``f(points) -> values``.

    ``points`` has shape (dim, ...); the result has shape (dim,) + points
    trailing shape, one field per diagonal entry of P.  Accepted specs: a
    scalar, a length-d sequence of scalars, a callable, a single component
    dict (broadcast to all axes), or ``{"components": [...]}`` with one entry
    per axis.
    """
    if callable(spec):
        return spec
    if isinstance(spec, dict) and "components" in spec:
        comps = spec["components"]
        if len(comps) != dim:
            raise CoefficientError(
                f"expected {dim} coefficient components, got {len(comps)}"
            )
    elif isinstance(spec, dict) and spec.get("kind") == "constant":
        comps = spec["values"]
        if np.isscalar(comps):
            comps = [comps] * dim
        if len(comps) != dim:
            raise CoefficientError(
                f"expected {dim} constant values, got {len(comps)}"
            )
    elif isinstance(spec, (int, float)) or isinstance(spec, dict):
        comps = [spec] * dim
    elif isinstance(spec, Sequence):
        if len(spec) != dim:
            raise CoefficientError(
                f"expected {dim} coefficient components, got {len(spec)}"
            )
        comps = list(spec)
    else:
        raise CoefficientError(f"cannot interpret coefficient spec {spec!r}")

    fns = [_component_fn(c, dim) for c in comps]

    def evaluate(points: np.ndarray) -> np.ndarray:
        return np.stack([fn(points) for fn in fns])

    return evaluate


@dataclass(frozen=True)
class PeriodicCoefficient:
    """Diagonal coefficient P sampled at element centers.

    ``values`` has shape (dim,) + mask.shape; ``d0`` is the exact minimum of
    the samples and must be positive (lower ellipticity bound).
    """

    values: np.ndarray = field(repr=False)
    d0: float
    grid: CellGrid

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def key(self) -> tuple:
        return (self.grid.key, self.values.tobytes())


def sample_coefficient(spec, grid: CellGrid) -> PeriodicCoefficient:
    """Sample a coefficient spec at the element centers of ``grid``.

    Every sample must be positive and finite; the recorded lower bound d0 is
    the exact minimum over the samples.
    """
    fn = coefficient_fn(spec, grid.dim)
    values = np.asarray(fn(grid.element_centers()), dtype=float)
    expected = (grid.dim,) + grid.mask.shape
    if values.shape != expected:
        raise CoefficientError(
            f"coefficient samples have shape {values.shape}, expected {expected}"
        )
    if not np.all(np.isfinite(values)):
        raise CoefficientError("coefficient samples must be finite")
    d0 = float(values.min())
    if d0 <= 0:
        raise CoefficientError(
            f"coefficient must be strictly positive (min sample {d0})"
        )
    return PeriodicCoefficient(values, d0, grid)


def expand_periodic(field_values: np.ndarray, grid_dim: int) -> np.ndarray:
    """Append the periodic copies so boundary nodes appear explicitly.

    The last ``grid_dim`` axes of shape N become N+1, the new slice carrying
    the values of the identified node 0.  Useful for dumps and plotting.
    """
    out = np.asarray(field_values)
    for axis in range(out.ndim - grid_dim, out.ndim):
        first = np.take(out, [0], axis=axis)
        out = np.concatenate([out, first], axis=axis)
    return out
