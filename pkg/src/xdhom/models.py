"""Cross-diffusion model catalog: diffusion matrices, entropy algebra, reactions.

All model callables are vectorized: a state array of shape (n,) or
(n, *extra) is accepted, and matrix-valued functions return
(n, n, *extra).  The admissible region of every registered model is the
open simplex {u_i > 0, sum u_i < 1}; parametrizing states by the entropy
variables w = h'(u) keeps all evaluations strictly inside it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .errors import InputError, ParameterError

__all__ = [
    "DiffusionModel",
    "AssumptionReport",
    "EntropyProduction",
    "builtin_model",
    "logistic_reaction",
    "clamp_state",
    "interior_clamp",
    "entropy_gradient_inverse",
    "entropy_production_density",
    "check_assumptions",
]

LOCAL = "local_degenerate"
NONLOCAL = "nonlocal_degenerate"


def _xlogx(v: np.ndarray) -> np.ndarray:
    # 0*log 0 := 0
    v = np.asarray(v, dtype=float)
    safe = np.maximum(v, np.finfo(float).tiny)
    return np.where(v > 0.0, v * np.log(safe), 0.0)


def _solvent(u: np.ndarray) -> np.ndarray:
    return 1.0 - np.sum(u, axis=0)


def _simplex_h(u: np.ndarray, offset: float) -> np.ndarray:
    """sum_{i=1}^{n+1} u_i log u_i plus an affine normalization."""
    u = np.asarray(u, dtype=float)
    return _xlogx(u).sum(axis=0) + _xlogx(_solvent(u)) + offset


def _simplex_h_grad(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.log(u) - np.log(_solvent(u))


def _simplex_h_hess(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    inv_solvent = 1.0 / _solvent(u)
    out = np.broadcast_to(inv_solvent, (n, n) + u.shape[1:]).copy()
    idx = np.arange(n)
    out[idx, idx] += 1.0 / u
    return out


def _simplex_invert(w: np.ndarray) -> np.ndarray:
    """Stable logit inversion u_i = e^{w_i} / (1 + sum_j e^{w_j})."""
    w = np.asarray(w, dtype=float)
    m = np.maximum(w.max(axis=0), 0.0)
    z = np.exp(w - m)
    denom = np.exp(-m) + z.sum(axis=0)
    return z / denom


@dataclass
class DiffusionModel:
    """A cross-diffusion system with entropy structure.

    ``kind`` distinguishes the porous-medium-type local degeneracy (exponents
    ``s``) from the volume-filling nonlocal degeneracy (diffusivities ``D``).
    ``w_box`` is the logit-space box used to sample interior states.
    """

    name: str
    n: int
    kind: str
    a_mat: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    h_grad: Callable[[np.ndarray], np.ndarray]
    h_hess: Callable[[np.ndarray], np.ndarray]
    invert_h_grad: Callable[[np.ndarray], np.ndarray]
    s: tuple[float, ...] | None = None
    D: tuple[float, ...] | None = None
    reaction: Callable[[np.ndarray], np.ndarray] | None = None
    simplex: bool = True
    # logit sampling box: wide enough to probe the region boundary (the
    # degenerate constants are attained there) yet inside the range where
    # h''(u) A(u) is evaluable without float cancellation beyond ~1e-10
    w_box: tuple[float, float] = (-15.0, 15.0)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (LOCAL, NONLOCAL):
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.kind == LOCAL:
            if self.s is None or len(self.s) != self.n:
                raise ParameterError("local models need one exponent s_i per species")
            if any(si <= -1 for si in self.s):
                raise ParameterError("degeneracy exponents must satisfy s_i > -1")
        else:
            if self.D is None or len(self.D) != self.n:
                raise ParameterError("nonlocal models need one diffusivity per species")
            if any(d <= 0 for d in self.D):
                raise ParameterError("diffusivities must be positive")

    @property
    def key(self) -> tuple:
        return (self.name, self.n, self.kind, tuple(sorted(self.params.items())))

    def production_matrix(self, u: np.ndarray) -> np.ndarray:
        """The matrix h''(u) A(u) whose quadratic form drives entropy decay."""
        return np.einsum("ik...,kj...->ij...", self.h_hess(u), self.a_mat(u))

    def in_region(self, u: np.ndarray, tol: float = 0.0) -> bool:
        """Membership of every state column in the closure of the region."""
        u = np.asarray(u, dtype=float)
        if np.any(u < -tol):
            return False
        if self.simplex and np.any(np.sum(u, axis=0) > 1.0 + tol):
            return False
        return True


def clamp_state(u: np.ndarray, delta: float) -> np.ndarray:
    """The cell-problem clamp u_delta = (u + delta/2) / (1 + delta).

    Maps [0, 1] componentwise into (0, 1); the identity for delta = 0.
    Note: for simplex states with sum u = 1 this leaves the solvent
    fraction at zero (the sum is invariant for n = 2); use
    ``interior_clamp`` where solvent positivity is required.
    """
    if delta == 0.0:
        return np.asarray(u, dtype=float)
    return (np.asarray(u, dtype=float) + delta / 2.0) / (1.0 + delta)


def interior_clamp(u: np.ndarray, delta: float, simplex: bool = True) -> np.ndarray:
    """Clamp into the open region including the solvent fraction.

    For simplex regions: u_delta,j = (u_j + delta/(2n)) / (1 + delta), which
    keeps both every component and 1 - sum u_delta at least of order delta.
    """
    u = np.asarray(u, dtype=float)
    if delta == 0.0:
        return u
    if simplex:
        return (u + delta / (2.0 * u.shape[0])) / (1.0 + delta)
    return (u + delta / 2.0) / (1.0 + delta)


def logistic_reaction(rates) -> Callable[[np.ndarray], np.ndarray]:
    """Reaction f_i(u) = r_i u_i (1 - sum_j u_j), a growth bound of A4 type."""
    rates = np.asarray(rates, dtype=float)

    def f(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        shaped = rates.reshape((-1,) + (1,) * (u.ndim - 1))
        return shaped * u * _solvent(u)

    return f


# ---------------------------------------------------------------------------
# builtin registry
# ---------------------------------------------------------------------------


def _make_biofilm(params: dict) -> DiffusionModel:
    d1 = float(params.get("D1", 1.0))
    d2 = float(params.get("D2", 1.0))
    if d1 <= 0 or d2 <= 0:
        raise ParameterError("biofilm requires D1, D2 > 0")

    def a_mat(u):
        u = np.asarray(u, dtype=float)
        out = np.empty((2, 2) + u.shape[1:])
        out[0, 0] = d1 * (1.0 - u[0])
        out[0, 1] = -d2 * u[0]
        out[1, 0] = -d1 * u[1]
        out[1, 1] = d2 * (1.0 - u[1])
        return out

    return DiffusionModel(
        name="biofilm",
        n=2,
        kind=LOCAL,
        s=(-0.5, -0.5),
        a_mat=a_mat,
        h=lambda u: _simplex_h(u, -1.0),
        h_grad=_simplex_h_grad,
        h_hess=_simplex_h_hess,
        invert_h_grad=_simplex_invert,
        params={"D1": d1, "D2": d2},
    )


def _make_tumor(params: dict) -> DiffusionModel:
    beta = float(params.get("beta", 1.0))
    theta = float(params.get("theta", 1.0))
    if beta <= 0 or theta <= 0:
        raise ParameterError("tumor requires beta, theta > 0")
    if theta >= 4.0 * math.sqrt(beta):
        raise ParameterError(
            "tumor requires theta < 4 sqrt(beta); the coercivity constant "
            "cannot be guaranteed otherwise"
        )

    def a_mat(u):
        u = np.asarray(u, dtype=float)
        u1, u2 = u[0], u[1]
        out = np.empty((2, 2) + u.shape[1:])
        out[0, 0] = 2.0 * u1 * (1.0 - u1) - beta * theta * u1 * u2**2
        out[0, 1] = -2.0 * beta * u1 * u2 * (1.0 + theta * u1)
        out[1, 0] = -2.0 * u1 * u2 + beta * theta * (1.0 - u2) * u2**2
        out[1, 1] = 2.0 * beta * u2 * (1.0 - u2) * (1.0 + theta * u1)
        return out

    return DiffusionModel(
        name="tumor",
        n=2,
        kind=LOCAL,
        s=(0.0, 0.0),
        a_mat=a_mat,
        h=lambda u: _simplex_h(u, -1.0),
        h_grad=_simplex_h_grad,
        h_hess=_simplex_h_hess,
        invert_h_grad=_simplex_invert,
        params={"beta": beta, "theta": theta},
    )


def tumor_coercivity_constant(beta: float, theta: float) -> float:
    """Best lower bound kappa = max_{eps in (0,2)} min(2 - eps, 2 beta (1 - beta theta^2 / (8 eps)))."""
    # the two branches cross where eps solves 2 - eps = 2 beta - beta^2 theta^2 / (4 eps)
    a, b, c = 1.0, 2.0 * beta - 2.0, -(beta * theta) ** 2 / 4.0
    disc = b * b - 4.0 * a * c
    eps = (-b + math.sqrt(disc)) / 2.0
    eps = min(max(eps, 1e-12), 2.0 - 1e-12)
    return min(2.0 - eps, 2.0 * beta * (1.0 - beta * theta**2 / (8.0 * eps)))


def _make_ion_transport(params: dict) -> DiffusionModel:
    n = int(params.get("n", 2))
    if n < 1:
        raise ParameterError("ion_transport requires n >= 1")
    D = params.get("D", [1.0] * n)
    D = tuple(float(d) for d in D)
    if len(D) != n:
        raise ParameterError("ion_transport requires one diffusivity per species")
    if any(d <= 0 for d in D):
        raise ParameterError("ion_transport requires D_i > 0")
    Darr = np.asarray(D)

    def a_mat(u):
        u = np.asarray(u, dtype=float)
        solvent = _solvent(u)
        out = np.empty((n, n) + u.shape[1:])
        for i in range(n):
            for j in range(n):
                out[i, j] = Darr[i] * ((solvent if i == j else 0.0) + u[i])
        return out

    return DiffusionModel(
        name="ion_transport",
        n=n,
        kind=NONLOCAL,
        D=D,
        a_mat=a_mat,
        h=lambda u: _simplex_h(u, float(n)),
        h_grad=_simplex_h_grad,
        h_hess=_simplex_h_hess,
        invert_h_grad=_simplex_invert,
        params={"n": n, "D": D},
    )


def _make_scalar(params: dict) -> DiffusionModel:
    """Single-species benchmark model with a(u) = c0 + c1 u and logit entropy."""
    c0 = float(params.get("c0", 1.0))
    c1 = float(params.get("c1", 0.0))
    if c0 < 0 or c0 + c1 < 0 or (c0 == 0 and c1 == 0):
        raise ParameterError("scalar model requires a(u) = c0 + c1 u > 0 on (0, 1)")

    def a_mat(u):
        u = np.asarray(u, dtype=float)
        return (c0 + c1 * u)[np.newaxis]

    return DiffusionModel(
        name="scalar",
        n=1,
        kind=LOCAL,
        s=(0.0,),
        a_mat=a_mat,
        h=lambda u: _simplex_h(u, -1.0),
        h_grad=_simplex_h_grad,
        h_hess=_simplex_h_hess,
        invert_h_grad=_simplex_invert,
        params={"c0": c0, "c1": c1},
    )


_REGISTRY = {
    "biofilm": _make_biofilm,
    "tumor": _make_tumor,
    "ion_transport": _make_ion_transport,
    "scalar": _make_scalar,
}


def builtin_model(name: str, params: dict | None = None) -> DiffusionModel:
    """Instantiate a registered model by name.

    Registered names: biofilm (D1, D2), tumor (beta, theta with
    theta < 4 sqrt(beta)), ion_transport (n, D), and the single-species
    benchmark model scalar (c0, c1).
    """
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ParameterError(
            f"unknown model {name!r}; available: {sorted(_REGISTRY)}"
        ) from None
    return factory(dict(params or {}))


# ---------------------------------------------------------------------------
# entropy-variable operations
# ---------------------------------------------------------------------------


def entropy_gradient_inverse(model: DiffusionModel, w) -> np.ndarray:
    """Map entropy variables w to the state u = (h')^{-1}(w), strictly interior."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise InputError("entropy variables must be finite")
    if w.shape[0] != model.n:
        raise InputError(f"expected {model.n} entropy variables, got {w.shape[0]}")
    return model.invert_h_grad(w)


class EntropyProduction(NamedTuple):
    value: float
    clamped: bool


def entropy_production_density(
    model: DiffusionModel, u, grad_u, delta: float = 1e-6
) -> EntropyProduction:
    """The quadratic form grad u : h''(u) A(u) grad u at a single state.

    States on the boundary of the region (where h'' is singular) are
    evaluated at the delta-clamped state and flagged.
    """
    u = np.asarray(u, dtype=float)
    grad_u = np.atleast_2d(np.asarray(grad_u, dtype=float))
    clamped = False
    if np.any(u <= 0.0) or (model.simplex and _solvent(u) <= 0.0):
        u = interior_clamp(np.clip(u, 0.0, 1.0), delta, simplex=model.simplex)
        clamped = True
    m = model.production_matrix(u)
    value = float(np.einsum("ik,ij,jk->", grad_u, m, grad_u))
    return EntropyProduction(value, clamped)


# ---------------------------------------------------------------------------
# assumption checking
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    """Extremal constants and violations observed on an interior sample.

    ``alpha_estimate`` is the largest coercivity constant verified on the
    sample, ``CA_estimate`` and ``A6_constant`` the smallest growth constants
    that cover it.  For nonlocal models the three constants are None and the
    structural identity plus the solvent-weighted coercivity bound are
    checked instead.
    """

    model: str
    kind: str
    samples: int
    seed: int
    alpha_estimate: float | None = None
    CA_estimate: float | None = None
    A6_constant: float | None = None
    Cf_estimate: float | None = None
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        payload = {
            "model": self.model,
            "kind": self.kind,
            "samples": self.samples,
            "seed": self.seed,
            "alpha_estimate": self.alpha_estimate,
            "CA_estimate": self.CA_estimate,
            "A6_constant": self.A6_constant,
            "Cf_estimate": self.Cf_estimate,
            "violations": self.violations,
            "ok": self.ok,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _sample_states(model: DiffusionModel, count: int, rng) -> np.ndarray:
    """Interior states via logit-space sampling, shape (n, count).

    The first samples are the deterministic corners of the logit box (they
    push states toward the boundary of the region, where the degenerate
    constants are attained), followed by the center and seeded uniforms.
    """
    lo, hi = model.w_box
    corners = []
    if model.n <= 6:
        for bits in range(2**model.n):
            corners.append([hi if (bits >> i) & 1 else lo for i in range(model.n)])
    corners.append([0.0] * model.n)
    fixed = np.asarray(corners, dtype=float).T
    n_random = max(count - fixed.shape[1], 0)
    w = rng.uniform(lo, hi, size=(model.n, n_random))
    w = np.concatenate([fixed[:, : min(count, fixed.shape[1])], w], axis=1)
    return model.invert_h_grad(w)


def _sphere_design(n: int, rng, extra: int = 16) -> np.ndarray:
    """Axis vectors, a deterministic equiangular/golden set, and seeded points."""
    dirs = [np.eye(n), -np.eye(n)]
    if n == 1:
        det = np.zeros((0, 1))
    elif n == 2:
        angles = (np.arange(extra) + 0.5) * (math.pi / extra)
        det = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        # golden-ratio lattice mapped to the sphere for n = 3, random otherwise
        det = rng.standard_normal((extra, n))
        det /= np.linalg.norm(det, axis=1, keepdims=True)
    rand = rng.standard_normal((extra, n))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    return np.concatenate(dirs + [det, rand], axis=0)


def _check_local(model, states, rng, report):
    tol = 1e-12
    s = np.asarray(model.s)
    alpha = math.inf
    ca = 0.0
    a6 = -math.inf
    cf = -math.inf
    zs = _sphere_design(model.n, rng)
    for col in range(states.shape[1]):
        u = states[:, col]
        a = model.a_mat(u)
        m = model.h_hess(u) @ a
        weights = np.abs(u) ** (2.0 * s)
        msym = 0.5 * (m + m.T)
        candidates = zs
        try:
            _, vecs = scipy.linalg.eigh(msym, np.diag(weights))
            candidates = np.concatenate([zs, vecs.T], axis=0)
        except scipy.linalg.LinAlgError:
            pass
        quad = np.einsum("zi,ij,zj->z", candidates, m, candidates)
        denom = candidates**2 @ weights
        ratios = quad / denom
        worst = int(np.argmin(ratios))
        if ratios[worst] < alpha:
            alpha = float(ratios[worst])
        if ratios[worst] <= tol:
            report.violations.append(
                {
                    "assumption": "A2",
                    "u": u.tolist(),
                    "z": candidates[worst].tolist(),
                }
            )
        # A3: growth of |a_ij| against u_j^{s_j}; the bound is only required
        # for s_j > 0, plain boundedness is recorded otherwise
        growth = np.abs(a) / np.where(s > 0, u**s, 1.0)
        ca = max(ca, float(growth.max()))
        # A6: entrywise upper bound against u_i^{s_i} u_j^{s_j}
        scale = np.outer(u**s, u**s)
        a6 = max(a6, float((m / scale).max()))
        if model.reaction is not None:
            f = model.reaction(u)
            cf = max(cf, float(f @ model.h_grad(u) / (1.0 + model.h(u))))
    report.alpha_estimate = alpha
    report.CA_estimate = ca
    report.A6_constant = a6
    report.Cf_estimate = cf if model.reaction is not None else None


def _check_nonlocal(model, states, rng, report):
    p0 = min(model.D)
    zs = _sphere_design(model.n, rng)
    darr = np.asarray(model.D)
    for col in range(states.shape[1]):
        u = states[:, col]
        solvent = float(_solvent(u))
        a = model.a_mat(u)
        expected = darr[:, None] * (np.diag(np.full(model.n, solvent)) + u[:, None])
        if np.max(np.abs(a - expected)) > 1e-12 * max(1.0, np.abs(a).max()):
            report.violations.append(
                {"assumption": "nonlocal-structure", "u": u.tolist(), "z": None}
            )
            continue
        m = model.h_hess(u) @ a
        quad = np.einsum("zi,ij,zj->z", zs, m, zs)
        bound = p0 * solvent * np.sum(zs**2 / u, axis=1)
        bound += 0.5 * p0 * np.sum(zs, axis=1) ** 2 / solvent
        gap = quad - bound
        worst = int(np.argmin(gap))
        if gap[worst] < -1e-9 * max(1.0, abs(quad[worst])):
            report.violations.append(
                {
                    "assumption": "nonlocal-coercivity",
                    "u": u.tolist(),
                    "z": zs[worst].tolist(),
                }
            )


def check_assumptions(
    model: DiffusionModel, sample_count: int = 1000, rng_seed: int = 0
) -> AssumptionReport:
    """Sample the admissible region and verify the quadratic-form assumptions.

    Local models are checked for the coercivity constant (A2), the growth
    constant of the diffusion entries (A3), and the entrywise bound on
    h''(u) A(u) (A6); candidate directions include the generalized
    eigenvector of the symmetrized quadratic form, so the reported constants
    are sharp on the sample.  Nonlocal models are checked against their
    defining structure and the solvent-weighted coercivity bound instead.
    Deterministic for a given seed.
    """
    if sample_count < 1:
        raise ParameterError("sample_count must be positive")
    rng = np.random.default_rng(rng_seed)
    states = _sample_states(model, sample_count, rng)
    if not model.in_region(states):
        raise InputError("state sampler produced points outside the region")
    report = AssumptionReport(
        model=model.name, kind=model.kind, samples=states.shape[1], seed=rng_seed
    )
    if model.kind == LOCAL:
        _check_local(model, states, rng, report)
    else:
        _check_nonlocal(model, states, rng, report)
    return report
