"""Experiment orchestration: configs, eps-sweep studies, report emission.

A single JSON document configures every subcommand; unknown keys are
rejected.  All emitted CSV/SVG/JSON files are byte-deterministic for
identical inputs (floats are written with shortest round-trip repr, the
SVG is generated directly without a plotting library).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import cellproblem, effective, models, timestepping
from .errors import ConfigError, XdhomError
from .geometry import (
    CellGeometry,
    CellGrid,
    HoleSpec,
    build_cell_grid,
    sample_coefficient,
)
from .timestepping import DomainGrid, StateField, TrajectoryLog, run_transient

__all__ = [
    "load_config",
    "validate_config",
    "ConvergenceReport",
    "eps_sweep",
    "emit_report",
    "run_cell",
    "run_effective",
    "run_macro",
    "run_micro",
    "run_check",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_COEFF_KEYS = {
    "constant": {"kind", "values"},
    "piecewise": {"kind", "axis", "breaks", "values"},
    "expression": {"kind", "expr"},
}

_SCHEMA = {
    "description": None,
    "model": {"name": None, "params": "free"},
    "cell": {
        "lengths": None,
        "resolution": None,
        "hole": {"shape": None, "center": None, "size": None},
    },
    "coefficient": "coefficient",
    "delta": None,
    "state": None,
    "cache": {"quantization": None},
    "porosity_scaling": None,
    "domain": {"lengths": None, "resolution": None},
    "initial": {
        "kind": None,
        "base": None,
        "amplitude": None,
        "frequency": None,
        "center": None,
        "width": None,
    },
    "run": {"dt": None, "t_end": None},
    "sweep": {"eps": None, "cells_per_period": None, "macro_resolution": None},
    "seed": None,
}


def _validate_coefficient(spec, path):
    if isinstance(spec, (int, float)):
        return
    if isinstance(spec, list):
        for i, comp in enumerate(spec):
            _validate_coefficient(comp, f"{path}[{i}]")
        return
    if isinstance(spec, dict):
        if "components" in spec:
            extra = set(spec) - {"components"}
            if extra:
                raise ConfigError(f"unknown keys {sorted(extra)} in {path}")
            _validate_coefficient(spec["components"], f"{path}.components")
            return
        kind = spec.get("kind")
        if kind not in _COEFF_KEYS:
            raise ConfigError(f"unknown coefficient kind {kind!r} in {path}")
        extra = set(spec) - _COEFF_KEYS[kind]
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)} in {path}")
        return
    raise ConfigError(f"cannot interpret coefficient spec in {path}")


def _validate_tree(cfg, schema, path="config"):
    if schema == "free":
        return
    if schema == "coefficient":
        _validate_coefficient(cfg, path)
        return
    if schema is None:
        return
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path} must be an object")
    extra = set(cfg) - set(schema)
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)} in {path}")
    for key, value in cfg.items():
        _validate_tree(value, schema[key], f"{path}.{key}")


def validate_config(cfg: dict) -> dict:
    _validate_tree(cfg, _SCHEMA)
    return cfg


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config document must be a JSON object")
    return validate_config(cfg)


def _require(cfg, key):
    if key not in cfg:
        raise ConfigError(f"config is missing the {key!r} section")
    return cfg[key]


def _build_model(cfg) -> models.DiffusionModel:
    spec = _require(cfg, "model")
    if "name" not in spec:
        raise ConfigError("model section needs a name")
    return models.builtin_model(spec["name"], spec.get("params"))


def _build_cell(cfg) -> CellGrid:
    spec = _require(cfg, "cell")
    lengths = spec.get("lengths", [1.0])
    hole = None
    if "hole" in spec:
        h = spec["hole"]
        hole = HoleSpec(h["shape"], tuple(h["center"]), float(h["size"]))
    geometry = CellGeometry(tuple(lengths), hole=hole)
    resolution = spec.get("resolution")
    if resolution is None:
        raise ConfigError("cell section needs a resolution")
    return build_cell_grid(geometry, int(resolution))


def _build_coefficient(cfg, grid: CellGrid):
    if grid.geometry.hole is not None:
        if "coefficient" in cfg:
            raise ConfigError(
                "perforated cells take unit coefficient; remove 'coefficient'"
            )
        return sample_coefficient(1.0, grid)
    return sample_coefficient(cfg.get("coefficient", 1.0), grid)


def _build_domain(cfg) -> DomainGrid:
    spec = _require(cfg, "domain")
    lengths = tuple(float(x) for x in spec.get("lengths", [1.0]))
    resolution = spec.get("resolution")
    if resolution is None:
        raise ConfigError("domain section needs a resolution")
    if isinstance(resolution, int):
        shape = (resolution,) * len(lengths)
    else:
        shape = tuple(int(n) for n in resolution)
    return DomainGrid(lengths, shape)


def _initial_state(cfg, grid: DomainGrid, model) -> StateField:
    spec = _require(cfg, "initial")
    kind = spec.get("kind", "constant")
    base = np.asarray(spec.get("base", [0.0] * model.n), dtype=float)
    if base.size != model.n:
        raise ConfigError("initial base needs one entry per species")
    centers = grid.cell_centers()
    if kind == "constant":
        profile = np.zeros(grid.shape)
        amp = np.zeros(model.n)
    elif kind == "cosine":
        amp = np.asarray(spec.get("amplitude", [0.0] * model.n), dtype=float)
        freq = float(spec.get("frequency", 1.0))
        profile = np.ones(grid.shape)
        for k in range(grid.dim):
            profile = profile * np.cos(freq * math.pi * centers[k] / grid.lengths[k])
    elif kind == "gaussian":
        amp = np.asarray(spec.get("amplitude", [0.0] * model.n), dtype=float)
        cfrac = spec.get("center", [0.5] * grid.dim)
        width = float(spec.get("width", 0.15))
        profile = np.ones(grid.shape)
        for k in range(grid.dim):
            c = float(cfrac[k]) * grid.lengths[k]
            profile = profile * np.exp(
                -(((centers[k] - c) / (width * grid.lengths[k])) ** 2)
            )
    else:
        raise ConfigError(f"unknown initial profile kind {kind!r}")
    if amp.size != model.n:
        raise ConfigError("initial amplitude needs one entry per species")
    u = base[(...,) + (np.newaxis,) * grid.dim] + amp[
        (...,) + (np.newaxis,) * grid.dim
    ] * profile
    return StateField(grid=grid, u=u, t=0.0, model=model)


def _build_stepper(cfg, model, domain: DomainGrid):
    grid = _build_cell(cfg)
    P = _build_coefficient(cfg, grid)
    delta = float(cfg.get("delta", 1e-6))
    porosity = bool(cfg.get("porosity_scaling", False))
    if model.kind == models.NONLOCAL:
        if grid.geometry.hole is not None:
            tensor = effective.dhom_perforated(grid, porosity_scaling=porosity)
        else:
            tensor = effective.dhom(P, grid)
        return timestepping.MacroStepperNonlocal(model, domain, tensor)
    q = float(cfg.get("cache", {}).get("quantization", 1e-2))
    cache = effective.EffectiveTensorCache(
        model, P, grid, quantization=q, delta=delta, porosity_scaling=porosity
    )
    return timestepping.MacroStepperLocal(model, domain, cache)


# ---------------------------------------------------------------------------
# operations behind the CLI subcommands
# ---------------------------------------------------------------------------


def run_cell(cfg: dict) -> dict:
    """Solve the configured cell problems; returns correctors and tensor."""
    grid = _build_cell(cfg)
    P = _build_coefficient(cfg, grid)
    delta = float(cfg.get("delta", 1e-6))
    porosity = bool(cfg.get("porosity_scaling", False))
    perforated = grid.geometry.hole is not None
    if "model" in cfg and cfg["model"].get("name") != "scalar":
        model = _build_model(cfg)
    else:
        model = None
    if model is not None and model.kind == models.LOCAL:
        u = np.asarray(cfg.get("state", [1.0 / (model.n + 1)] * model.n))
        ah = effective.ahat(model, u, delta)
        solution = cellproblem.solve_coupled_cell(ah, P, grid, delta=delta)
        if perforated:
            tensor = effective.effective_tensor_perforated(
                model, u, grid, delta=delta, porosity_scaling=porosity
            )
        else:
            tensor = effective.effective_tensor_local(model, u, P, grid, delta=delta)
    else:
        solution = cellproblem.solve_scalar_cell(P, grid)
        if perforated:
            tensor = effective.dhom_perforated(
                grid, solution=solution, porosity_scaling=porosity
            )
        else:
            tensor = effective.dhom(P, grid, solution=solution)
    return {"solution": solution, "tensor": tensor, "grid": grid}


def run_effective(cfg: dict, state: np.ndarray) -> effective.EffectiveTensor:
    """Assemble the four-index tensor at a given macroscopic state."""
    model = _build_model(cfg)
    grid = _build_cell(cfg)
    delta = float(cfg.get("delta", 1e-6))
    porosity = bool(cfg.get("porosity_scaling", False))
    if model.kind == models.NONLOCAL:
        raise ConfigError(
            "state-dependent tensors apply to local models; nonlocal models "
            "use D_hom from the scalar cell problem (run the cell subcommand)"
        )
    if grid.geometry.hole is not None:
        return effective.effective_tensor_perforated(
            model, state, grid, delta=delta, porosity_scaling=porosity
        )
    P = _build_coefficient(cfg, grid)
    return effective.effective_tensor_local(model, state, P, grid, delta=delta)


def run_macro(cfg: dict) -> tuple[StateField, TrajectoryLog]:
    model = _build_model(cfg)
    domain = _build_domain(cfg)
    stepper = _build_stepper(cfg, model, domain)
    initial = _initial_state(cfg, domain, model)
    run = cfg.get("run", {})
    dt = run.get("dt")
    t_end = float(run.get("t_end", 0.0))
    return run_transient(stepper, initial, t_end, dt=dt)


def run_micro(cfg: dict, eps: float) -> tuple[StateField, TrajectoryLog]:
    model = _build_model(cfg)
    domain = _build_domain(cfg)
    cell = _require(cfg, "cell")
    if "hole" in cell:
        raise ConfigError("perforated-domain micro simulation is not supported")
    lengths = tuple(float(x) for x in cell.get("lengths", [1.0]))
    stepper = timestepping.MicroStepper(
        model, domain, cfg.get("coefficient", 1.0), eps, cell_lengths=lengths
    )
    initial = _initial_state(cfg, domain, model)
    run = cfg.get("run", {})
    dt = run.get("dt")
    t_end = float(run.get("t_end", 0.0))
    return run_transient(stepper, initial, t_end, dt=dt)


def run_check(name: str, params: dict | None, samples: int, seed: int):
    model = models.builtin_model(name, params)
    return models.check_assumptions(model, samples, seed)


# ---------------------------------------------------------------------------
# eps sweep
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Micro-to-macro errors over a decreasing eps list with a fitted rate."""

    eps_list: list
    l1: list
    l2: list
    linf: list
    rate: float | None = None
    fit_residual: float | None = None
    monotone: bool = False
    metadata: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "eps_list": self.eps_list,
            "l1": self.l1,
            "l2": self.l2,
            "linf": self.linf,
            "rate": self.rate,
            "fit_residual": self.fit_residual,
            "monotone": self.monotone,
            "metadata": self.metadata,
            "failures": self.failures,
        }


def conservative_restrict(fine: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Volume average of fine cells onto a coarser grid (sizes must divide)."""
    n = fine.shape[0]
    fshape = fine.shape[1:]
    for nf, nc in zip(fshape, shape):
        if nf % nc != 0:
            raise ConfigError("fine resolution must be a multiple of the coarse one")
    if len(shape) == 1:
        f = fshape[0] // shape[0]
        return fine.reshape(n, shape[0], f).mean(axis=2)
    f1 = fshape[0] // shape[0]
    f2 = fshape[1] // shape[1]
    return fine.reshape(n, shape[0], f1, shape[1], f2).mean(axis=(2, 4))


def _norms(diff: np.ndarray, vol: float) -> tuple[float, float, float]:
    return (
        float(np.sum(np.abs(diff)) * vol),
        float(math.sqrt(np.sum(diff**2) * vol)),
        float(np.abs(diff).max()),
    )


def _fit_rate(eps, errors):
    x = np.log(np.asarray(eps))
    y = np.log(np.asarray(errors))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(math.sqrt(np.mean(resid**2)))


def eps_sweep(cfg: dict) -> ConvergenceReport:
    """One macro run plus one micro run per eps; errors at t = t_end.

    Micro solutions are conservatively averaged onto the macro grid before
    the norms are taken.  The macro reference is grid-checked against a
    doubled resolution; the gap is logged in the metadata.
    """
    sweep = _require(cfg, "sweep")
    eps_list = [float(e) for e in sweep.get("eps", [])]
    if not eps_list:
        raise ConfigError("sweep needs a nonempty eps list")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps list must be strictly decreasing")
    for eps in eps_list:
        if abs(round(1.0 / eps) - 1.0 / eps) > 1e-9:
            raise ConfigError(f"eps = {eps} is not the reciprocal of an integer")
    cells_per_period = int(sweep.get("cells_per_period", 16))
    if cells_per_period < 8:
        raise ConfigError("cells_per_period must be at least 8")

    model = _build_model(cfg)
    domain = _build_domain(cfg)
    cell = _require(cfg, "cell")
    cell_lengths = tuple(float(x) for x in cell.get("lengths", [1.0]))
    run = cfg.get("run", {})
    dt = run.get("dt")
    t_end = float(run.get("t_end", 0.0))
    vol = domain.cell_volume

    # periods must tile the domain and the micro grid must refine the macro one
    micro_shapes = {}
    for eps in eps_list:
        shape = []
        for L, b, n_macro in zip(domain.lengths, cell_lengths, domain.shape):
            periods = L / (eps * b)
            if abs(round(periods) - periods) > 1e-9:
                raise ConfigError(
                    f"eps = {eps}: periods do not tile the domain (L/(eps b) = {periods})"
                )
            n_micro = int(round(periods)) * cells_per_period
            if n_micro % n_macro != 0:
                raise ConfigError(
                    f"eps = {eps}: micro resolution {n_micro} is not a multiple "
                    f"of the macro resolution {n_macro}"
                )
            shape.append(n_micro)
        micro_shapes[eps] = tuple(shape)

    # macro reference and its grid-convergence self-check
    stepper = _build_stepper(cfg, model, domain)
    initial = _initial_state(cfg, domain, model)
    macro_final, _ = run_transient(stepper, initial, t_end, dt=dt)

    fine_domain = DomainGrid(domain.lengths, tuple(2 * n for n in domain.shape))
    fine_stepper = _build_stepper(cfg, model, fine_domain)
    fine_initial = _initial_state(cfg, fine_domain, model)
    fine_final, _ = run_transient(fine_stepper, fine_initial, t_end, dt=dt)
    restricted = conservative_restrict(fine_final.u, domain.shape)
    _, selfcheck_gap, _ = _norms(restricted - macro_final.u, vol)

    report = ConvergenceReport(
        eps_list=[], l1=[], l2=[], linf=[],
        metadata={
            "macro_resolution": list(domain.shape),
            "cells_per_period": cells_per_period,
            "dt": dt if dt is not None else timestepping.default_dt(domain),
            "t_end": t_end,
            "macro_selfcheck_gap_l2": selfcheck_gap,
        },
    )
    for eps in eps_list:
        micro_domain = DomainGrid(domain.lengths, micro_shapes[eps])
        try:
            micro_stepper = timestepping.MicroStepper(
                model,
                micro_domain,
                cfg.get("coefficient", 1.0),
                eps,
                cell_lengths=cell_lengths,
            )
            micro_initial = _initial_state(cfg, micro_domain, model)
            micro_final, _ = run_transient(micro_stepper, micro_initial, t_end, dt=dt)
        except XdhomError as exc:
            report.eps_list.append(eps)
            report.l1.append(None)
            report.l2.append(None)
            report.linf.append(None)
            report.failures.append({"eps": eps, "error": str(exc)})
            continue
        averaged = conservative_restrict(micro_final.u, domain.shape)
        l1, l2, linf = _norms(averaged - macro_final.u, vol)
        report.eps_list.append(eps)
        report.l1.append(l1)
        report.l2.append(l2)
        report.linf.append(linf)

    good = [
        (e, l2) for e, l2 in zip(report.eps_list, report.l2) if l2 is not None
    ]
    if len(good) >= 3:
        report.rate, report.fit_residual = _fit_rate(
            [g[0] for g in good], [g[1] for g in good]
        )
    values = [g[1] for g in good]
    report.monotone = all(b < a for a, b in zip(values, values[1:]))
    if values:
        report.metadata["macro_selfcheck_ok"] = bool(
            selfcheck_gap < 0.1 * min(values)
        )
    return report


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return repr(float(x))


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _svg_loglog(report: ConvergenceReport) -> str:
    pts = [
        (e, v) for e, v in zip(report.eps_list, report.l2) if v is not None and v > 0
    ]
    width, height = 480, 360
    ml, mr, mt, mb = 60, 20, 20, 50
    xs = [math.log10(p[0]) for p in pts]
    ys = [math.log10(p[1]) for p in pts]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax - xmin < 1e-12:
        xmax = xmin + 1.0
    if ymax - ymin < 1e-12:
        ymax = ymin + 1.0
    pad = 0.05

    def sx(x):
        t = (x - xmin) / (xmax - xmin)
        t = pad + (1 - 2 * pad) * t
        return ml + t * (width - ml - mr)

    def sy(y):
        t = (y - ymin) / (ymax - ymin)
        t = pad + (1 - 2 * pad) * t
        return height - mb - t * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" '
        'stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
        f'<text x="{(ml + width - mr) / 2:.1f}" y="{height - 12}" '
        'text-anchor="middle" font-size="14">eps (log)</text>',
        f'<text x="16" y="{(mt + height - mb) / 2:.1f}" text-anchor="middle" '
        f'font-size="14" transform="rotate(-90 16 {(mt + height - mb) / 2:.1f})">'
        "L2 error (log)</text>",
    ]
    for x, y, (e, v) in zip(xs, ys, pts):
        parts.append(
            f'<line x1="{sx(x):.2f}" y1="{height - mb}" x2="{sx(x):.2f}" '
            f'y2="{height - mb + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(x):.2f}" y="{height - mb + 18}" text-anchor="middle" '
            f'font-size="10">{e:.4g}</text>'
        )
        parts.append(
            f'<text x="{ml - 8:.2f}" y="{sy(y) + 3:.2f}" text-anchor="end" '
            f'font-size="10">{v:.3g}</text>'
        )
    if report.rate is not None and len(pts) >= 2:
        # overlay the least-squares fit line
        slope = report.rate
        x0, x1 = xs[0], xs[-1]
        xbar = sum(xs) / len(xs)
        ybar = sum(ys) / len(ys)
        y0 = ybar + slope * (x0 - xbar)
        y1 = ybar + slope * (x1 - xbar)
        parts.append(
            f'<line x1="{sx(x0):.2f}" y1="{sy(y0):.2f}" x2="{sx(x1):.2f}" '
            f'y2="{sy(y1):.2f}" stroke="red" stroke-dasharray="5,3"/>'
        )
        parts.append(
            f'<text x="{width - mr - 6}" y="{mt + 14}" text-anchor="end" '
            f'font-size="12" fill="red">fitted rate {slope:.3f}</text>'
        )
    poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{poly}" fill="none" stroke="steelblue"/>')
    for x, y in zip(xs, ys):
        parts.append(
            f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="steelblue"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _sweep_csv(report: ConvergenceReport) -> str:
    lines = ["eps,l1_error,l2_error,linf_error"]
    for eps, l1, l2, linf in zip(
        report.eps_list, report.l1, report.l2, report.linf
    ):
        lines.append(f"{_fmt(eps)},{_fmt(l1)},{_fmt(l2)},{_fmt(linf)}")
    return "\n".join(lines) + "\n"


def _trajectory_csv(log: TrajectoryLog) -> str:
    n = len(log.mass[0]) if log.mass else 0
    header = ["t", "H", "production"] + [f"mass_{i + 1}" for i in range(n)]
    header += ["newton_iters", "dt"]
    lines = [",".join(header)]
    for k in range(len(log)):
        row = [_fmt(log.t[k]), _fmt(log.H[k]), _fmt(log.production[k])]
        row += [_fmt(m) for m in log.mass[k]]
        row += [str(log.newton_iters[k]), _fmt(log.dt[k])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _tensor_csv(tensor: effective.EffectiveTensor) -> str:
    lines = ["k,l,value"]
    d = tensor.values.shape[0]
    for k in range(d):
        for ell in range(d):
            lines.append(f"{k + 1},{ell + 1},{_fmt(tensor.values[k, ell])}")
    return "\n".join(lines) + "\n"


def _correctors_csv(solution: cellproblem.CellSolutionSet) -> str:
    grid = solution.grid
    coords = grid.node_coordinates().reshape(grid.dim, -1)
    header = [f"y{k + 1}" for k in range(grid.dim)]
    columns = []
    if solution.kind == "scalar":
        for ell in range(grid.dim):
            header.append(f"w_l{ell + 1}")
            columns.append(solution.fields[ell].ravel())
    else:
        d, n = solution.fields.shape[0], solution.fields.shape[1]
        for k in range(d):
            for ell in range(n):
                for j in range(n):
                    header.append(f"W_k{k + 1}_l{ell + 1}_j{j + 1}")
                    columns.append(solution.fields[k, ell, j].ravel())
    lines = [",".join(header)]
    for row in range(coords.shape[1]):
        vals = [_fmt(coords[k, row]) for k in range(grid.dim)]
        vals += [_fmt(col[row]) for col in columns]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def _state_csv(state: StateField) -> str:
    grid = state.grid
    coords = grid.cell_centers().reshape(grid.dim, -1)
    flat = state.u.reshape(state.model.n, -1)
    header = [f"x{k + 1}" for k in range(grid.dim)]
    header += [f"u_{i + 1}" for i in range(state.model.n)]
    lines = [",".join(header)]
    for row in range(coords.shape[1]):
        vals = [_fmt(coords[k, row]) for k in range(grid.dim)]
        vals += [_fmt(flat[i, row]) for i in range(state.model.n)]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def _json_text(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_report(obj, out_dir: str) -> list[str]:
    """Write CSV/JSON/SVG artifacts for the given result object.

    Returns the list of written paths; outputs are byte-deterministic for
    identical inputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        _write(path, text)
        written.append(path)

    if isinstance(obj, ConvergenceReport):
        emit("sweep.csv", _sweep_csv(obj))
        emit("sweep.json", _json_text(obj.to_json_dict()))
        if any(v is not None and v > 0 for v in obj.l2):
            emit("sweep.svg", _svg_loglog(obj))
    elif isinstance(obj, TrajectoryLog):
        emit("trajectory.csv", _trajectory_csv(obj))
    elif isinstance(obj, effective.EffectiveTensor):
        emit("tensor.json", _json_text(obj.to_json_dict()))
        if obj.kind == "two_index":
            emit("tensor.csv", _tensor_csv(obj))
    elif isinstance(obj, cellproblem.CellSolutionSet):
        emit("correctors.csv", _correctors_csv(obj))
    elif isinstance(obj, StateField):
        emit("final_state.csv", _state_csv(obj))
    else:
        raise ConfigError(f"cannot emit a report for {type(obj).__name__}")
    return written
