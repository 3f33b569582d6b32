"""Numerical homogenization of degenerate parabolic cross-diffusion systems."""

from .geometry import (
    CellGeometry,
    CellGrid,
    HoleSpec,
    PeriodicCoefficient,
    build_cell_grid,
    sample_coefficient,
)
from .models import (
    AssumptionReport,
    DiffusionModel,
    builtin_model,
    check_assumptions,
    entropy_gradient_inverse,
    entropy_production_density,
)
from .cellproblem import (
    CellSolutionSet,
    delta_continuation,
    solve_coupled_cell,
    solve_scalar_cell,
)
from .effective import (
    EffectiveTensor,
    EffectiveTensorCache,
    ahat,
    dhom,
    dhom_perforated,
    effective_tensor_local,
    effective_tensor_perforated,
)
from .timestepping import (
    DomainGrid,
    MacroStepperLocal,
    MacroStepperNonlocal,
    MicroStepper,
    StateField,
    TrajectoryLog,
    run_transient,
)
from .harness import ConvergenceReport, emit_report, eps_sweep, load_config

__version__ = "0.1.0"
