"""Simulation and regularized control synthesis for impulsive evolution equations."""

from .exceptions import (
    ConfigError,
    ControllabilityWarning,
    ConvergenceError,
    DimensionError,
    DivergenceError,
)
from .gramian import A0Report, GramianSet, a0_diagnostic, assemble, input_to_terminal_matrix, resolvent_solve
from .models import (
    PRESETS,
    heat_input_map,
    make_heat,
    make_preset,
    make_rotation_example,
    make_wave,
    rotation_example_inputs,
    truncation_change,
)
from .neutral import (
    HistorySegment,
    NeutralSystem,
    NeutralTerm,
    neutral_alpha_sweep,
    neutral_dense_oracle,
    neutral_mild_solve,
    neutral_synthesize,
)
from .operators import (
    ImpulsiveSystem,
    Nonlinearity,
    SemigroupModel,
    downstream_map,
    downstream_maps,
    evolve,
    evolve_adjoint,
    jump_apply,
)
from .propagator import Trajectory, dense_oracle, mild_solve_linear, mild_solve_semilinear
from .quadrature import QuadratureGrid
from .synthesis import (
    DEFAULT_ALPHAS,
    ControlLaw,
    LemmaCheck,
    SweepRow,
    SynthesisResult,
    alpha_sweep,
    forcing_on_nodes,
    kernel_component,
    moment_vector,
    predicted_deviation,
    semilinear_synthesize,
    synthesize,
    verify_lemma31,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
