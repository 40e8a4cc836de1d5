"""globalsir: SIR epidemic modeling with exogenous global-dynamics forcing.

Pipeline: raw case tables -> derived S/I/R series -> two-step parameter
estimation of the forced SIR model -> goodness-of-fit comparison against
the plain closed model.
"""

from .metrics import FitnessReport, aic, aicc, compare, fitness_report, r_squared
from .models import (
    ExtendedParams,
    GlobalEffects,
    PARAM_NAMES,
    SirParams,
    extended_sir_rhs,
    global_f,
    global_g,
    global_h,
    standard_sir_rhs,
)
from .ode import (
    IntegratorConfig,
    IntegratorStats,
    Method,
    NonFiniteState,
    OdeSystem,
    StepLimitExceeded,
    Trajectory,
    integrate,
)
from .fitting import (
    FitConfig,
    FitResult,
    confidence_intervals,
    fit_step1,
    fit_step2,
    sse_objective,
    two_step_fit,
)
from .pipeline import (
    DescriptiveStats,
    RawCaseTable,
    TimeSeriesTriple,
    derive_sir,
    describe,
    export_triple,
    parse_raw,
    read_triple,
)

__version__ = "0.1.0"
