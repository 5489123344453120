"""Mild-form stationary HJB solver for controlled Ornstein-Uhlenbeck dynamics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ConvergenceError,
    DegenerateLawError,
    QuadratureBudgetError,
    SmoothingHypothesisError,
)
from .gaussian_semigroup import GaussianLaw, QuadratureRule, apply_Pt, grad_B_Pt, lambda_finite  # noqa: E402
from .grid import GridFunction  # noqa: E402
from .hamiltonian import HamiltonianSpec, feedback_control, h_min, nisio_g, nisio_step  # noqa: E402
from .hjb_solver import (  # noqa: E402
    ConvergenceTrace,
    HJBProblem,
    SolverConfig,
    continuation_solve,
    estimate_lambda0,
    picard_solve,
    residual,
    resolvent_apply,
    solve,
)
from .lifting import LiftedOps, build_lifted, fit_smoothing_exponent, lifted_lambda  # noqa: E402
from .spectral_model import (  # noqa: E402
    CostSpec,
    SpectralModel,
    build_heat_model,
    build_wave_model,
    covariance,
    dirichlet_coefficient,
    flow,
)
