"""Stochastic energy-exchange chains on a ring.

Pair-exchange rate kernels with scale covariance, exchange symmetry, and
detailed balance with respect to product gamma measures; the static
conductivity constants attached to them; variational upper bounds on the
thermal conductivity over cylinder-function trial spaces; and event-driven
Green-Kubo simulation of the chain itself.
"""

__version__ = "0.1.0"

from .numerics import (
    QuadratureSpec,
    QuadratureResult,
    RngStream,
    elliptic_K,
    log_gamma,
    integrate_1d,
    integrate_2d_unit_square,
    sample_gamma,
)
from .kernels import Kernel, ConditionReport, make_kernel, eval_W, eval_tilde, check_conditions
from .observables import (
    GradientInconsistencyError,
    KappaSResult,
    PairObservables,
    StaticReport,
    nu,
    j,
    h,
    pair_observables,
    kappa_f,
    kappa_1,
    kappa_2,
    kappa_s,
    check_identity,
    check_condition_3_4,
    equilibrium_average,
    tilde_j,
    gradient_defect,
    is_gradient,
    static_report,
)
from .simulator import (
    ChainState,
    SimConfig,
    GreenKuboEstimate,
    InvarianceReport,
    TablesNotBuilt,
    build_sampler,
    sample_exchange,
    init_equilibrium,
    step,
    run_green_kubo,
    scaling_check,
    diffusivity,
    equilibrium_invariance_test,
)

__all__ = [
    "__version__",
    "QuadratureSpec",
    "QuadratureResult",
    "RngStream",
    "elliptic_K",
    "log_gamma",
    "integrate_1d",
    "integrate_2d_unit_square",
    "sample_gamma",
    "Kernel",
    "ConditionReport",
    "make_kernel",
    "eval_W",
    "eval_tilde",
    "check_conditions",
    "GradientInconsistencyError",
    "KappaSResult",
    "PairObservables",
    "StaticReport",
    "nu",
    "j",
    "h",
    "pair_observables",
    "kappa_f",
    "kappa_1",
    "kappa_2",
    "kappa_s",
    "check_identity",
    "check_condition_3_4",
    "equilibrium_average",
    "tilde_j",
    "gradient_defect",
    "is_gradient",
    "static_report",
    "ChainState",
    "SimConfig",
    "GreenKuboEstimate",
    "InvarianceReport",
    "TablesNotBuilt",
    "build_sampler",
    "sample_exchange",
    "init_equilibrium",
    "step",
    "run_green_kubo",
    "scaling_check",
    "diffusivity",
    "equilibrium_invariance_test",
]
