"""Random equilibria and small-gain certificates for stochastic feedback systems."""

from .certify import (
    GainCertificate,
    certify_chain,
    certify_diagonal,
    certify_scalar_optimal,
    certify_single_loop,
    certify_type2,
)
from .config import dumps_model, parse_model
from .gain import (
    EnvelopePair,
    EquilibriumEstimate,
    InputFunction,
    contraction_estimate,
    envelope,
    gain_apply,
    gain_fixed_point,
    gain_fixed_point_ensemble,
    k_operator,
    part_metric,
    part_metric_ensemble,
    sublinearity_check,
)
from .linearflow import LinearSystem, gbm_sup_expectation, gbm_sup_mc, mao_bound
from .models import FeedbackSpec, ModelSpec, builtin
from .sde import integrate_ensemble, integrate_forward, pullback, pullback_convergence, pullback_ensemble
from .wiener import WienerGrid, refine, sample_ensemble, sample_grid, shift, value_at

__version__ = "0.1.0"
