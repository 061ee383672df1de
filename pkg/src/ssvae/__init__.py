"""Backward-factorized variational inference for state space models, with
exact desk-scale oracles and numerically checkable risk-bound constants."""

from .models import (
    Dataset,
    FiniteFamily,
    FiniteSSM,
    FrozenFiniteFamily,
    FunctionalARModel,
    build_finite_ssm,
    exact_sequence_law,
    finite_ssm_from_tables,
    sample_sequences,
    theta_dim,
)
from .inference import (
    InferenceResult,
    PathPosterior,
    backward_kernels,
    enumerate_posterior,
    filter_forward,
    smoothing_from_backward,
    tv_distance,
)
from .variational import (
    BackwardFamily,
    BackwardVariational,
    KLChain,
    LossValue,
    VariationalFamily,
    best_backward_approximation,
    elbo,
    empirical_loss,
    exact_posterior_phi,
    kl_backward_chain,
    loss_m,
)
from .bounds import (
    LipschitzEnvelopes,
    MixingCertificate,
    Verdict,
    assumption_a_diagnostic,
    certify_mixing,
    compute_envelopes,
    compute_log_lipschitz_constants,
    compute_h_functions,
    compute_kappas,
    doeblin_contraction_check,
    filter_lipschitz_L,
    gaussian_envelope,
    moment_bound_report,
    orlicz_norm_estimate,
    run_bound_suites,
)
from .estimation import (
    ExperimentConfig,
    FitConfig,
    FitResult,
    SequenceBatch,
    corollary_bound_report,
    exact_risk,
    fit,
    oracle_risk,
    scaling_experiment,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
