"""Kelly wagers with uncertain multinomial-logit probabilities."""

from ._core import (
    KellyError,
    SeparationError,
    SolverError,
    cc2_tilt,
    expected_log_wealth,
    fit_mle,
    jensen_lb,
    log_likelihood,
    mc_probs,
    neg_hessian,
    normal_cdf,
    normal_quantile,
    point_probs,
    sample_mvn,
    score,
    simulate,
    solve_standard,
    wager,
)

__version__ = "0.1.0"
