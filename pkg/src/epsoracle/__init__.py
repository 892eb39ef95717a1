"""Exact optimal DDPM noise predictors for tractable data distributions.

The optimal noise predictor at timestep ``t`` is the posterior mean of the
forward-process noise, ``E[eps_t | x_t]``. For discrete and Gaussian-mixture
data it has a closed form, which this package evaluates and cross-checks
against the marginal score, brute-force integration, least-squares fits and
an ancestral sampler.
"""

from epsoracle.schedule import NoiseSchedule, build_linear_schedule, forward_sample, noise_from_pair
from epsoracle.distributions import (
    Discrete,
    GaussianMixture,
    log_density,
    marginal_qt,
    sample,
    score,
)
from epsoracle.oracle import (
    IdentityReport,
    PosteriorSummary,
    check_identity,
    epsilon_from_score,
    epsilon_star,
    posterior,
)

__all__ = [
    "NoiseSchedule",
    "build_linear_schedule",
    "forward_sample",
    "noise_from_pair",
    "Discrete",
    "GaussianMixture",
    "log_density",
    "marginal_qt",
    "sample",
    "score",
    "IdentityReport",
    "PosteriorSummary",
    "check_identity",
    "epsilon_from_score",
    "epsilon_star",
    "posterior",
]
