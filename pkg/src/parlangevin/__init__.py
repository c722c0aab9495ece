"""Picard-parallel Langevin samplers and a hypercube sampler built on them."""

__version__ = "0.1.0"

from parlangevin.diagnostics import (
    GaussianFit,
    discrete_tv,
    empirical_gaussian_fit,
    gaussian_kl,
    gaussian_w2,
    pinsker_tv_bound,
    residual_ratio_report,
    talagrand_w2_bound,
)
from parlangevin.discrete import (
    HypercubeDistribution,
    InnerSamplerConfig,
    approximate_wrapper,
    convolved_score,
    log_laplace_enum,
    make_enum_oracle,
    make_product_oracle,
    run_localization_sampler,
    tilted_mean_from_laplace,
    verify_tilt_covariance_bound,
)
from parlangevin.lmc import GridSchedule, plan_lmc_params, run_parallel_lmc, run_sequential_lmc
from parlangevin.noise import sample_brownian_grid, sample_ulmc_noise_grid, ulmc_noise_covariance
from parlangevin.score import (
    QueryLedger,
    ScoreOracle,
    TargetModel,
    make_gaussian_mixture_target,
    make_gaussian_target,
    perturb_score,
)
from parlangevin.ulmc import plan_ulmc_params, run_parallel_ulmc, run_sequential_ulmc
