"""Noisy subspace iteration with large-gap noise tolerances, plus its
distributed private and streaming instantiations."""

from .linalg import (
    EigenDecomposition,
    NumericalError,
    matrix_norm,
    orthonormal_complement,
    pseudo_inverse,
    qr_factorize,
    sym_eig,
)
from .matgen import SpectrumSpec, gaussian_matrix, random_orthonormal, synth_psd
from .metrics import (
    AngleProbe,
    approx_error_ratio,
    cos_theta,
    rank_k_perturbation,
    sin_theta,
    tan_theta,
)
from .npm import (
    IterationTrace,
    NoiseModel,
    RunConfig,
    ToleranceBudget,
    check_noise_compliance,
    gap_independent_iterations,
    gap_independent_tolerance,
    gaussian_stddev_for_budget,
    noise_tolerance,
    noisy_power_method,
    prior_noise_tolerance,
    prior_required_iterations,
    required_iterations,
)
from .dppca import (
    CommLedger,
    NodeData,
    PrivacyParams,
    calibrate_noise,
    distributed_private_pca,
    incoherence,
    utility_bound_expression,
)
from .streaming import (
    SampleStream,
    gaussian_stream,
    round_check,
    sample_complexity_expression,
    streaming_pca,
)
from .rng import RandomSource

__version__ = "0.1.0"
