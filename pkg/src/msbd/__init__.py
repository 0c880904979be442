"""Multichannel sparse blind deconvolution on the sphere.

Recovers a signal ``f`` and sparse channels ``x_i`` from ``y_i = x_i (*) f``
by minimizing a preconditioned negative fourth-power objective with
(perturbed) manifold gradient descent.
"""

from .fourier import Lattice, LatticeError, circ_conv, circ_shift, circulant_apply, dft, idft, idft_real
from .landscape import (
    LandscapeParams,
    Region,
    classify_region,
    enumerate_stationary_points,
    expected_rgrad,
    expected_rhess,
    monte_carlo_expectation_check,
    verify_partition_bounds,
)
from .objective import Objective, eval_objective, min_tangent_curvature, riemannian_gradient, riemannian_hvp
from .optimize import (
    OptimizerConfig,
    Trace,
    mgd_step,
    practical_schedule,
    random_sphere_init,
    run,
    tangent_perturbation,
    theoretical_schedule,
)
from .precondition import Preconditioner, RankDeficientError, apply_R, build_preconditioner, precond_gram_residual
from .recovery import RecoveryResult, accuracy_metric, align, recover, spectral_ratio_metric
from .synthesis import (
    GroundTruthInstance,
    NoiseSpec,
    ObservationSet,
    embed_linear_conv,
    gen_bernoulli_rademacher_channels,
    gen_conditioned_signal,
    gen_gaussian_signal,
    gen_joint_sparse_complex,
    observe,
    random_instance,
)

__version__ = "0.1.0"

__all__ = [
    "Lattice",
    "LatticeError",
    "circ_conv",
    "circ_shift",
    "circulant_apply",
    "dft",
    "idft",
    "idft_real",
    "LandscapeParams",
    "Region",
    "classify_region",
    "enumerate_stationary_points",
    "expected_rgrad",
    "expected_rhess",
    "monte_carlo_expectation_check",
    "verify_partition_bounds",
    "Objective",
    "eval_objective",
    "min_tangent_curvature",
    "riemannian_gradient",
    "riemannian_hvp",
    "OptimizerConfig",
    "Trace",
    "mgd_step",
    "practical_schedule",
    "random_sphere_init",
    "run",
    "tangent_perturbation",
    "theoretical_schedule",
    "Preconditioner",
    "RankDeficientError",
    "apply_R",
    "build_preconditioner",
    "precond_gram_residual",
    "RecoveryResult",
    "accuracy_metric",
    "align",
    "recover",
    "spectral_ratio_metric",
    "GroundTruthInstance",
    "NoiseSpec",
    "ObservationSet",
    "embed_linear_conv",
    "gen_bernoulli_rademacher_channels",
    "gen_conditioned_signal",
    "gen_gaussian_signal",
    "gen_joint_sparse_complex",
    "observe",
    "random_instance",
]
