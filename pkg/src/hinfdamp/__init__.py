"""H-infinity optimal viscous damper gains via greedy parametric interpolation.

The closed-loop transfer function of a damped second-order system is reduced
by interpolatory projection, the gains are optimized on the reduced model,
and the model is refined at the full-order H-infinity maximizer until the
gains settle.
"""
from .bench import (
    OscillatorSpec,
    build_oscillator,
    desk_spec,
    naive_optimize,
    paper_spec,
    sweep_configurations,
)
from .grad import GradientContext, gradient_context, hinf_gradient, smoothness_diagnostics
from .kernels import BACKEND as KERNEL_BACKEND
from .linf import NormResult, StateSpace, UnboundedNormError, hinf_greedy, linf_dense
from .modal import critical_damping, initial_frequencies, modal_transform
from .model import (
    AffineClosedLoop,
    FrequencyResponseSample,
    PoleProximityError,
    ValidationError,
    VibrationalSystem,
    assemble_closed_loop,
    eval_sigma_max,
    eval_transfer,
)
from .optim import DampingOptResult, OptimizerConfig, Tolerances, minimize_reduced, optimize_damping
from .rom import ProjectionBasisPair, ReducedParametricModel, expand, initial_bases, reduce

__version__ = "0.1.0"

__all__ = [
    "AffineClosedLoop",
    "DampingOptResult",
    "FrequencyResponseSample",
    "GradientContext",
    "KERNEL_BACKEND",
    "NormResult",
    "OptimizerConfig",
    "OscillatorSpec",
    "PoleProximityError",
    "ProjectionBasisPair",
    "ReducedParametricModel",
    "StateSpace",
    "Tolerances",
    "UnboundedNormError",
    "ValidationError",
    "VibrationalSystem",
    "assemble_closed_loop",
    "build_oscillator",
    "critical_damping",
    "desk_spec",
    "eval_sigma_max",
    "eval_transfer",
    "expand",
    "gradient_context",
    "hinf_gradient",
    "hinf_greedy",
    "initial_bases",
    "initial_frequencies",
    "linf_dense",
    "minimize_reduced",
    "modal_transform",
    "naive_optimize",
    "optimize_damping",
    "paper_spec",
    "reduce",
    "smoothness_diagnostics",
    "sweep_configurations",
]
