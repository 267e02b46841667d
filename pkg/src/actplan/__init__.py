"""Activation memory planning for transformer training.

Given a per-operator profile of one transformer block (tensor sizes,
recompute and codec timings, compression rates), this package picks the
cheapest mix of recompute / compress / retain per activation tensor that
fits a GPU memory budget, provides the 4-bit codecs the cost model refers
to, and simulates throughput and policy evolution over a training run.
"""

from .codec import (
    CompressedTensor,
    Scheme,
    SchemeSpec,
    compress,
    decompress,
    deserialize,
    measure_codec,
    scheme_for,
    serialize,
)
from .errors import (
    ActplanError,
    CorruptPayloadError,
    InfeasibleError,
    InfeasiblePlanError,
    NonBinaryMaskError,
    NonFiniteInputError,
    OutOfOrderIterationError,
    ParseError,
    TooLargeError,
    TooManyOutliersError,
    ValidationError,
)
from .evolve import TrackingSchedule, run_evolution
from .planner import Plan, PolicyChoice, bandwidths, brute_force, solve, verify
from .profiles import LayerKind, ModelProfile, OperatorProfile, load_profile, save_profile, scale_profile
from .simulate import DriftRegime, DriftTrace, generate_drift, max_feasible_batch, simulate_step

__version__ = "0.1.0"

__all__ = [
    "ActplanError",
    "CompressedTensor",
    "CorruptPayloadError",
    "DriftRegime",
    "DriftTrace",
    "InfeasibleError",
    "InfeasiblePlanError",
    "LayerKind",
    "ModelProfile",
    "NonBinaryMaskError",
    "NonFiniteInputError",
    "OperatorProfile",
    "OutOfOrderIterationError",
    "ParseError",
    "Plan",
    "PolicyChoice",
    "Scheme",
    "SchemeSpec",
    "TooLargeError",
    "TooManyOutliersError",
    "TrackingSchedule",
    "ValidationError",
    "bandwidths",
    "brute_force",
    "compress",
    "decompress",
    "deserialize",
    "generate_drift",
    "load_profile",
    "max_feasible_batch",
    "measure_codec",
    "run_evolution",
    "save_profile",
    "scale_profile",
    "scheme_for",
    "serialize",
    "simulate_step",
    "solve",
    "verify",
    "__version__",
]
