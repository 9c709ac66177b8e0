"""Exact finite-difference gradients for multi-plane light conversion devices."""

__version__ = "0.1.0"

from .calibration import CalibrationError, CorrectionTable, PhaseResponse, build_correction, sweep_and_fit
from .device import (
    AffineDecomposition,
    Detection,
    MplcDevice,
    analytic_gradient,
    decompose_single_phase,
    device_from_seed,
    forward,
    random_device,
)
from .gradients import EstimatorConfig, NoiseModel, NoisyCostProbe, Scheme, estimate_gradient, measure_cost, sinc
from .linalg import haar_unitary, is_unitary, make_rng
from .metrics import Metric, SinusoidFit, cost, fit_sinusoid, horn_polyhedron_check, normalized_cost
from .optimizer import (
    DeviceSpec,
    OptimizerOptions,
    QuantileTable,
    Termination,
    TrialTrace,
    minimize,
    run_trial,
    run_trials,
    summarize,
)
