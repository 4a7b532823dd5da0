"""Batch and online regularization-by-denoising solvers.

The library couples least-squares data-fidelity models (coded diffraction
patterns for phase retrieval, plus plain linear operators) with pluggable
nonexpansive denoisers and runs fixed-point iterations on the combined
residual, either with the exact mean gradient or with minibatch estimates.
"""

from .core import (
    Algorithm,
    Rng,
    SolverConfig,
    default_step_size,
    rng_new,
    rng_uniform_indices,
)
from .denoisers import (
    DenoiserKind,
    DenoiserSpec,
    denoise,
    denoiser_residual,
    regularizer_value,
)
from .forward import (
    CdpMask,
    CdpMeasurement,
    LinearMeasurement,
    MeasurementSet,
    cdp_fidelity,
    cdp_forward,
    cdp_gradient,
    cdp_mask_generate,
    estimate_lipschitz,
    linear_fidelity,
    linear_gradient,
    load_measurements,
    save_measurements,
    simulate_cdp,
)
from .metrics import (
    RunTrace,
    TraceRow,
    aggregate_sweep,
    normalized_accuracy,
    reconstruction_snr_db,
    snr_db,
)
from .red import (
    NumericalDivergenceError,
    full_gradient,
    full_residual,
    minibatch_gradient,
    red_step,
    run_gm_red,
    run_on_red,
    run_sgm,
    run_solver,
)

__version__ = "0.1.0"
