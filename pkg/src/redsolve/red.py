"""Fixed-point solvers built on denoiser-regularized gradient steps.

All three solvers iterate x <- x - gamma * (grad_est + tau*(x - D(x))):
the batch solver (GM-RED) uses the exact mean gradient, the online solver
(On-RED) a minibatch estimate redrawn every iteration, and SGM is the
online solver with the denoiser term switched off. Traces always report
the residual of the FULL operator, also inside online runs, so that
accuracy numbers from different solvers are comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    Algorithm,
    Rng,
    SolverConfig,
    default_step_size,
    ensure_image,
    rng_uniform_indices,
)
from .denoisers import DenoiserSpec, denoiser_residual
from .forward import MeasurementSet, component_gradient
from .metrics import RunTrace, TraceRow, reconstruction_snr_db

__all__ = [
    "NumericalDivergenceError",
    "RedOperatorEval",
    "full_gradient",
    "minibatch_gradient",
    "red_step",
    "full_residual",
    "run_gm_red",
    "run_on_red",
    "run_sgm",
    "default_step_size",
]


class NumericalDivergenceError(RuntimeError):
    """Raised when an iterate stops being finite; carries the iteration index."""

    def __init__(self, iteration: int):
        super().__init__(
            f"non-finite iterate at iteration {iteration}; "
            "check the step size against 1/(L + 2*tau)"
        )
        self.iteration = iteration


@dataclass
class RedOperatorEval:
    """One evaluation of the solver direction, split into its two parts."""

    g_grad: np.ndarray  # data-fidelity gradient (exact or minibatch estimate)
    h_val: np.ndarray  # denoiser residual tau*(x - D(x))
    combined: np.ndarray  # g_grad + h_val


def _mean_gradient(measurements, indices, x: np.ndarray) -> np.ndarray:
    """Sequential mean of component gradients in the given index order."""
    acc = None
    for i in indices:
        g = component_gradient(measurements[i], x)
        acc = g if acc is None else acc + g
    if acc is None:
        raise ValueError("no gradient components selected")
    return acc / len(indices)


def full_gradient(mset: MeasurementSet, x: np.ndarray) -> np.ndarray:
    """Exact data-fidelity gradient: the mean of all component gradients."""
    if len(mset) == 0:
        raise ValueError("empty measurement set")
    return _mean_gradient(mset.measurements, range(len(mset)), x)


def minibatch_gradient(
    mset: MeasurementSet, x: np.ndarray, batch: int, rng: Rng
) -> tuple[np.ndarray, list[int]]:
    """Unbiased gradient estimate from `batch` uniform with-replacement draws.

    Returns the estimate and the drawn indices (in draw order, for the run
    log); the summation itself runs over the sorted indices so the result
    does not depend on how components might be evaluated in parallel.
    """
    if len(mset) == 0:
        raise ValueError("empty measurement set")
    if batch < 1:
        raise ValueError("batch must be positive")
    drawn = rng_uniform_indices(rng, batch, len(mset))
    grad = _mean_gradient(mset.measurements, sorted(drawn.tolist()), x)
    return grad, drawn.tolist()


def evaluate_operator(
    grad_est: np.ndarray, x: np.ndarray, spec: DenoiserSpec, tau: float
) -> RedOperatorEval:
    h = denoiser_residual(spec, tau, x)
    return RedOperatorEval(g_grad=grad_est, h_val=h, combined=grad_est + h)


def full_residual(
    mset: MeasurementSet, x: np.ndarray, spec: DenoiserSpec, tau: float
) -> np.ndarray:
    """The full fixed-point residual grad(x) + tau*(x - D(x))."""
    return full_gradient(mset, x) + denoiser_residual(spec, tau, x)


def red_step(
    x: np.ndarray,
    grad_est: np.ndarray,
    spec: DenoiserSpec,
    tau: float,
    gamma: float,
) -> np.ndarray:
    """One update x - gamma*(grad_est + tau*(x - D(x)))."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = ensure_image(x)
    return x - gamma * (grad_est + denoiser_residual(spec, tau, x))


def _run(
    mset: MeasurementSet,
    x0: np.ndarray,
    config: SolverConfig,
    truth: np.ndarray | None,
) -> tuple[np.ndarray, RunTrace]:
    x = ensure_image(x0, "x0").copy()
    if x.shape != mset.shape:
        raise ValueError(f"x0 shape {x.shape} != measurement shape {mset.shape}")
    if truth is not None:
        truth = ensure_image(truth, "truth")

    online = config.algorithm in (Algorithm.ON_RED, Algorithm.SGM)
    tau = 0.0 if config.algorithm is Algorithm.SGM else config.tau
    spec = config.denoiser if config.denoiser is not None else DenoiserSpec()
    if online and config.minibatch_b > len(mset):
        raise ValueError(
            f"minibatch_b={config.minibatch_b} exceeds measurement count {len(mset)}"
        )

    active = mset.measurements
    if not online and config.subset is not None:
        if config.subset > len(mset):
            raise ValueError(f"subset={config.subset} exceeds measurement count {len(mset)}")
        active = mset.measurements[: config.subset]
    active_range = range(len(active))

    rng = Rng(config.seed)
    started = time.perf_counter()
    rows: list[TraceRow] = []
    ref_norm_sq: float | None = None
    at_fixed_point = False

    h = denoiser_residual(spec, tau, x)

    def log_row(k: int, indices: list[int]) -> None:
        nonlocal ref_norm_sq, at_fixed_point
        residual = _mean_gradient(active, active_range, x) + h
        with np.errstate(over="ignore"):  # diverging runs overflow before the abort
            gns = float(np.sum(residual * residual))
        if ref_norm_sq is None:
            ref_norm_sq = gns
            at_fixed_point = gns == 0.0
        norm_acc = 0.0 if at_fixed_point else gns / ref_norm_sq
        snr = reconstruction_snr_db(x, truth) if truth is not None else None
        rows.append(
            TraceRow(
                k=k,
                grad_norm_sq=gns,
                norm_acc=norm_acc,
                snr_db=snr,
                sampled_indices=indices,
                wall_ms=(time.perf_counter() - started) * 1e3,
            )
        )

    log_row(0, [])
    for k in range(1, config.iterations + 1):
        if online:
            grad_est, indices = minibatch_gradient(mset, x, config.minibatch_b, rng)
        else:
            grad_est = _mean_gradient(active, active_range, x)
            indices = []
        with np.errstate(over="ignore", invalid="ignore"):
            x = x - config.gamma * (grad_est + h)
        if not np.all(np.isfinite(x)):
            raise NumericalDivergenceError(k)
        h = denoiser_residual(spec, tau, x)
        if k % config.log_stride == 0 or k == config.iterations:
            log_row(k, indices)

    return x, RunTrace(rows=rows, started_at_fixed_point=at_fixed_point)


def run_gm_red(
    mset: MeasurementSet,
    x0: np.ndarray,
    config: SolverConfig,
    truth: np.ndarray | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Batch solver: exact mean gradient every iteration.

    With config.subset = m the run is restricted to the first m
    measurements (both for updates and for the logged residual), which is
    the fixed-subset baseline.
    """
    if config.algorithm is not Algorithm.GM_RED:
        raise ValueError("config.algorithm must be GM_RED")
    return _run(mset, x0, config, truth)


def run_on_red(
    mset: MeasurementSet,
    x0: np.ndarray,
    config: SolverConfig,
    truth: np.ndarray | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Online solver: fresh minibatch estimate every iteration.

    The logged residual is always that of the full operator over all
    measurements (recomputed for metrics only, never used in updates);
    raise config.log_stride to amortize that extra cost.
    """
    if config.algorithm is not Algorithm.ON_RED:
        raise ValueError("config.algorithm must be ON_RED")
    return _run(mset, x0, config, truth)


def run_sgm(
    mset: MeasurementSet,
    x0: np.ndarray,
    config: SolverConfig,
    truth: np.ndarray | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Plain stochastic gradient baseline: the online update with tau = 0."""
    if config.algorithm is not Algorithm.SGM:
        raise ValueError("config.algorithm must be SGM")
    return _run(mset, x0, config, truth)


def run_solver(
    mset: MeasurementSet,
    x0: np.ndarray,
    config: SolverConfig,
    truth: np.ndarray | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Dispatch on config.algorithm."""
    runner = {
        Algorithm.GM_RED: run_gm_red,
        Algorithm.ON_RED: run_on_red,
        Algorithm.SGM: run_sgm,
    }[config.algorithm]
    return runner(mset, x0, config, truth)
