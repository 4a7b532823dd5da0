"""Pluggable nonexpansive denoisers.

Every denoiser here is nonexpansive by construction: the identity map
trivially, the box-kernel average as a convex combination with a symmetric
stochastic smoother, and the anisotropic TV prox because proximal maps of
convex functions never increase pairwise distances. That property is what
the fixed-point convergence of the solvers rests on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .core import ensure_image


class DenoiserKind(enum.Enum):
    IDENTITY = "identity"
    TV_PROX = "tv"
    AVERAGED_KERNEL = "box"


@dataclass
class DenoiserSpec:
    """Denoiser choice plus strength.

    sigma is the nominal denoising strength; for TV_PROX it maps to the
    prox weight lam = 0.1 * sigma**2 unless tv_weight overrides the mapping.
    kernel_alpha in [0, 1] blends the identity with the 3x3 box average.
    """

    kind: DenoiserKind = DenoiserKind.IDENTITY
    sigma: float = 0.0
    tv_inner_iters: int = 50
    tv_weight: float | None = None
    kernel_alpha: float = 0.5

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = DenoiserKind(self.kind)
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.tv_inner_iters < 1:
            raise ValueError("tv_inner_iters must be positive")
        if not 0.0 <= self.kernel_alpha <= 1.0:
            raise ValueError("kernel_alpha must lie in [0, 1]")
        if self.tv_weight is not None and self.tv_weight < 0:
            raise ValueError("tv_weight must be nonnegative")

    @property
    def effective_tv_weight(self) -> float:
        if self.tv_weight is not None:
            return self.tv_weight
        return 0.1 * self.sigma**2


def _grad2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with replicate edge (zero difference at the border)."""
    gv = np.zeros_like(x)
    gh = np.zeros_like(x)
    gv[:-1, :] = x[1:, :] - x[:-1, :]
    gh[:, :-1] = x[:, 1:] - x[:, :-1]
    return gv, gh


def _grad2_adjoint(pv: np.ndarray, ph: np.ndarray) -> np.ndarray:
    """Adjoint of _grad2 (negative discrete divergence).

    Assumes the unused dual entries (last row of pv, last column of ph)
    are zero, which the dual iteration preserves.
    """
    out = np.zeros_like(pv)
    out[0, :] = -pv[0, :]
    out[1:, :] = pv[:-1, :] - pv[1:, :]
    out[:, 0] += -ph[:, 0]
    out[:, 1:] += ph[:, :-1] - ph[:, 1:]
    return out


def tv_prox(z: np.ndarray, weight: float, iters: int) -> np.ndarray:
    """Anisotropic TV prox by projected gradient on the dual.

    Solves min_x 0.5*||x - z||^2 + weight * (|vertical diffs| + |horizontal
    diffs|)_1 through the dual box problem, dual step 1/8 (safe for the 2D
    difference operator whose squared norm is at most 8), run for a fixed
    iteration count so the cost per solver step is bounded.
    """
    if weight <= 0.0:
        return z.copy()
    w = z / weight
    pv = np.zeros_like(z)
    ph = np.zeros_like(z)
    step = 0.125
    for _ in range(iters):
        r = _grad2_adjoint(pv, ph) - w
        gv, gh = _grad2(r)
        # gv's last row and gh's last column are identically zero, so the
        # unused dual entries stay zero and the adjoint formula stays valid
        pv = np.clip(pv - step * gv, -1.0, 1.0)
        ph = np.clip(ph - step * gh, -1.0, 1.0)
    return z - weight * _grad2_adjoint(pv, ph)


def denoise(spec: DenoiserSpec, x: np.ndarray) -> np.ndarray:
    """Apply the configured denoiser to a real image grid."""
    x = ensure_image(x)
    if spec.kind is DenoiserKind.IDENTITY:
        return x.copy()
    if spec.kind is DenoiserKind.AVERAGED_KERNEL:
        smoothed = uniform_filter(x, size=3, mode="reflect")
        return spec.kernel_alpha * x + (1.0 - spec.kernel_alpha) * smoothed
    if spec.kind is DenoiserKind.TV_PROX:
        return tv_prox(x, spec.effective_tv_weight, spec.tv_inner_iters)
    raise ValueError(f"unknown denoiser kind {spec.kind!r}")


def denoiser_residual(spec: DenoiserSpec, tau: float, x: np.ndarray) -> np.ndarray:
    """Scaled denoiser residual tau * (x - D(x)), the regularization force."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    x = ensure_image(x)
    if tau == 0.0:
        return np.zeros_like(x)
    return tau * (x - denoise(spec, x))


def regularizer_value(spec: DenoiserSpec, tau: float, x: np.ndarray) -> float:
    """Diagnostic quadratic form (tau/2) * <x, x - D(x)>.

    Only a faithful regularizer value for denoisers that are locally
    homogeneous with symmetric Jacobians; reported for monitoring and never
    used for line search or stopping.
    """
    x = ensure_image(x)
    if tau == 0.0:
        return 0.0
    return 0.5 * tau * float(np.sum(x * (x - denoise(spec, x))))
