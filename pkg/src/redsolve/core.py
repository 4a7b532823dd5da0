"""Shared domain types: seeded RNG, array validation, solver configuration.

Images are plain numpy arrays of shape (height, width): float64 for real
grids, complex128 for complex intermediates, row-major. The helpers here
enforce the invariants (finite entries, matching shapes) at API boundaries
so the numerical code can stay free of per-call checks.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

# SplitMix64 constants (public-domain reference implementation).
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 counter stream.

    Fixed to SplitMix64 so that any stream regenerates bit-identically from
    its seed on every platform; the state is a single 64-bit counter
    (kept as a Python int, outputs mixed with vectorized uint64 math).
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    @property
    def state(self) -> int:
        return self._state

    def next_uint64(self) -> int:
        return int(self.uint64(1)[0])

    def uint64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ValueError("draw count must be nonnegative")
        ctr = np.arange(1, n + 1, dtype=np.uint64)
        out = _mix(np.uint64(self._state) + ctr * _GAMMA)
        self._state = (self._state + n * int(_GAMMA)) & _MASK64
        return out

    def uniform(self, n: int | None = None):
        """Uniform doubles in [0, 1): 53-bit mantissa from the top bits."""
        if n is None:
            return float(self.uint64(1)[0] >> np.uint64(11)) * 2.0**-53
        return (self.uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller on uniform pairs."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1], keeps log() finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def spawn(self) -> "Rng":
        """Child generator seeded from the next raw output."""
        return Rng(self.next_uint64())


def rng_new(seed: int) -> Rng:
    return Rng(seed)


def rng_uniform_indices(rng: Rng, count: int, population: int) -> np.ndarray:
    """count i.i.d. indices uniform over {0, ..., population-1}.

    Sampling is with replacement: independent draws may repeat, which is
    what makes the minibatch-mean variance scale exactly as 1/count.
    """
    if count < 1 or population < 1:
        raise ValueError("count and population must be positive")
    u = rng.uniform(count)
    idx = np.minimum((u * population).astype(np.int64), population - 1)
    return idx


def ensure_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a real (H, W) grid: 2D, float, finite."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def ensure_complex_grid(x: np.ndarray, name: str = "grid") -> np.ndarray:
    """Validate a complex (H, W) grid: 2D, complex, finite."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def ensure_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


class Algorithm(enum.Enum):
    GM_RED = "gm-red"
    ON_RED = "on-red"
    SGM = "sgm"


@dataclass
class SolverConfig:
    """Hyperparameters for one solver run.

    gamma is the step size, tau the regularization strength, minibatch_b
    the number of component gradients averaged per online iteration.
    GM-RED ignores minibatch_b; SGM ignores tau and the denoiser.
    """

    algorithm: Algorithm
    gamma: float
    tau: float
    iterations: int
    seed: int
    denoiser: "object" = None  # DenoiserSpec; typed loosely to avoid an import cycle
    minibatch_b: int = 1
    total_i: int | None = None
    subset: int | None = None  # GM-RED restricted to the first `subset` measurements
    log_stride: int = 1

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.minibatch_b < 1:
            raise ValueError("minibatch_b must be positive")
        if self.log_stride < 1:
            raise ValueError("log_stride must be positive")
        if (
            self.algorithm in (Algorithm.ON_RED, Algorithm.SGM)
            and self.total_i is not None
            and self.minibatch_b > self.total_i
        ):
            raise ValueError(
                f"minibatch_b={self.minibatch_b} exceeds measurement count {self.total_i}"
            )
        if self.subset is not None and self.subset < 1:
            raise ValueError("subset must be positive when given")

    def check_step_size(self, lipschitz: float | None) -> None:
        """Warn (not error) when gamma exceeds the 1/(L + 2*tau) stability rule."""
        if lipschitz is None:
            return
        limit = 1.0 / (lipschitz + 2.0 * self.tau)
        if self.gamma > limit * (1.0 + 1e-12):
            warnings.warn(
                f"gamma={self.gamma:.6g} exceeds 1/(L+2*tau)={limit:.6g}; "
                "the iteration may diverge",
                RuntimeWarning,
                stacklevel=2,
            )


def default_step_size(lipschitz: float, tau: float) -> float:
    """Largest step size covered by the convergence guarantee: 1/(L + 2*tau)."""
    if lipschitz <= 0:
        raise ValueError("Lipschitz constant must be positive")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return 1.0 / (lipschitz + 2.0 * tau)


