"""Independent brute-force oracles used by the test suite.

Nothing here shares a code path with the implementation it checks: the
direct DFT multiplies out the transform matrices instead of calling an FFT,
gradients come from central differences, the minibatch variance is
enumerated over all components, and the small total-variation prox is
solved as a box-constrained dual least-squares problem.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import lsq_linear

from .core import _MASK64

_DFT_SIZE_CAP = 4096


def naive_dft2(v: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Direct O(n^2) unitary 2D DFT by matrix multiplication.

    Capped at 4096 pixels; this is a correctness oracle, not a transform.
    """
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim != 2:
        raise ValueError("expected a 2D grid")
    h, w = v.shape
    if h * w > _DFT_SIZE_CAP:
        raise ValueError(f"oracle DFT capped at {_DFT_SIZE_CAP} pixels, got {h * w}")
    sign = 2j if inverse else -2j
    jh = np.arange(h)
    jw = np.arange(w)
    wh = np.exp(sign * np.pi * np.outer(jh, jh) / h) / np.sqrt(h)
    ww = np.exp(sign * np.pi * np.outer(jw, jw) / w) / np.sqrt(w)
    return wh @ v @ ww.T


def finite_diff_gradient(f, x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function over a real grid."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        j = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        grad[j] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def enumerate_variance(measurements, x: np.ndarray, batch: int) -> float:
    """Exact variance of the minibatch-mean gradient at x.

    Computes nu2(x) = (1/I) sum_i ||grad_i(x) - mean_grad(x)||^2 over all I
    components and returns nu2(x)/batch, the with-replacement minibatch-mean
    variance. Capped at I <= 16 measurements.
    """
    from .forward import component_gradient  # local import: oracle stays leaf-like

    if batch < 1:
        raise ValueError("batch must be positive")
    comps = list(measurements)
    if not comps:
        raise ValueError("empty measurement set")
    if len(comps) > 16:
        raise ValueError("variance enumeration capped at 16 components")
    grads = [component_gradient(m, x) for m in comps]
    mean = sum(grads) / len(grads)
    nu2 = float(np.mean([np.sum((g - mean) ** 2) for g in grads]))
    return nu2 / batch


def residual_average_bound(
    lipschitz: float,
    tau: float,
    gamma: float,
    nu_sq: float,
    batch: int,
    radius: float,
    iterations: int,
) -> float:
    """Worst-case bound on the running average of the squared RED residual.

    Evaluates ((L+2*tau)/gamma) * (nu^2*gamma^2/B + 2*gamma*nu*R0/sqrt(B)
    + R0^2/t) for an online run of t iterations whose iterates stay within
    distance R0 of the residual's zero set. Requires the step-size rule
    gamma in (0, 1/(L+2*tau)].
    """
    if lipschitz <= 0 or gamma <= 0 or iterations < 1 or batch < 1:
        raise ValueError("lipschitz, gamma, batch and iterations must be positive")
    if tau < 0 or nu_sq < 0 or radius < 0:
        raise ValueError("tau, nu_sq and radius must be nonnegative")
    limit = 1.0 / (lipschitz + 2.0 * tau)
    if gamma > limit * (1.0 + 1e-12):
        raise ValueError(f"gamma={gamma:.6g} violates the step-size rule (max {limit:.6g})")
    nu = np.sqrt(nu_sq)
    lead = (lipschitz + 2.0 * tau) / gamma
    return float(
        lead
        * (
            nu_sq * gamma**2 / batch
            + 2.0 * gamma * nu * radius / np.sqrt(batch)
            + radius**2 / iterations
        )
    )


def _difference_matrix(height: int, width: int) -> np.ndarray:
    """Dense forward-difference operator (both axes stacked), replicate edge."""
    n = height * width
    rows = []
    idx = np.arange(n).reshape(height, width)
    for i in range(height - 1):
        for j in range(width):
            r = np.zeros(n)
            r[idx[i + 1, j]] = 1.0
            r[idx[i, j]] = -1.0
            rows.append(r)
    for i in range(height):
        for j in range(width - 1):
            r = np.zeros(n)
            r[idx[i, j + 1]] = 1.0
            r[idx[i, j]] = -1.0
            rows.append(r)
    if not rows:
        return np.zeros((0, n))
    return np.stack(rows)


def tv_prox_small(z: np.ndarray, lam: float) -> np.ndarray:
    """Exact anisotropic TV prox on a tiny grid via the dual problem.

    The dual of min_x 0.5||x-z||^2 + lam*||Dx||_1 is a box-constrained
    least-squares problem min_{|u| <= lam} 0.5||D^T u - z||^2 with recovery
    x = z - D^T u; scipy's bounded least-squares solves it to high accuracy.
    """
    z = np.asarray(z, dtype=np.float64)
    h, w = z.shape
    if h * w > 64:
        raise ValueError("exact TV oracle capped at 64 pixels")
    if lam == 0:
        return z.copy()
    d = _difference_matrix(h, w)
    if d.shape[0] == 0:
        return z.copy()
    res = lsq_linear(d.T, z.ravel(), bounds=(-lam, lam), tol=1e-14, max_iter=10000)
    return (z.ravel() - d.T @ res.x).reshape(h, w)


def splitmix64_reference(seed: int, count: int) -> list[int]:
    """Pure-integer SplitMix64 stream, independent of the numpy Rng path."""
    out = []
    s = seed & _MASK64
    for _ in range(count):
        s = (s + 0x9E3779B97F4A7C15) & _MASK64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append((z ^ (z >> 31)) & _MASK64)
    return out
