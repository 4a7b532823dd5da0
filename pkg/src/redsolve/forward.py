"""Measurement models: coded diffraction patterns and linear operators.

Both models expose per-component least-squares data-fidelity terms and
their gradients. The coded-diffraction model measures |F(M*x)| where M is
a random unit-modulus phase mask and F the unitary 2D DFT (1/sqrt(n) both
directions, so the component Lipschitz surrogate is exactly 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Rng, ensure_image, ensure_same_shape

MEASUREMENT_FORMAT_VERSION = 1


def fft2_unitary(v: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT."""
    return np.fft.fft2(v, norm="ortho")


def ifft2_unitary(v: np.ndarray) -> np.ndarray:
    """Unitary inverse 2D DFT."""
    return np.fft.ifft2(v, norm="ortho")


@dataclass
class CdpMask:
    """Unit-modulus phase mask, regenerable bit-identically from its seed."""

    seed: int
    phases: np.ndarray  # (H, W) complex128, |entry| == 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.phases.shape


@dataclass
class CdpMeasurement:
    """One coded diffraction pattern: a mask and the measured magnitudes."""

    mask: CdpMask
    magnitudes: np.ndarray  # (H, W) float64, nonnegative

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass
class LinearMeasurement:
    """Linear model y = Hx for H identity, pixel-subsampling, or dense."""

    kind: str  # "identity" | "mask" | "dense"
    y: np.ndarray  # flat float64 observation
    shape: tuple[int, int]  # image (height, width)
    selector: np.ndarray | None = None  # bool over flat pixels, kind == "mask"
    matrix: np.ndarray | None = None  # (m, n) dense, kind == "dense"

    def __post_init__(self):
        n = self.shape[0] * self.shape[1]
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.kind == "identity":
            m = n
        elif self.kind == "mask":
            if self.selector is None:
                raise ValueError("mask measurement needs a selector")
            self.selector = np.asarray(self.selector, dtype=bool).ravel()
            if self.selector.size != n:
                raise ValueError("selector length must equal pixel count")
            m = int(np.count_nonzero(self.selector))
            if m == 0:
                raise ValueError("selector keeps no pixels")
        elif self.kind == "dense":
            if self.matrix is None:
                raise ValueError("dense measurement needs a matrix")
            self.matrix = np.asarray(self.matrix, dtype=np.float64)
            if self.matrix.shape[1] != n:
                raise ValueError("matrix column count must equal pixel count")
            m = self.matrix.shape[0]
        else:
            raise ValueError(f"unknown linear operator kind {self.kind!r}")
        if self.y.size != m:
            raise ValueError(f"observation length {self.y.size} != operator output {m}")


@dataclass
class MeasurementSet:
    """Ordered collection of same-shape measurements plus the noise level used."""

    height: int
    width: int
    measurements: list = field(default_factory=list)
    input_snr_db: float = float("inf")

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def __getitem__(self, i):
        return self.measurements[i]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def cdp_mask_generate(rng: Rng, height: int, width: int) -> CdpMask:
    """Phase mask with entries exp(2*pi*i*u), u drawn uniformly from rng.

    The rng state at entry is recorded as the mask seed, so a fresh
    Rng(mask.seed) regenerates the mask exactly.
    """
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    seed = rng.state
    u = rng.uniform(height * width)
    phases = np.exp(2j * np.pi * u).reshape(height, width)
    return CdpMask(seed=seed, phases=phases)


def cdp_mask_regenerate(seed: int, height: int, width: int) -> CdpMask:
    return cdp_mask_generate(Rng(seed), height, width)


def cdp_forward(x: np.ndarray, mask: CdpMask) -> np.ndarray:
    """Magnitudes |F(mask * x)| of the masked unitary spectrum."""
    x = ensure_image(x)
    ensure_same_shape(x, mask.phases, "image/mask")
    return np.abs(fft2_unitary(mask.phases * x))


def cdp_fidelity(x: np.ndarray, m: CdpMeasurement) -> float:
    """Least-squares misfit 0.5*||y - |F(mask*x)|||^2."""
    x = ensure_image(x)
    ensure_same_shape(x, m.magnitudes, "image/measurement")
    r = m.magnitudes - cdp_forward(x, m.mask)
    return 0.5 * float(np.sum(r * r))


def cdp_gradient(x: np.ndarray, m: CdpMeasurement) -> np.ndarray:
    """Gradient of the amplitude misfit.

    With z = F(mask*x): grad = Re{ conj(mask) * F^H(z - y * phase(z)) },
    where phase(z) = z/|z| and phase(0) is taken as 0 (the bounded
    subgradient choice at the nonsmooth points).
    """
    x = ensure_image(x)
    ensure_same_shape(x, m.magnitudes, "image/measurement")
    z = fft2_unitary(m.mask.phases * x)
    mag = np.abs(z)
    phase = z / np.where(mag > 0.0, mag, 1.0)  # phase(0) -> 0 since z is 0 there
    resid = z - m.magnitudes * phase
    return np.real(np.conj(m.mask.phases) * ifft2_unitary(resid))


def _linear_apply(m: LinearMeasurement, x: np.ndarray) -> np.ndarray:
    v = x.ravel()
    if m.kind == "identity":
        return v.copy()
    if m.kind == "mask":
        return v[m.selector]
    return m.matrix @ v


def _linear_adjoint(m: LinearMeasurement, r: np.ndarray) -> np.ndarray:
    if m.kind == "identity":
        out = r.copy()
    elif m.kind == "mask":
        out = np.zeros(m.shape[0] * m.shape[1])
        out[m.selector] = r
    else:
        out = m.matrix.T @ r
    return out.reshape(m.shape)


def linear_fidelity(x: np.ndarray, m: LinearMeasurement) -> float:
    """Least-squares misfit 0.5*||y - Hx||^2."""
    x = ensure_image(x)
    if x.shape != m.shape:
        raise ValueError(f"image shape {x.shape} != measurement shape {m.shape}")
    r = m.y - _linear_apply(m, x)
    return 0.5 * float(np.sum(r * r))


def linear_gradient(x: np.ndarray, m: LinearMeasurement) -> np.ndarray:
    """Gradient H^T(Hx - y) of the linear misfit."""
    x = ensure_image(x)
    if x.shape != m.shape:
        raise ValueError(f"image shape {x.shape} != measurement shape {m.shape}")
    return _linear_adjoint(m, _linear_apply(m, x) - m.y)


def component_fidelity(m, x: np.ndarray) -> float:
    if isinstance(m, CdpMeasurement):
        return cdp_fidelity(x, m)
    if isinstance(m, LinearMeasurement):
        return linear_fidelity(x, m)
    raise TypeError(f"unknown measurement type {type(m).__name__}")


def component_gradient(m, x: np.ndarray) -> np.ndarray:
    if isinstance(m, CdpMeasurement):
        return cdp_gradient(x, m)
    if isinstance(m, LinearMeasurement):
        return linear_gradient(x, m)
    raise TypeError(f"unknown measurement type {type(m).__name__}")


def simulate_cdp(
    x_true: np.ndarray, count: int, input_snr_db: float, rng: Rng
) -> MeasurementSet:
    """Simulate `count` coded diffraction patterns of x_true.

    Gaussian noise on the magnitudes is rescaled so the realized
    per-measurement SNR (before clamping) equals input_snr_db exactly;
    negative noisy magnitudes are then clamped to 0 (camera intensities).
    Pass input_snr_db = inf for a noiseless set.
    """
    x_true = ensure_image(x_true, "ground truth")
    if count < 1:
        raise ValueError("measurement count must be positive")
    h, w = x_true.shape
    measurements = []
    for _ in range(count):
        mask_seed = rng.next_uint64()
        mask = cdp_mask_regenerate(mask_seed, h, w)
        clean = cdp_forward(x_true, mask)
        if np.isinf(input_snr_db):
            noisy = clean
        else:
            e = rng.normal(h * w).reshape(h, w)
            target = float(np.linalg.norm(clean)) * 10.0 ** (-input_snr_db / 20.0)
            norm_e = float(np.linalg.norm(e))
            e = e * (target / norm_e) if norm_e > 0 else e
            noisy = np.maximum(clean + e, 0.0)
        measurements.append(CdpMeasurement(mask=mask, magnitudes=noisy))
    return MeasurementSet(
        height=h, width=w, measurements=measurements, input_snr_db=float(input_snr_db)
    )


def estimate_lipschitz(mset: MeasurementSet) -> float:
    """Smoothness surrogate for the component fidelities.

    For coded diffraction patterns the masked unitary transform satisfies
    (FM)^H(FM) = I, so the surrogate is exactly 1. For linear models the
    largest squared singular value per operator is found by 50 rounds of
    power iteration (tolerance 1e-8) and the maximum over components is
    returned.
    """
    if len(mset) == 0:
        raise ValueError("empty measurement set")
    worst = 0.0
    for m in mset:
        if isinstance(m, CdpMeasurement):
            worst = max(worst, 1.0)
        elif isinstance(m, LinearMeasurement):
            worst = max(worst, _linear_operator_norm_sq(m))
        else:
            raise TypeError(f"unknown measurement type {type(m).__name__}")
    return worst


def _linear_operator_norm_sq(m: LinearMeasurement) -> float:
    if m.kind in ("identity", "mask"):
        return 1.0  # selection rows are orthonormal
    n = m.matrix.shape[1]
    gram = lambda u: m.matrix.T @ (m.matrix @ u)
    v = Rng(0).normal(n)
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(50):
        # two Gram applications per round sharpen the Rayleigh quotient
        # enough for near-degenerate top singular values
        w = gram(gram(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = float(v @ gram(v))
        if abs(lam - prev) <= 1e-8 * max(abs(lam), 1.0):
            prev = lam
            break
        prev = lam
    return prev


def save_measurements(mset: MeasurementSet, path: str) -> None:
    """Write the on-disk container: one JSON header line, then per-measurement
    little-endian float64 magnitude blocks. Masks are regenerated from their
    seeds on load and never stored.
    """
    for m in mset:
        if not isinstance(m, CdpMeasurement):
            raise ValueError("only coded-diffraction sets are serializable")
    header = {
        "version": MEASUREMENT_FORMAT_VERSION,
        "height": mset.height,
        "width": mset.width,
        "I": len(mset),
        "input_snr_db": "inf" if np.isinf(mset.input_snr_db) else mset.input_snr_db,
        "mask_seeds": [m.mask.seed for m in mset],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for m in mset:
            fh.write(np.ascontiguousarray(m.magnitudes, dtype="<f8").tobytes())


def load_measurements(path: str) -> MeasurementSet:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: bad measurement header") from exc
        if header.get("version") != MEASUREMENT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {header.get('version')}")
        h, w, count = header["height"], header["width"], header["I"]
        snr = header["input_snr_db"]
        snr = float("inf") if snr == "inf" else float(snr)
        seeds = header["mask_seeds"]
        if len(seeds) != count:
            raise ValueError(f"{path}: seed count {len(seeds)} != I {count}")
        measurements = []
        block = h * w * 8
        for seed in seeds:
            raw = fh.read(block)
            if len(raw) != block:
                raise ValueError(f"{path}: truncated magnitude block")
            mags = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(h, w)
            measurements.append(
                CdpMeasurement(mask=cdp_mask_regenerate(seed, h, w), magnitudes=mags)
            )
    return MeasurementSet(height=h, width=w, measurements=measurements, input_snr_db=snr)
