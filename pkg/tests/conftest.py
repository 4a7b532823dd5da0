import numpy as np
import pytest

from redsolve.core import Rng
from redsolve.forward import CdpMeasurement, cdp_forward, cdp_mask_generate, fft2_unitary


def random_image(seed: int, height: int, width: int, offset: float = 0.0) -> np.ndarray:
    return Rng(seed).uniform(height * width).reshape(height, width) + offset


def smooth_cdp_instance(seed: int, height: int, width: int, min_mag: float = 1e-3):
    """A measurement and evaluation point with all spectral magnitudes
    bounded away from zero, so the amplitude loss is smooth at x."""
    rng = Rng(seed)
    for attempt in range(64):
        mask = cdp_mask_generate(rng, height, width)
        x_gen = rng.uniform(height * width).reshape(height, width)
        y = cdp_forward(x_gen, mask) + 0.05 * rng.uniform(height * width).reshape(height, width)
        x = rng.uniform(height * width).reshape(height, width) + 0.2
        z = fft2_unitary(mask.phases * x)
        if np.min(np.abs(z)) > min_mag:
            return CdpMeasurement(mask=mask, magnitudes=y), x
    raise AssertionError("could not find a smooth instance")


@pytest.fixture
def rng0() -> Rng:
    return Rng(0)
