import math

import numpy as np
import pytest

from noisypower.linalg import EigenDecomposition
from noisypower.matgen import SpectrumSpec, synth_psd


def planar(phi: float) -> np.ndarray:
    return np.array([[math.cos(phi)], [math.sin(phi)]])


def angle_oracle(U, X) -> np.ndarray:
    """Principal-angle cosines from numpy's LAPACK SVD, non-increasing."""
    return np.clip(np.linalg.svd(U.T @ X, compute_uv=False), 0.0, 1.0)


def diag_truth(values) -> EigenDecomposition:
    values = np.asarray(values, dtype=np.float64)
    return EigenDecomposition(np.eye(values.size), values)


@pytest.fixture(scope="session")
def power_law_60():
    return synth_psd(SpectrumSpec.power_law(60, 2.0), 0)
