import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisypower.linalg import sym_eig
from noisypower.matgen import SpectrumSpec, gaussian_matrix, random_orthonormal, synth_psd
from noisypower.metrics import tan_theta
from noisypower.rng import RandomSource


def test_zero_stddev():
    assert np.array_equal(gaussian_matrix(4, 3, 0.0, 1), np.zeros((4, 3)))


def test_deterministic_per_seed():
    a = gaussian_matrix(6, 5, 1.0, 42)
    b = gaussian_matrix(6, 5, 1.0, RandomSource(42))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gaussian_matrix(6, 5, 1.0, 43))


def test_moments():
    x = gaussian_matrix(1000, 1, 1.0, 7)
    assert abs(x.mean()) <= 0.1
    assert abs(x.var() - 1.0) <= 0.1


def test_invalid_arguments():
    with pytest.raises(ValueError):
        gaussian_matrix(0, 1, 1.0, 0)
    with pytest.raises(ValueError):
        gaussian_matrix(1, 1, -1.0, 0)
    with pytest.raises(ValueError):
        random_orthonormal(2, 3, 0)


def test_square_orthonormal():
    Q = random_orthonormal(6, 6, 3)
    assert abs(abs(np.linalg.det(Q)) - 1) <= 1e-8


def test_thin_orthonormal():
    Q = random_orthonormal(5, 2, 3)
    assert np.max(np.abs(Q.T @ Q - np.eye(2))) <= 1e-10


def test_initial_angle_event_frequency():
    # U_q = first q canonical vectors; X_0 is rotation-invariant in law
    d, p, q, tau = 50, 10, 5, 2.0
    U = np.eye(d)[:, :q]
    limit = tau * math.sqrt(d) / (math.sqrt(p) - math.sqrt(q - 1))
    hits = sum(tan_theta(U, random_orthonormal(d, p, s), np.eye(d)[:, q:]) <= limit for s in range(200))
    assert hits / 200 >= 0.9


class TestSpectrum:
    def test_power_law_values(self):
        assert np.allclose(SpectrumSpec.power_law(4, 2.0).eigenvalues(), [1, 1 / 4, 1 / 9, 1 / 16], rtol=0, atol=0)

    def test_validation(self):
        with pytest.raises(ValueError):
            SpectrumSpec.power_law(4, 1.0)
        with pytest.raises(ValueError):
            SpectrumSpec.explicit([1.0, 2.0])
        with pytest.raises(ValueError):
            SpectrumSpec.explicit([1.0, -1.0])
        with pytest.raises(ValueError):
            SpectrumSpec(3)

    def test_isotropic(self):
        A, _ = synth_psd(SpectrumSpec.explicit([1, 1, 1]), 9)
        assert np.max(np.abs(A - np.eye(3))) <= 1e-10

    def test_round_trip_through_eigensolver(self):
        A, truth = synth_psd(SpectrumSpec.power_law(30, 2.0), 1)
        vals = sym_eig(A).values
        assert np.max(np.abs(vals - truth.values) / truth.values) <= 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 30), st.floats(1.1, 4.0), st.integers(0, 2**32 - 1))
    def test_symmetric_psd_and_exact_gap(self, d, alpha, seed):
        spec = SpectrumSpec.power_law(d, alpha)
        A, truth = synth_psd(spec, seed)
        assert np.array_equal(A, A.T)
        assert np.linalg.eigvalsh(A)[0] >= -1e-10
        vals = spec.eigenvalues()
        k = 1
        q = d - 1
        assert truth.gap(k, q) == vals[k - 1] - vals[q]


def test_gap_ratio_envelope():
    # (s_k - s_{k+1}) / (s_k - s_{2k+1}) for s_k = k^-2 decays like 1/k
    vals = SpectrumSpec.power_law(40, 2.0).eigenvalues()
    ks = [2, 4, 8, 16]
    ratios = [(vals[k - 1] - vals[k]) / (vals[k - 1] - vals[2 * k]) for k in ks]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    slope = np.polyfit(np.log(ks), np.log(ratios), 1)[0]
    # pre-asymptotic slope is about -0.72 here, tending to -1
    assert -1.2 <= slope <= -0.6
    for k, r in zip(ks, ratios):
        assert r <= 2.5 / k * ratios[0] * 2
