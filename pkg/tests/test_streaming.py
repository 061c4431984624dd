import math
import tracemalloc

import numpy as np
import pytest
from scipy import stats

from noisypower.linalg import EigenDecomposition
from noisypower.matgen import SpectrumSpec, synth_psd
from noisypower.npm import RunConfig, noisy_power_method
from noisypower.streaming import (
    SampleStream,
    block_noise,
    constant_stream,
    gaussian_stream,
    round_check,
    sample_complexity_expression,
    streaming_pca,
)


@pytest.fixture(scope="module")
def planted50():
    return synth_psd(SpectrumSpec.power_law(50, 2.0), 7)


class TestStreams:
    def test_identity_covariance(self):
        st = gaussian_stream(EigenDecomposition(np.eye(4), np.ones(4)), 10**5, 1)
        Z = st.block(0, 10**5)
        assert np.max(np.abs(Z.T @ Z / 10**5 - np.eye(4))) <= 0.05

    def test_rank_one_collinear(self):
        vals = np.array([2.0, 0.0, 0.0])
        st = gaussian_stream(EigenDecomposition(np.eye(3), vals), 50, 2)
        Z = st.block(0, 50)
        assert np.max(np.abs(Z[:, 1:])) <= 1e-10
        sv = np.linalg.svd(Z, compute_uv=False)
        assert sv[1] <= 1e-10 * sv[0]

    def test_reproducible_per_index(self, planted50):
        _, truth = planted50
        a = gaussian_stream(truth, 100, 5)
        b = gaussian_stream(truth, 100, 5)
        assert a.block(10, 20).tobytes() == b.block(10, 20).tobytes()
        assert a.sample(13).tobytes() == a.block(0, 40)[13].tobytes()

    def test_shape_checked(self):
        bad = SampleStream(3, 5, lambda a, b: np.zeros((b - a, 2)))
        with pytest.raises(ValueError, match="shape"):
            bad.block(0, 2)


class TestStreamingPCA:
    def test_rank_one_stream(self):
        e1 = np.eye(5)[0]
        X, trace = streaming_pca(constant_stream(e1, 4), 1, 1, 1)
        assert abs(abs(X[0, 0]) - 1.0) == 0.0 and np.all(X[1:, 0] == 0.0)
        assert trace.final.sin_theta_k == 0.0

    def test_scaling_invariance(self, planted50):
        _, truth = planted50
        st = gaussian_stream(truth, 900, 3)
        for L in (1, 3, 7):
            X1, t1 = streaming_pca(st, 3, 6, L, seed=2)
            X2, t2 = streaming_pca(st.scaled(7.5), 3, 6, L, seed=2)
            assert np.max(np.abs(X1 - X2)) <= 1e-10
            assert np.allclose(t1.column("sin_theta_k"), t2.column("sin_theta_k"), atol=1e-10, rtol=0)

    def test_trailing_samples_discarded(self, planted50):
        _, truth = planted50
        base = gaussian_stream(truth, 1000, 4)
        cut = SampleStream(base.d, 1003, base.draw, truth)
        a, _ = streaming_pca(base, 2, 4, 5, record_diagnostics=False)
        b, _ = streaming_pca(cut, 2, 4, 5, record_diagnostics=False)
        assert a.tobytes() == b.tobytes()

    def test_chunking_is_exact_enough(self, planted50):
        _, truth = planted50
        st = gaussian_stream(truth, 600, 4)
        a, _ = streaming_pca(st, 2, 4, 3, chunk_size=1, record_diagnostics=False)
        b, _ = streaming_pca(st, 2, 4, 3, chunk_size=200, record_diagnostics=False)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_equivalence_to_noisy_power_method(self, planted50):
        A, truth = planted50
        st = gaussian_stream(truth, 2000, 3)
        X1, t1 = streaming_pca(st, 3, 10, 5, q=6, seed=1)
        X2, t2 = noisy_power_method(truth.matrix(), RunConfig(3, 10, 6, 5, seed=1), block_noise(st, 5), truth)
        assert np.max(np.abs(X1 - X2)) <= 1e-12
        assert t1.column("g2_norm")[1:] == pytest.approx(t2.column("g2_norm")[1:], rel=1e-9)

    def test_validation(self, planted50):
        _, truth = planted50
        st = gaussian_stream(truth, 3, 0)
        with pytest.raises(ValueError, match="n >= L"):
            streaming_pca(st, 1, 1, 4)
        with pytest.raises(ValueError):
            streaming_pca(st, 3, 2, 1)
        with pytest.raises(ValueError):
            block_noise(SampleStream(2, 4, lambda a, b: np.zeros((b - a, 2))), 2)

    def test_memory_never_quadratic(self):
        # d x d float64 would be 8 MB; the update path must stay far below it
        d, p = 1000, 4
        truth_free = SampleStream(d, 4000, lambda a, b: np.random.default_rng(a).standard_normal((b - a, d)))
        tracemalloc.start()
        streaming_pca(truth_free, 2, p, 4, chunk_size=16, record_diagnostics=False)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert peak < 0.25 * d * d * 8


class TestRoundCheck:
    def test_point_mass_at_zero(self):
        rep = round_check(SampleStream(5, 0, lambda a, b: np.zeros((b - a, 5))), 1.0, 2, 500, [1, 2, 3])
        assert rep.all_passed and np.all(rep.norm_freq == 0) and np.all(rep.proj_freq == 0)

    def test_point_mass_violation(self):
        rep = round_check(constant_stream(2 * np.eye(4)[0], 0), 1.0, 2, 500, [1.0])
        assert not rep.passed[0] and rep.norm_freq[0] == 1.0

    def test_frequencies_in_unit_interval(self, planted50):
        _, truth = planted50
        rep = round_check(gaussian_stream(truth, 0, 1), 4.0, 5, 2000, [1, 1.5, 2])
        for f in (rep.norm_freq, rep.proj_freq):
            assert np.all((0 <= f) & (f <= 1))
        assert rep.n_projections == 17 and rep.empirical

    def test_isotropic_gaussian_against_chi_square_oracle(self):
        # z ~ N(0, I/d): ||z||^2 d ~ chi2_d, so Pr[||z|| >= 1] is about 0.47 at d = 50,
        # above exp(-1); the norm event fails at t = 1 and passes at t = 2, 3
        d, n = 50, 100_000
        st = gaussian_stream(EigenDecomposition(np.eye(d), np.full(d, 1.0 / d)), 0, 3)
        grid = np.array([1.0, 2.0, 3.0])
        rep = round_check(st, 4.0, 5, n, grid)
        oracle = stats.chi2.sf(d * grid**2, d)
        se = np.sqrt(oracle * (1 - oracle) / n)
        assert np.all(np.abs(rep.norm_freq - oracle) <= 4 * se + 1e-12)
        # projected event: ||P^T z||^2 d ~ chi2_p against t^2 B p
        proj_oracle = stats.chi2.sf(grid**2 * 4.0 * 5, 5)
        assert np.all(rep.proj_freq <= proj_oracle + 6 * np.sqrt(proj_oracle * (1 - proj_oracle) / n) + 1e-4)
        assert list(rep.passed) == [False, True, True]

    def test_half_unit_energy_passes(self):
        d = 50
        st = gaussian_stream(EigenDecomposition(np.eye(d), np.full(d, 0.5 / d)), 0, 3)
        assert round_check(st, 4.0, 5, 100_000, [1, 2, 3]).all_passed

    def test_grid_validation(self):
        st = constant_stream(np.ones(3), 0)
        with pytest.raises(ValueError):
            round_check(st, 1.0, 1, 10, [0.5])
        with pytest.raises(ValueError):
            round_check(st, 0.0, 1, 10, [1.0])


class TestSampleComplexity:
    def test_scalings(self, planted50):
        _, truth = planted50
        base = sample_complexity_expression(truth, 3, 6, 2.0, 10, 50, 0.2)
        assert sample_complexity_expression(truth, 3, 6, 2.0, 10, 50, 0.1) == pytest.approx(4 * base, rel=1e-14)
        assert sample_complexity_expression(truth, 3, 6, 4.0, 10, 50, 0.2) == pytest.approx(4 * base, rel=1e-14)

    def test_large_gap_cubed(self):
        _, truth = synth_psd(SpectrumSpec.power_law(40, 2.0), 0)
        ratios = []
        for k in (2, 4):
            near = sample_complexity_expression(truth, k, k, 1.0, 2 * k, 40, 0.1)
            far = sample_complexity_expression(truth, k, 2 * k, 1.0, 2 * k, 40, 0.1)
            assert near / far == pytest.approx((truth.gap(k, 2 * k) / truth.gap(k, k)) ** 3, rel=1e-12)
            ratios.append(near / far)
        # growth is three times that of the gap ratio; k^3 only asymptotically
        growth = math.log(ratios[1] / ratios[0]) / math.log(2)
        gap_growth = math.log((truth.gap(4, 8) / truth.gap(4, 4)) / (truth.gap(2, 4) / truth.gap(2, 2))) / math.log(2)
        assert growth == pytest.approx(3 * gap_growth, rel=1e-12)
        assert growth > 1.5

    def test_errors(self):
        truth = EigenDecomposition(np.eye(2), np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            sample_complexity_expression(truth, 1, 1, 1.0, 1, 2, 0.1)
        with pytest.raises(ValueError):
            sample_complexity_expression(truth, 1, 1, 1.0, 1, 2, 1.0)
