"""Blocked streaming power updates, synthetic sample streams, an empirical
(B, p)-round tail check and the streaming sample-complexity expression.

A stream's samples are a pure function of their index, so any block can be
regenerated on demand.  The update accumulates ``sum z (z^T X)`` chunk by
chunk and never forms a d x d matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import EigenDecomposition, NumericalError, as_matrix, orthonormal_complement, qr_factorize
from .matgen import random_orthonormal
from .npm import IterationTrace, NoiseModel, TraceRecorder, initial_iterate
from .rng import RandomSource, as_source

DEFAULT_CHUNK = 256
ROUND_PROJECTIONS = 16


@dataclass(frozen=True)
class SampleStream:
    """``draw(start, stop)`` returns samples ``start..stop-1`` as rows.

    It must be deterministic per index; indices beyond ``n`` are allowed for
    Monte Carlo checks.
    """

    d: int
    n: int
    draw: Callable[[int, int], np.ndarray]
    population_truth: EigenDecomposition | None = None

    def __post_init__(self):
        if self.d < 1 or self.n < 0:
            raise ValueError("stream needs d >= 1 and n >= 0")
        if self.population_truth is not None and self.population_truth.d != self.d:
            raise ValueError("population truth dimension does not match the stream")

    def block(self, start: int, stop: int) -> np.ndarray:
        Z = np.asarray(self.draw(start, stop), dtype=np.float64)
        if Z.shape != (stop - start, self.d):
            raise ValueError(f"stream returned shape {Z.shape}, expected {(stop - start, self.d)}")
        if not np.all(np.isfinite(Z)):
            raise NumericalError(f"non-finite samples in [{start}, {stop})")
        return Z

    def sample(self, i: int) -> np.ndarray:
        return self.block(i, i + 1)[0]

    def scaled(self, c: float) -> "SampleStream":
        truth = self.population_truth
        if truth is not None:
            truth = EigenDecomposition(truth.vectors, truth.values * c * c)
        return SampleStream(self.d, self.n, lambda a, b: c * self.draw(a, b), truth)


def gaussian_stream(truth: EigenDecomposition, n: int, rng: RandomSource | int) -> SampleStream:
    """z_i = U diag(sqrt(sigma)) g_i; sample i uses words [i d, (i + 1) d)."""
    rng = as_source(rng).child("samples")
    if np.any(truth.values < 0):
        raise ValueError("covariance eigenvalues must be non-negative")
    d = truth.d
    factor = (truth.vectors * np.sqrt(truth.values)).T

    def draw(start: int, stop: int) -> np.ndarray:
        g = rng.normal((stop - start, d), start=start * d)
        # elementwise accumulation keeps each row independent of the batch
        # size (a BLAS product may round differently per block shape)
        Z = np.zeros((stop - start, d))
        for j in range(d):
            Z += g[:, j : j + 1] * factor[j]
        return Z

    return SampleStream(d, n, draw, truth)


def constant_stream(z, n: int) -> SampleStream:
    """Every sample equals ``z``; population covariance z z^T."""
    z = np.asarray(z, dtype=np.float64).ravel()
    d = z.size
    norm = float(np.linalg.norm(z))
    truth = None
    if norm > 0:
        u = (z / norm)[:, None]
        vectors = np.hstack([u, orthonormal_complement(u)])
        values = np.zeros(d)
        values[0] = norm * norm
        truth = EigenDecomposition(vectors, values)
    return SampleStream(d, n, lambda a, b: np.tile(z, (b - a, 1)), truth)


def block_size(n: int, L: int) -> int:
    if L < 1:
        raise ValueError("L must be at least 1")
    if n < L:
        raise ValueError(f"need n >= L, got n={n}, L={L}")
    return n // L


def block_product(stream: SampleStream, ell: int, T: int, X: np.ndarray, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """A_l X = sum over block l of z (z^T X), accumulated in index order."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    Y = np.zeros((stream.d, X.shape[1]))
    start, stop = (ell - 1) * T, ell * T
    for a in range(start, stop, chunk_size):
        Z = stream.block(a, min(a + chunk_size, stop))
        Y += Z.T @ (Z @ X)
    return Y


def streaming_pca(
    stream: SampleStream,
    k: int,
    p: int,
    L: int,
    *,
    q: int | None = None,
    seed: int = 0,
    record_diagnostics: bool = True,
    chunk_size: int = DEFAULT_CHUNK,
    x0=None,
) -> tuple[np.ndarray, IterationTrace]:
    """L block power updates Y_l = A_l X_{l-1} with T = floor(n / L).

    Diagnostics, when a population truth is present, identify the noise as
    G_l = A_l X_{l-1} / T - A X_{l-1} with A the population covariance.
    """
    d = stream.d
    q = k if q is None else q
    if not 1 <= k <= q <= p <= d:
        raise ValueError(f"need 1 <= k <= q <= p <= d, got k={k}, q={q}, p={p}, d={d}")
    T = block_size(stream.n, L)
    if x0 is None:
        X = initial_iterate(d, p, RandomSource(seed))
    else:
        X = as_matrix(x0, "x0")
        if X.shape != (d, p):
            raise ValueError(f"x0 has shape {X.shape}, expected {(d, p)}")

    truth = stream.population_truth
    recorder = None
    A = None
    if record_diagnostics and truth is not None:
        A = truth.matrix()
        recorder = TraceRecorder(truth, k, q, p, A)
        recorder.record(0, X, None)
    trace = recorder.trace if recorder else IterationTrace(k=k, q=q, p=p)

    for ell in range(1, L + 1):
        Y = block_product(stream, ell, T, X, chunk_size)
        G = Y / T - A @ X if recorder else None
        X, _, deficient = qr_factorize(Y)
        if deficient:
            trace.collapses.append(ell)
        if recorder:
            recorder.record(ell, X, G)
    return X, trace


def block_noise(stream: SampleStream, L: int, chunk_size: int = DEFAULT_CHUNK) -> NoiseModel:
    """Noise model reproducing a streaming run inside noisy_power_method on
    the population covariance: G_l = A_l X_{l-1} / T - A X_{l-1}."""
    if stream.population_truth is None:
        raise ValueError("the identification needs the population covariance")
    T = block_size(stream.n, L)
    A = stream.population_truth.matrix()

    def fn(ell: int, X_prev: np.ndarray) -> np.ndarray:
        return block_product(stream, ell, T, X_prev, chunk_size) / T - A @ X_prev

    return NoiseModel.from_callback(fn)


@dataclass(frozen=True)
class RoundCheckReport:
    B: float
    p: int
    t_grid: np.ndarray
    norm_freq: np.ndarray
    proj_freq: np.ndarray
    threshold: np.ndarray
    passed: np.ndarray
    n_mc: int
    n_projections: int
    empirical: bool = True

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def round_check(
    stream: SampleStream,
    B: float,
    p: int,
    n_mc: int,
    t_grid,
    rng: RandomSource | int = 0,
    n_projections: int = ROUND_PROJECTIONS,
    chunk_size: int = 4096,
) -> RoundCheckReport:
    """Monte Carlo estimate of Pr[||z|| >= t] and max over projections of
    Pr[||P^T z|| >= t sqrt(B p / d)].

    The projections are ``n_projections`` random rank-p frames plus the
    population top-p frame when known.  Pass at t iff both frequencies are at
    most exp(-t) + 2 sqrt(exp(-t) (1 - exp(-t)) / n_mc).
    """
    t_grid = np.asarray(t_grid, dtype=np.float64).ravel()
    if t_grid.size == 0 or np.any(t_grid < 1):
        raise ValueError("t_grid values must be at least 1")
    if B <= 0:
        raise ValueError("B must be positive")
    d = stream.d
    if not 1 <= p <= d:
        raise ValueError(f"need 1 <= p <= d, got p={p}, d={d}")
    if n_mc < 1:
        raise ValueError("n_mc must be positive")

    rng = as_source(rng)
    frames = [random_orthonormal(d, p, rng.child("projection", j)) for j in range(n_projections)]
    truth = stream.population_truth
    if truth is not None:
        frames.append(truth.top(p))
    P = np.hstack(frames) if frames else np.zeros((d, 0))
    m = len(frames)
    radius = math.sqrt(B * p / d)

    norm_hits = np.zeros(t_grid.size, dtype=np.int64)
    proj_hits = np.zeros((m, t_grid.size), dtype=np.int64)
    for a in range(0, n_mc, chunk_size):
        Z = stream.block(a, min(a + chunk_size, n_mc))
        norms = np.linalg.norm(Z, axis=1)
        norm_hits += (norms[:, None] >= t_grid[None, :]).sum(axis=0)
        if m:
            proj = np.linalg.norm((Z @ P).reshape(Z.shape[0], m, p), axis=2)
            proj_hits += (proj[:, :, None] >= (t_grid * radius)[None, None, :]).sum(axis=0)

    norm_freq = norm_hits / n_mc
    proj_freq = proj_hits.max(axis=0) / n_mc if m else np.zeros(t_grid.size)
    base = np.exp(-t_grid)
    threshold = base + 2.0 * np.sqrt(base * (1.0 - base) / n_mc)
    passed = (norm_freq <= threshold) & (proj_freq <= threshold)
    return RoundCheckReport(B, p, t_grid, norm_freq, proj_freq, threshold, passed, n_mc, m)


def sample_complexity_expression(truth: EigenDecomposition, k: int, q: int, B: float, p: int, d: float,
                                 epsilon: float) -> float:
    """sigma_k B^2 p (ln d)^2 / ((sigma_k - sigma_{q+1})^3 d eps^2), constant 1."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    gap = truth.gap(k, q)
    if gap <= 0:
        raise ValueError("sigma_k - sigma_(q+1) must be positive")
    return truth.sigma(k) * B * B * p * math.log(d) ** 2 / (gap**3 * d * epsilon**2)
