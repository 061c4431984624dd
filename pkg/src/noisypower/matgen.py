"""Seeded test matrices: iid Gaussian, random orthonormal frames, planted
spectrum PSD matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import EigenDecomposition, qr_factorize
from .rng import RandomSource, as_source


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalues of a planted matrix: explicit values or ``k ** -alpha``."""

    d: int
    values: tuple[float, ...] | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if (self.values is None) == (self.alpha is None):
            raise ValueError("give exactly one of values or alpha")
        if self.values is not None:
            vals = tuple(float(v) for v in self.values)
            if len(vals) != self.d:
                raise ValueError(f"expected {self.d} values, got {len(vals)}")
            if any(v < 0 for v in vals) or any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError("values must be non-negative and non-increasing")
            object.__setattr__(self, "values", vals)
        elif not self.alpha > 1:
            raise ValueError(f"power-law exponent must exceed 1, got {self.alpha}")

    @classmethod
    def power_law(cls, d: int, alpha: float) -> "SpectrumSpec":
        return cls(d, alpha=float(alpha))

    @classmethod
    def explicit(cls, values) -> "SpectrumSpec":
        values = tuple(float(v) for v in values)
        return cls(len(values), values=values)

    def eigenvalues(self) -> np.ndarray:
        if self.values is not None:
            return np.array(self.values)
        return np.arange(1, self.d + 1, dtype=np.float64) ** -self.alpha


def gaussian_matrix(d: int, p: int, stddev: float, rng: RandomSource | int) -> np.ndarray:
    if d < 1 or p < 1:
        raise ValueError("dimensions must be positive")
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    return stddev * as_source(rng).normal((d, p))


def random_orthonormal(d: int, p: int, rng: RandomSource | int) -> np.ndarray:
    """Q factor of a d x p standard Gaussian matrix."""
    if not d >= p >= 1:
        raise ValueError(f"need d >= p >= 1, got d={d}, p={p}")
    return qr_factorize(gaussian_matrix(d, p, 1.0, rng)).q


def synth_psd(spec: SpectrumSpec, rng: RandomSource | int) -> tuple[np.ndarray, EigenDecomposition]:
    """A = U diag(sigma) U^T with a random orthogonal U; returns (A, truth)."""
    values = spec.eigenvalues()
    U = random_orthonormal(spec.d, spec.d, rng)
    truth = EigenDecomposition(U, values)
    return truth.matrix(), truth
