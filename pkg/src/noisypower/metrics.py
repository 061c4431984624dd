"""Subspace proximity diagnostics: principal-angle functions, the rank-k
perturbation ``h``, and low-rank approximation error ratios.

All angle functions take orthonormal bases.  Rank deficiency of ``U^T X`` is
reported as ``math.inf`` rather than raised, so iteration traces can record
divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import (
    EigenDecomposition,
    as_matrix,
    matrix_norm,
    orthonormal_complement,
    pseudo_inverse,
    singular_values,
)

ORTHONORMAL_TOL = 1e-8
# below this smallest singular value of U^T X the tangent is reported as inf
ANGLE_RANK_TOL = 1e-6


def check_orthonormal(X, name: str = "X", tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    X = as_matrix(X, name)
    err = float(np.max(np.abs(X.T @ X - np.eye(X.shape[1]))))
    if err > tol:
        raise ValueError(f"{name} does not have orthonormal columns (max deviation {err:.2e})")
    return X


def _pair(U, X, need_p_ge: bool = True) -> tuple[np.ndarray, np.ndarray]:
    U = check_orthonormal(U, "U")
    X = check_orthonormal(X, "X")
    if U.shape[0] != X.shape[0]:
        raise ValueError(f"dimension mismatch: {U.shape[0]} vs {X.shape[0]}")
    if need_p_ge and X.shape[1] < U.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns, fewer than U's {U.shape[1]}")
    return U, X


def sin_theta(U_k, X) -> float:
    """||(I - X X^T) U_k||_2."""
    U_k, X = _pair(U_k, X)
    resid = U_k - X @ (X.T @ U_k)
    return min(1.0, matrix_norm(resid, "spectral"))


def cos_theta(U, X) -> float:
    """Smallest singular value of U^T X (cosine of the largest angle)."""
    U, X = _pair(U, X)
    return min(1.0, float(singular_values(U.T @ X)[-1]))


def tan_theta(U, X, complement=None) -> float:
    """||(U_perp^T X)(U^T X)^+||_2 with U_perp a deterministic completion of U."""
    U, X = _pair(U, X)
    if complement is None:
        complement = orthonormal_complement(U)
    if complement.shape[1] == 0:
        return 0.0
    B = U.T @ X
    if float(singular_values(B)[-1]) <= ANGLE_RANK_TOL:
        return math.inf
    return matrix_norm((complement.T @ X) @ pseudo_inverse(B), "spectral")


def rank_k_perturbation(U_q, X, k: int, complement=None) -> float:
    """h = ||(U_{d-q}^T X)(U_q^T X)^+ [I_k; 0]||_2.

    The first ``k`` columns of ``U_q`` are taken as U_k.
    """
    U_q, X = _pair(U_q, X)
    q = U_q.shape[1]
    if not 1 <= k <= q:
        raise ValueError(f"need 1 <= k <= q, got k={k}, q={q}")
    if complement is None:
        complement = orthonormal_complement(U_q)
    if complement.shape[1] == 0:
        return 0.0
    B = U_q.T @ X
    if float(singular_values(B)[-1]) <= ANGLE_RANK_TOL:
        return math.inf
    return matrix_norm((complement.T @ X) @ pseudo_inverse(B)[:, :k], "spectral")


class ErrorRatio(NamedTuple):
    """``value`` is a ratio unless the optimal error was zero; then it is the
    absolute error and ``is_ratio`` is False."""

    value: float
    is_ratio: bool

    def __float__(self) -> float:
        return self.value


def approx_error_ratio(A, truth: EigenDecomposition, X, k: int, norm_kind: str = "spectral") -> ErrorRatio:
    """||A - X X^T A|| / ||A - A_k|| in the chosen norm."""
    A = as_matrix(A, "A")
    X = as_matrix(X, "X")
    if not 1 <= k < truth.d:
        raise ValueError(f"need 1 <= k < d, got k={k}")
    if norm_kind not in ("spectral", "frobenius"):
        raise ValueError(f"norm_kind must be spectral or frobenius, got {norm_kind!r}")
    err = matrix_norm(A - X @ (X.T @ A), norm_kind)
    best = truth.tail_error(k, norm_kind)
    if best == 0.0:
        return ErrorRatio(err, False)
    return ErrorRatio(err / best, True)


@dataclass(frozen=True)
class AngleReport:
    sin_theta_k: float
    tan_theta_k: float
    cos_theta_q: float
    tan_theta_q: float
    h: float


class AngleProbe:
    """Angle diagnostics against fixed U_k and U_q, complements computed once."""

    def __init__(self, truth: EigenDecomposition, k: int, q: int):
        if not 1 <= k <= q <= truth.d:
            raise ValueError(f"need 1 <= k <= q <= d, got k={k}, q={q}, d={truth.d}")
        self.k, self.q = k, q
        self.U_k = truth.top(k)
        self.U_q = truth.top(q)
        self.comp_k = truth.vectors[:, k:]
        self.comp_q = truth.vectors[:, q:]

    def report(self, X) -> AngleReport:
        return AngleReport(
            sin_theta_k=sin_theta(self.U_k, X),
            tan_theta_k=tan_theta(self.U_k, X, self.comp_k),
            cos_theta_q=cos_theta(self.U_q, X),
            tan_theta_q=tan_theta(self.U_q, X, self.comp_q),
            h=rank_k_perturbation(self.U_q, X, self.k, self.comp_q),
        )
