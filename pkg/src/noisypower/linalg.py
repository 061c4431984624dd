"""Dense kernels: Householder QR, cyclic Jacobi eigensolver, pseudo-inverse,
matrix norms.

Matrices are plain ``numpy.ndarray`` of dtype float64 (row-major, 2-D,
finite).  Singular values of rectangular matrices always come from the
eigensolver applied to the smaller Gram matrix.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

EIG_DIM_CAP = 512
QR_RANK_TOL = 1e-12
JACOBI_REL_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10
GRAM_NOISE_FLOOR = 64 * float(np.finfo(np.float64).eps)

NORM_KINDS = ("spectral", "frobenius", "entrywise_max")


class NumericalError(ArithmeticError):
    """Raised when an input or an iterate is not finite."""


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Validate ``M`` as a finite 2-D float64 array (a column for 1-D input)."""
    a = np.asarray(M, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a symmetric PSD matrix, eigenvalues non-increasing."""

    vectors: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        s = np.asarray(self.values, dtype=np.float64).ravel()
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] != s.size:
            raise ValueError("vectors must be d x d and values of length d")
        if np.any(np.diff(s) > 0):
            raise ValueError("eigenvalues must be sorted in non-increasing order")
        if np.any(s < 0):
            raise ValueError("eigenvalues must be non-negative")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "values", s)

    @property
    def d(self) -> int:
        return self.values.size

    def top(self, m: int) -> np.ndarray:
        """U_m: the leading ``m`` eigenvectors as a d x m matrix."""
        return self.vectors[:, :m]

    def sigma(self, i: int) -> float:
        """1-based eigenvalue, ``sigma(d + 1) == 0`` by convention."""
        if i < 1:
            raise IndexError("eigenvalues are 1-based")
        return float(self.values[i - 1]) if i <= self.d else 0.0

    def gap(self, k: int, q: int) -> float:
        """sigma_k - sigma_{q+1}."""
        return self.sigma(k) - self.sigma(q + 1)

    def matrix(self) -> np.ndarray:
        a = (self.vectors * self.values) @ self.vectors.T
        return 0.5 * (a + a.T)

    def best_rank(self, k: int) -> np.ndarray:
        """A_k = U_k Sigma_k U_k^T."""
        u = self.vectors[:, :k]
        return (u * self.values[:k]) @ u.T

    def tail_error(self, k: int, kind: str) -> float:
        """||A - A_k|| in the spectral or Frobenius norm."""
        tail = self.values[k:]
        if kind == "spectral":
            return float(tail[0]) if tail.size else 0.0
        if kind == "frobenius":
            return float(math.sqrt(np.sum(tail * tail)))
        raise ValueError(f"unknown norm kind {kind!r}")


class QRResult(NamedTuple):
    q: np.ndarray
    r: np.ndarray
    deficient: tuple[int, ...]

    @property
    def flagged(self) -> bool:
        return bool(self.deficient)


def _house(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Reflector (v, beta) with v[0] = 1 and (I - beta v v^T) x = ||x|| e_1."""
    v = x.copy()
    sigma = float(x[1:] @ x[1:])
    v[0] = 1.0
    x0 = float(x[0])
    if sigma == 0.0:
        return v, (0.0 if x0 >= 0.0 else 2.0)
    mu = math.sqrt(x0 * x0 + sigma)
    v0 = x0 - mu if x0 <= 0.0 else -sigma / (x0 + mu)
    beta = 2.0 * v0 * v0 / (sigma + v0 * v0)
    v[1:] /= v0
    return v, beta


def _apply_reflectors(refl, Y: np.ndarray, reverse: bool) -> np.ndarray:
    order = reversed(refl) if reverse else refl
    for j, v, beta in order:
        if beta != 0.0:
            Y[j:] -= beta * np.outer(v, v @ Y[j:])
    return Y


def _span_basis(B: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormal basis of range(B) by twice-iterated Gram-Schmidt."""
    cols: list[np.ndarray] = []
    for i in range(B.shape[1]):
        x = B[:, i].copy()
        for _ in range(2):
            for c in cols:
                x -= (c @ x) * c
        nrm = float(np.linalg.norm(x))
        if nrm > tol:
            cols.append(x / nrm)
    return np.column_stack(cols) if cols else np.zeros((B.shape[0], 0))


def _householder(M: np.ndarray, full: bool) -> QRResult:
    d, p = M.shape
    r = M.copy()
    tol = QR_RANK_TOL * float(np.linalg.norm(M))
    refl: list[tuple[int, np.ndarray, float]] = []
    deficient: list[int] = []
    for j in range(p):
        x = r[j:, j]
        if float(np.linalg.norm(x)) <= tol:
            # Q[:, j] := Gram-Schmidt residual of the canonical vector that is
            # least explained by the accepted columns and the columns still to
            # come, so later independent columns are not flagged.
            w = _apply_reflectors(refl, np.eye(d), reverse=False)[j:]
            basis = _span_basis(r[j:, j + 1 :], tol)
            if basis.shape[1] < w.shape[0]:
                w = w - basis @ (basis.T @ w)
            c = int(np.argmax(np.linalg.norm(w, axis=0)))
            u = w[:, c] / np.linalg.norm(w[:, c])
            v, beta = _house(u)
            r[j:, j] = 0.0
            deficient.append(j)
        else:
            v, beta = _house(x)
        if beta != 0.0:
            r[j:, j:] -= beta * np.outer(v, v @ r[j:, j:])
        r[j + 1 :, j] = 0.0
        refl.append((j, v, beta))
    ncols = d if full else p
    q = _apply_reflectors(refl, np.eye(d, ncols), reverse=True)
    return QRResult(q, np.triu(r[:p, :]), tuple(deficient))


def qr_factorize(M) -> QRResult:
    """Thin Householder QR with ``R_ii >= 0``.

    A column whose residual norm is at most ``1e-12 * ||M||_F`` is flagged;
    its Q column is replaced by a deterministic completion vector and the
    corresponding R diagonal is 0, so the factorization never aborts.
    """
    M = as_matrix(M)
    if M.shape[0] < M.shape[1]:
        raise ValueError(f"qr_factorize needs rows >= cols, got shape {M.shape}")
    return _householder(M, full=False)


def orthonormal_complement(U) -> np.ndarray:
    """Deterministic d x (d - m) orthonormal basis of span(U)^perp."""
    U = as_matrix(U)
    d, m = U.shape
    if m >= d:
        return np.zeros((d, 0))
    return _householder(U, full=True).q[:, m:]


@functools.lru_cache(maxsize=64)
def _round_robin(m: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """The m - 1 rounds of disjoint (P, Q) pairs covering every pair once."""
    order = np.arange(m)
    half = m // 2
    rounds = []
    for _ in range(m - 1):
        rounds.append((order[:half].copy(), order[half:][::-1].copy()))
        order = np.concatenate((order[:1], order[-1:], order[1:-1]))
    return tuple(rounds)


def _jacobi(a: np.ndarray, vectors: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Cyclic Jacobi with round-robin ordering of disjoint rotations.

    Each round applies n/2 disjoint plane rotations at once as one dense
    orthogonal factor; a sweep is n - 1 rounds and touches every pair once.
    """
    n = a.shape[0]
    m = n + (n % 2)
    work = np.zeros((m, m))
    work[:n, :n] = a
    vecs = np.eye(m) if vectors else None
    scale = float(np.linalg.norm(a))
    J = np.zeros((m, m))
    for _ in range(JACOBI_MAX_SWEEPS):
        off = work - np.diag(np.diagonal(work))
        if float(np.linalg.norm(off)) <= JACOBI_REL_TOL * scale:
            break
        for P, Q in _round_robin(m):
            apq = work[P, Q]
            app = work[P, P]
            aqq = work[Q, Q]
            # negligible couplings are dropped instead of rotated
            active = np.abs(apq) > 1e-18 * (np.abs(app) + np.abs(aqq))
            if not active.any():
                work[P, Q] = 0.0
                work[Q, P] = 0.0
                continue
            tau = (aqq - app) / (2.0 * np.where(active, apq, 1.0))
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t[~active] = 0.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            J[P, P] = c
            J[Q, Q] = c
            J[P, Q] = s
            J[Q, P] = -s
            work = J.T @ work @ J
            work[P, Q] = 0.0
            work[Q, P] = 0.0
            if vecs is not None:
                vecs = vecs @ J
            J[P, P] = 0.0
            J[Q, Q] = 0.0
            J[P, Q] = 0.0
            J[Q, P] = 0.0
    values = np.diag(work)[:n].copy()
    idx = np.argsort(-values, kind="stable")
    values = values[idx]
    if vecs is None:
        return values, None
    # the padding index never couples, so its row and column stay trivial
    vecs = vecs[:n, :n][:, idx]
    # sign convention: largest-magnitude component of each vector positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    return values, vecs * signs


def _pow2_exponent(M: np.ndarray) -> int:
    """e with max|2^e M| in [0.5, 1); scaling by 2^e is exact and keeps Gram
    products away from underflow and overflow."""
    top = float(np.max(np.abs(M))) if M.size else 0.0
    return 0 if top == 0.0 else -math.frexp(top)[1]


def _gram_eigvals(M: np.ndarray) -> np.ndarray:
    """Squared singular values of ``M`` from its smaller Gram matrix."""
    g = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    g = 0.5 * (g + g.T)
    return np.clip(_jacobi(g, vectors=False)[0], 0.0, None)


def singular_values(M) -> np.ndarray:
    """Non-increasing singular values, ``min(rows, cols)`` of them."""
    M = as_matrix(M)
    e = _pow2_exponent(M)
    return np.ldexp(np.sqrt(_gram_eigvals(np.ldexp(M, e))), -e)


def sym_eig(A, max_dim: int = EIG_DIM_CAP) -> EigenDecomposition:
    """Eigendecomposition of a symmetric PSD matrix by cyclic Jacobi sweeps.

    Eigenvalues in ``[-1e-10 * max(1, ||A||_2), 0)`` are clipped to zero;
    anything more negative is rejected as non-PSD.
    """
    A = as_matrix(A, "A")
    d = A.shape[0]
    if A.shape[1] != d:
        raise ValueError(f"sym_eig needs a square matrix, got {A.shape}")
    if d > max_dim:
        raise ValueError(f"dimension {d} exceeds the eigensolver cap {max_dim}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if float(np.max(np.abs(A - A.T))) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    values, vecs = _jacobi(0.5 * (A + A.T))
    floor = -PSD_TOL * max(1.0, abs(float(values[0])))
    if float(values[-1]) < floor:
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {values[-1]:.3e})")
    return EigenDecomposition(vecs, np.clip(values, 0.0, None))


def pseudo_inverse(M, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via the eigenpairs of the smaller Gram.

    Singular values at or below ``tol`` (default
    ``1e-12 * max(rows, cols) * sigma_max``) are treated as zero.
    """
    M = as_matrix(M)
    rows, cols = M.shape
    # pinv(M) = 2^e pinv(2^e M); work at unit scale
    e = _pow2_exponent(M)
    M = np.ldexp(M, e)
    if tol is not None:
        if tol <= 0:
            raise ValueError("tol must be positive")
        tol = math.ldexp(tol, e)
    wide = rows <= cols
    g = M @ M.T if wide else M.T @ M
    lam, vecs = _jacobi(0.5 * (g + g.T))
    lam = np.clip(lam, 0.0, None)
    sv = np.sqrt(lam)
    if tol is None:
        tol = 1e-12 * max(rows, cols) * (float(sv[0]) if sv.size else 0.0)
    # Gram eigenvalues carry absolute error ~ eps * lambda_max, which the
    # square root inflates to ~ sqrt(eps) * sigma_max; treat that floor as zero
    floor = GRAM_NOISE_FLOOR * max(rows, cols) * (float(lam[0]) if lam.size else 0.0)
    keep = (sv > tol) & (lam > floor)
    vk = vecs[:, keep]
    core = (vk / lam[keep]) @ vk.T
    # wide: M^+ = M^T U S^-2 U^T ; tall: M^+ = V S^-2 V^T M^T
    with np.errstate(over="ignore"):
        P = np.ldexp(M.T @ core if wide else core @ M.T, e)
    if not np.all(np.isfinite(P)):
        raise NumericalError("pseudo-inverse is not representable (overflow)")
    return P


def matrix_norm(M, kind: str = "spectral") -> float:
    M = as_matrix(M)
    if kind == "spectral":
        return float(singular_values(M)[0])
    if kind == "frobenius":
        return float(np.linalg.norm(M))
    if kind == "entrywise_max":
        return float(np.max(np.abs(M)))
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
