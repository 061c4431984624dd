"""Noisy subspace (power) iteration, its iteration-count and noise-budget
calculators, and a compliance check of recorded noise against a budget.

Every asymptotic constant in the calculators defaults to 1 and can be
overridden with the ``constant`` keyword.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import EigenDecomposition, NumericalError, as_matrix, matrix_norm, qr_factorize
from .matgen import random_orthonormal
from .metrics import AngleProbe, approx_error_ratio
from .rng import RandomSource

# default for the unspecified proof constant C in g_l
SHRINK_CONSTANT = 0.25

TRACE_COLUMNS = (
    "iter",
    "g2_norm",
    "uqg_norm",
    "sin_theta_k",
    "tan_theta_k",
    "tan_theta_q",
    "cos_theta_q",
    "h",
    "g",
    "err_ratio_spectral",
    "err_ratio_frobenius",
)

NoiseCallback = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NoiseModel:
    """Per-iteration perturbation G_l added to A X_{l-1} before QR.

    ``gaussian`` draws iid N(0, stddev^2) entries from the run's stream keyed
    by the iteration index; ``callback`` is called as ``fn(l, X_prev)``.
    """

    kind: str = "none"
    stddev: float = 0.0
    callback: NoiseCallback | None = None

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "callback"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.stddev < 0:
            raise ValueError("stddev must be non-negative")
        if self.kind == "callback" and self.callback is None:
            raise ValueError("callback noise needs a callable")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def gaussian(cls, stddev: float) -> "NoiseModel":
        return cls("gaussian", float(stddev))

    @classmethod
    def from_callback(cls, fn: NoiseCallback) -> "NoiseModel":
        return cls("callback", callback=fn)

    @classmethod
    def replay(cls, noises) -> "NoiseModel":
        """Replay captured matrices; ``noises[l - 1]`` is used at iteration l."""
        noises = [np.asarray(g, dtype=np.float64) for g in noises]
        return cls.from_callback(lambda ell, _x: noises[ell - 1])

    def draw(self, ell: int, X_prev: np.ndarray, rng: RandomSource) -> np.ndarray | None:
        if self.kind == "none":
            return None
        if self.kind == "gaussian":
            return self.stddev * rng.child("noise", ell).normal(X_prev.shape)
        G = np.asarray(self.callback(ell, X_prev), dtype=np.float64)
        if G.shape != X_prev.shape:
            raise ValueError(f"noise callback returned shape {G.shape}, expected {X_prev.shape}")
        if not np.all(np.isfinite(G)):
            raise NumericalError(f"noise callback returned non-finite entries at iteration {ell}")
        return G


@dataclass(frozen=True)
class RunConfig:
    k: int
    p: int
    q: int
    L: int
    seed: int = 0
    record_diagnostics: bool = True

    def validate(self, d: int) -> None:
        if not 1 <= self.k <= self.q <= self.p <= d:
            raise ValueError(
                f"need 1 <= k <= q <= p <= d, got k={self.k}, q={self.q}, p={self.p}, d={d}"
            )
        if self.L < 1:
            raise ValueError(f"L must be at least 1, got {self.L}")


@dataclass
class IterationRecord:
    iter: int
    g2_norm: float | None = None
    uqg_norm: float | None = None
    sin_theta_k: float | None = None
    tan_theta_k: float | None = None
    tan_theta_q: float | None = None
    cos_theta_q: float | None = None
    h: float | None = None
    g: float | None = None
    err_ratio_spectral: float | None = None
    err_ratio_frobenius: float | None = None

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass
class IterationTrace:
    k: int
    q: int
    p: int
    records: list[IterationRecord] = field(default_factory=list)
    # iterations whose QR flagged a rank-deficient column
    collapses: list[int] = field(default_factory=list)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def has_noise_norms(self) -> bool:
        return bool(self.records) and all(
            r.g2_norm is not None and r.uqg_norm is not None for r in self.records[1:]
        )


@dataclass(frozen=True)
class ToleranceBudget:
    bound_g2: float
    bound_uqg: float
    epsilon: float
    tau: float
    mode: str
    iterations: int
    admissible: bool = True

    def __post_init__(self):
        if self.bound_g2 < 0 or self.bound_uqg < 0:
            raise ValueError("noise bounds must be non-negative")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def _shrink_offset(truth: EigenDecomposition, k: int, q: int, epsilon: float, C: float) -> float:
    # C eps gap / ((1 - rho) sigma_k), rho = (sigma_{q+1} + C eps gap) / sigma_k
    gap = truth.gap(k, q)
    sk = truth.sigma(k)
    rho = (truth.sigma(q + 1) + C * epsilon * gap) / sk
    return C * epsilon * gap / ((1.0 - rho) * sk)


class TraceRecorder:
    """Computes one IterationRecord per iterate against planted truth."""

    def __init__(self, truth: EigenDecomposition, k: int, q: int, p: int, A=None,
                 budget: ToleranceBudget | None = None, shrink_constant: float = SHRINK_CONSTANT):
        self.truth = truth
        self.A = truth.matrix() if A is None else A
        self.k, self.q = k, q
        self.probe = AngleProbe(truth, k, q)
        self.offset = None
        if budget is not None and truth.gap(k, q) > 0:
            self.offset = _shrink_offset(truth, k, q, budget.epsilon, shrink_constant)
        self.trace = IterationTrace(k=k, q=q, p=p)

    def record(self, ell: int, X: np.ndarray, G: np.ndarray | None) -> IterationRecord:
        rep = self.probe.report(X)
        rec = IterationRecord(
            iter=ell,
            sin_theta_k=rep.sin_theta_k,
            tan_theta_k=rep.tan_theta_k,
            tan_theta_q=rep.tan_theta_q,
            cos_theta_q=rep.cos_theta_q,
            h=rep.h,
        )
        if ell > 0:
            if G is None:
                rec.g2_norm = rec.uqg_norm = 0.0
            else:
                rec.g2_norm = matrix_norm(G, "spectral")
                rec.uqg_norm = matrix_norm(self.probe.U_q.T @ G, "spectral")
        if self.offset is not None:
            rec.g = rep.h - self.offset
        if self.k < self.truth.d:
            rec.err_ratio_spectral = approx_error_ratio(self.A, self.truth, X, self.k, "spectral").value
            rec.err_ratio_frobenius = approx_error_ratio(self.A, self.truth, X, self.k, "frobenius").value
        self.trace.records.append(rec)
        return rec


def initial_iterate(d: int, p: int, rng: RandomSource) -> np.ndarray:
    """X_0: Q factor of a seeded Gaussian d x p matrix."""
    return random_orthonormal(d, p, rng.child("x0"))


def check_symmetric(A, name: str = "A") -> np.ndarray:
    A = as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if float(np.max(np.abs(A - A.T))) > 1e-10 * scale:
        raise ValueError(f"{name} is not symmetric")
    return A


def noisy_power_method(
    A,
    cfg: RunConfig,
    noise: NoiseModel | None = None,
    truth: EigenDecomposition | None = None,
    *,
    budget: ToleranceBudget | None = None,
    x0=None,
    shrink_constant: float = SHRINK_CONSTANT,
) -> tuple[np.ndarray, IterationTrace]:
    """Run ``cfg.L`` steps of Y_l = A X_{l-1} + G_l, Y_l = X_l R_l.

    Diagnostics (``cfg.record_diagnostics``) need ``truth``; ``budget``
    additionally enables the shifted perturbation g_l in the trace.
    """
    A = check_symmetric(A)
    d = A.shape[0]
    cfg.validate(d)
    noise = noise or NoiseModel.none()
    rng = RandomSource(cfg.seed)
    if x0 is None:
        X = initial_iterate(d, cfg.p, rng)
    else:
        X = as_matrix(x0, "x0")
        if X.shape != (d, cfg.p):
            raise ValueError(f"x0 has shape {X.shape}, expected {(d, cfg.p)}")

    recorder = None
    if cfg.record_diagnostics:
        if truth is None:
            raise ValueError("diagnostics need the planted eigendecomposition")
        if truth.d != d:
            raise ValueError("truth dimension does not match A")
        recorder = TraceRecorder(truth, cfg.k, cfg.q, cfg.p, A, budget, shrink_constant)
        recorder.record(0, X, None)
    trace = recorder.trace if recorder else IterationTrace(k=cfg.k, q=cfg.q, p=cfg.p)

    for ell in range(1, cfg.L + 1):
        Y = A @ X
        G = noise.draw(ell, X, rng)
        if G is not None:
            Y = Y + G
        if not np.all(np.isfinite(Y)):
            raise NumericalError(f"non-finite iterate at iteration {ell}")
        X, _, deficient = qr_factorize(Y)
        if deficient:
            trace.collapses.append(ell)
        if recorder:
            recorder.record(ell, X, G)
    return X, trace


def _ceil(x: float) -> int:
    # absorb rounding noise of the log evaluation before taking the ceiling
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return max(1, int(r))
    return max(1, math.ceil(x))


def _dim(truth: EigenDecomposition, d: float | None) -> float:
    return float(truth.d if d is None else d)


def _check_eps_tau(epsilon: float, tau: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")


def _gap(truth: EigenDecomposition, k: int, q: int) -> float:
    gap = truth.gap(k, q)
    if gap <= 0:
        raise ValueError(f"sigma_k - sigma_(q+1) = {gap} is not positive; the gap-dependent bound does not apply")
    return gap


def iteration_bound(truth: EigenDecomposition, k: int, q: int, epsilon: float, tau: float = 1.0,
                    d: float | None = None, constant: float = 1.0) -> float:
    """c * sigma_k / (sigma_k - sigma_{q+1}) * ln(tau d / epsilon), before rounding up."""
    _check_eps_tau(epsilon, tau)
    gap = _gap(truth, k, q)
    return constant * truth.sigma(k) / gap * math.log(tau * _dim(truth, d) / epsilon)


def required_iterations(truth: EigenDecomposition, k: int, q: int, epsilon: float, tau: float = 1.0,
                        d: float | None = None, constant: float = 1.0) -> int:
    """ceil(c * sigma_k / (sigma_k - sigma_{q+1}) * ln(tau d / epsilon))."""
    return _ceil(iteration_bound(truth, k, q, epsilon, tau, d, constant))


def prior_required_iterations(truth: EigenDecomposition, k: int, epsilon: float, tau: float = 1.0,
                              d: float | None = None, constant: float = 1.0) -> int:
    """Consecutive-gap iteration count (the q = k special case)."""
    return required_iterations(truth, k, k, epsilon, tau, d, constant)


def epsilon_admissible(truth: EigenDecomposition, k: int, q: int, epsilon: float, tau: float,
                       d: float | None = None, constant: float = 1.0) -> bool:
    """epsilon <= c (sigma_q / sigma_k) min(1 / ln(sigma_k / sigma_q), 1 / ln(tau d))."""
    sk, sq = truth.sigma(k), truth.sigma(q)
    if sq <= 0:
        return False

    def inv_log(x: float) -> float:
        lx = math.log(x)
        return math.inf if lx <= 0 else 1.0 / lx

    limit = constant * (sq / sk) * min(inv_log(sk / sq), inv_log(tau * _dim(truth, d)))
    return epsilon <= limit


def noise_tolerance(truth: EigenDecomposition, k: int, q: int, p: int, epsilon: float, tau: float = 1.0,
                    d: float | None = None, constant: float = 1.0) -> ToleranceBudget:
    """Gap-dependent limits on ||G_l||_2 and ||U_q^T G_l||_2."""
    _check_eps_tau(epsilon, tau)
    if not 1 <= k <= q <= p:
        raise ValueError(f"need 1 <= k <= q <= p, got k={k}, q={q}, p={p}")
    gap = _gap(truth, k, q)
    dim = _dim(truth, d)
    g2 = constant * epsilon * gap
    uqg = g2 * (math.sqrt(p) - math.sqrt(q - 1)) / (tau * math.sqrt(dim))
    return ToleranceBudget(
        bound_g2=g2,
        bound_uqg=uqg,
        epsilon=epsilon,
        tau=tau,
        mode="gap_dependent",
        iterations=required_iterations(truth, k, q, epsilon, tau, d),
        admissible=epsilon_admissible(truth, k, q, epsilon, tau, d),
    )


def prior_noise_tolerance(truth: EigenDecomposition, k: int, p: int, epsilon: float, tau: float = 1.0,
                          d: float | None = None, constant: float = 1.0) -> ToleranceBudget:
    """Consecutive-gap limits: eps (sigma_k - sigma_{k+1}) and
    (sigma_k - sigma_{k+1}) (sqrt(p) - sqrt(k-1)) / (tau sqrt(d))."""
    _check_eps_tau(epsilon, tau)
    gap = _gap(truth, k, k)
    dim = _dim(truth, d)
    return ToleranceBudget(
        bound_g2=constant * epsilon * gap,
        bound_uqg=constant * gap * (math.sqrt(p) - math.sqrt(k - 1)) / (tau * math.sqrt(dim)),
        epsilon=epsilon,
        tau=tau,
        mode="prior",
        iterations=prior_required_iterations(truth, k, epsilon, tau, d),
    )


def gap_independent_iterations(epsilon: float, tau: float, d: float, constant: float = 1.0) -> int:
    """ceil(c / epsilon * ln(tau d / epsilon))."""
    _check_eps_tau(epsilon, tau)
    return _ceil(constant / epsilon * math.log(tau * d / epsilon))


def gap_independent_tolerance(truth: EigenDecomposition, k: int, p: int, epsilon: float, tau: float = 1.0,
                              d: float | None = None, constant: float = 1.0) -> ToleranceBudget:
    """Limits eps^2 sigma_{k+1} and eps^2 (sqrt(p) - sqrt(k-1)) sigma_{k+1} / (tau sqrt(d)).

    The second limit applies to ||U_k^T G_l||_2, so compliance checks need a
    trace recorded with q = k.
    """
    _check_eps_tau(epsilon, tau)
    if not 1 <= k <= p:
        raise ValueError(f"need 1 <= k <= p, got k={k}, p={p}")
    dim = _dim(truth, d)
    tail = truth.sigma(k + 1)
    g2 = constant * epsilon**2 * tail
    return ToleranceBudget(
        bound_g2=g2,
        bound_uqg=g2 * (math.sqrt(p) - math.sqrt(k - 1)) / (tau * math.sqrt(dim)),
        epsilon=epsilon,
        tau=tau,
        mode="gap_independent",
        iterations=gap_independent_iterations(epsilon, tau, dim),
    )


def gaussian_stddev_for_budget(budget: ToleranceBudget, d: int, p: int, q: int, fraction: float) -> float:
    """Entry stddev s whose expected norms s (sqrt(d) + sqrt(p)) and
    s (sqrt(q) + sqrt(p)) sit at ``fraction`` of both bounds."""
    if fraction < 0:
        raise ValueError("fraction must be non-negative")
    full = budget.bound_g2 / (math.sqrt(d) + math.sqrt(p))
    projected = budget.bound_uqg / (math.sqrt(q) + math.sqrt(p))
    return fraction * min(full, projected)


@dataclass(frozen=True)
class ComplianceReport:
    compliant: tuple[bool, ...]
    first_violation: int | None

    @property
    def all_compliant(self) -> bool:
        return self.first_violation is None


def check_noise_compliance(trace: IterationTrace, budget: ToleranceBudget) -> ComplianceReport:
    """Per-iteration check of the recorded noise norms against ``budget``.

    Entry ``l`` of ``compliant`` refers to iteration ``l``; iteration 0 has no
    noise and is always compliant.
    """
    if not trace.has_noise_norms:
        raise ValueError("trace has no recorded noise norms (run with record_diagnostics)")
    if budget.mode == "gap_independent" and trace.q != trace.k:
        raise ValueError("gap-independent budgets bound ||U_k^T G||; record the trace with q = k")
    flags = [True]
    for rec in trace.records[1:]:
        flags.append(rec.g2_norm <= budget.bound_g2 and rec.uqg_norm <= budget.bound_uqg)
    first = next((i for i, ok in enumerate(flags) if not ok), None)
    return ComplianceReport(tuple(flags), first)
