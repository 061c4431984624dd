"""Distributed private PCA: s data nodes and one central node running noisy
subspace iteration with per-node Gaussian-mechanism noise.

The nodes are simulated in-process.  Each node's noise comes from its own
stream keyed by ``(seed, node_id, l)`` and the central sum runs in node_id
order, so results do not depend on scheduling.  Every real number that
crosses a channel is counted in a :class:`CommLedger`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import EigenDecomposition, NumericalError, matrix_norm, qr_factorize
from .npm import IterationTrace, TraceRecorder, _ceil, check_symmetric, initial_iterate
from .rng import RandomSource, as_source


@dataclass(frozen=True)
class PrivacyParams:
    eps: float
    delta: float

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"privacy eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.delta < 1:
            raise ValueError(f"privacy delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class NodeData:
    node_id: int
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", check_symmetric(self.A, f"A[{self.node_id}]"))


@dataclass
class CommLedger:
    """Reals sent per round as (broadcast, uploaded) pairs."""

    rounds: list[tuple[int, int]] = field(default_factory=list)

    def log_round(self, broadcast: int, uploaded: int) -> None:
        self.rounds.append((broadcast, uploaded))

    @property
    def reals_broadcast(self) -> int:
        return sum(b for b, _ in self.rounds)

    @property
    def reals_uploaded(self) -> int:
        return sum(u for _, u in self.rounds)

    @property
    def total(self) -> int:
        return self.reals_broadcast + self.reals_uploaded

    def per_round_totals(self) -> list[int]:
        return [b + u for b, u in self.rounds]


def calibrate_noise(priv: PrivacyParams, p: int, L: int) -> float:
    """nu = 4 / eps * sqrt(p L ln(1 / delta))."""
    if p < 1 or L < 1:
        raise ValueError("p and L must be positive")
    return 4.0 / priv.eps * math.sqrt(p * L * math.log(1.0 / priv.delta))


def incoherence(truth: EigenDecomposition, d: int | None = None) -> float:
    """mu(A) = d * max_ij |U_ij|, taken literally."""
    d = truth.d if d is None else d
    return d * float(np.max(np.abs(truth.vectors)))


def dp_required_iterations(truth: EigenDecomposition, k: int, q: int, d: float | None = None,
                           constant: float = 1.0) -> int:
    """ceil(c * sigma_k / (sigma_k - sigma_{q+1}) * ln d), no epsilon in the log."""
    gap = truth.gap(k, q)
    if gap <= 0:
        raise ValueError("sigma_k - sigma_(q+1) must be positive")
    dim = float(truth.d if d is None else d)
    return _ceil(constant * truth.sigma(k) / gap * math.log(dim))


def utility_bound_expression(truth: EigenDecomposition, k: int, q: int, s: int, d: float, L: int,
                             nu: float, mu: float) -> float:
    """nu * sqrt(mu s ln d ln L) / (sigma_k - sigma_{q+1}); a comparator value."""
    gap = truth.gap(k, q)
    if gap <= 0:
        raise ValueError("sigma_k - sigma_(q+1) must be positive")
    return nu * math.sqrt(mu * s * math.log(d) * math.log(L)) / gap


def split_psd(truth: EigenDecomposition, s: int) -> list[NodeData]:
    """Split A = B B^T (B = U Sigma^{1/2}) by assigning columns of B to nodes
    round-robin; every part is PSD and the parts sum to A."""
    if s < 1:
        raise ValueError("need at least one node")
    B = truth.vectors * np.sqrt(truth.values)
    parts = []
    for i in range(s):
        Bi = B[:, i::s]
        Ai = Bi @ Bi.T
        parts.append(NodeData(i, 0.5 * (Ai + Ai.T)))
    return parts


def distributed_private_pca(
    parts: list[NodeData],
    k: int,
    p: int,
    L: int,
    priv: PrivacyParams | None,
    rng: RandomSource | int,
    *,
    q: int | None = None,
    truth: EigenDecomposition | None = None,
    nu: float | None = None,
    noise_log: list | None = None,
) -> tuple[np.ndarray, CommLedger, IterationTrace]:
    """Run the distributed noisy power method.

    ``nu`` overrides the calibrated noise scale (``nu=0`` gives the
    non-private distributed method, in which case ``priv`` may be None).
    With ``truth`` (eigenpairs of the aggregate matrix) the trace carries
    diagnostics.  If ``noise_log`` is a list, each round appends the pair
    ``(stddev, per-node noise matrices)`` with stddev = ||X_{l-1}||_inf nu.
    """
    if not parts:
        raise ValueError("need at least one node")
    parts = sorted(parts, key=lambda n: n.node_id)
    if len({n.node_id for n in parts}) != len(parts):
        raise ValueError("node ids must be distinct")
    d = parts[0].A.shape[0]
    if any(n.A.shape != (d, d) for n in parts):
        raise ValueError("all nodes must hold matrices of the same dimension")
    q = k if q is None else q
    if not 1 <= k <= q <= p <= d:
        raise ValueError(f"need 1 <= k <= q <= p <= d, got k={k}, q={q}, p={p}, d={d}")
    if L < 1:
        raise ValueError("L must be at least 1")
    if nu is None:
        if priv is None:
            raise ValueError("privacy parameters are required unless nu is given")
        nu = calibrate_noise(priv, p, L)
    if nu < 0:
        raise ValueError("nu must be non-negative")

    rng = as_source(rng)
    s = len(parts)
    X = initial_iterate(d, p, rng)
    ledger = CommLedger()
    recorder = None
    if truth is not None:
        if truth.d != d:
            raise ValueError("truth dimension does not match the node matrices")
        recorder = TraceRecorder(truth, k, q, p)
        recorder.record(0, X, None)
    trace = recorder.trace if recorder else IterationTrace(k=k, q=q, p=p)

    for ell in range(1, L + 1):
        # broadcast X_{l-1} to every node
        broadcast = s * d * p
        scale = matrix_norm(X, "entrywise_max") * nu
        Y = None
        G = None
        node_noise = []
        for node in parts:
            Yi = node.A @ X
            if nu > 0:
                Gi = scale * rng.child("node", node.node_id, ell).normal((d, p))
                Yi = Yi + Gi
                G = Gi.copy() if G is None else G + Gi
                node_noise.append(Gi)
            # upload Y_i to the center
            Y = Yi if Y is None else Y + Yi
        ledger.log_round(broadcast, s * d * p)
        if noise_log is not None:
            noise_log.append((scale, node_noise))
        if not np.all(np.isfinite(Y)):
            raise NumericalError(f"non-finite aggregate at iteration {ell}")
        X, _, deficient = qr_factorize(Y)
        if deficient:
            trace.collapses.append(ell)
        if recorder:
            recorder.record(ell, X, G)
    return X, ledger, trace
