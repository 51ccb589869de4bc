"""Multi-objective primitives and gradient consolidation rules.

Every consolidation strategy is a rule that maps the per-objective losses
``l`` (shape ``(K,)``) and gradients ``g`` (shape ``(K, P)``) to weights on
the probability simplex; the update direction is then ``weights @ g``.

==========  ===================================================
rule        weights
==========  ===================================================
MGD         minimum-norm point of the convex hull of the rows
AVG         ``1 / K``
GMAN        ``softmax(beta * l)``
HV          ``1 / (eta - l_k)``, normalized, ``eta = delta * max(l)``
==========  ===================================================
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionError, NadirError, NumericError

EPS_GUARD = 1e-12
EPS_FLOOR = 1e-3
DEFAULT_DELTA = 1.5
SIMPLEX_ATOL = 1e-9
POLISH_EVERY = 8


def _objectives(l) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    if l.ndim != 1 or l.size < 1:
        raise DimensionError(f"objective vector must be 1-D and non-empty, got shape {l.shape}")
    if not np.all(np.isfinite(l)):
        raise NumericError("objective vector contains non-finite entries")
    return l


def _gradients(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise DimensionError(f"gradient matrix must have shape (K>=1, P>=1), got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient matrix contains non-finite entries")
    return g


def is_simplex(alpha, atol: float = SIMPLEX_ATOL) -> bool:
    """True if ``alpha`` is non-negative and sums to one within ``atol``."""
    alpha = np.asarray(alpha, dtype=float)
    return bool(
        alpha.ndim == 1
        and alpha.size >= 1
        and np.all(alpha >= 0.0)
        and abs(alpha.sum() - 1.0) <= atol
    )


def dominates(a, b) -> bool:
    """Pareto dominance for minimization: ``a`` is nowhere worse and somewhere better."""
    a = _objectives(a)
    b = _objectives(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare objective vectors of length {a.size} and {b.size}")
    return bool(np.all(a <= b) and np.any(a < b))


# ---------------------------------------------------------------------------
# minimum-norm point
# ---------------------------------------------------------------------------


def _polish_on_support(gram: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Solve the equality-constrained QP exactly on the support of ``alpha``.

    Frank-Wolfe only converges to the optimum; once the support is nearly
    identified the KKT system gives it directly. Vertices that come out with
    negative weight are dropped one at a time. The result is kept only if it
    is no worse than ``alpha``.
    """
    support = list(np.flatnonzero(alpha > 0.0))
    while len(support) >= 2:
        n = len(support)
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = gram[np.ix_(support, support)]
        kkt[:n, n] = 1.0
        kkt[n, :n] = 1.0
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        cand = sol[:n]
        if not np.all(np.isfinite(cand)):
            return alpha
        if np.all(cand >= 0.0):
            full = np.zeros_like(alpha)
            full[support] = cand / cand.sum()
            if full @ gram @ full <= alpha @ gram @ alpha:
                return full
            return alpha
        del support[int(np.argmin(cand))]
    return alpha


def _fw_gap(gram: np.ndarray, alpha: np.ndarray) -> float:
    grad = gram @ alpha
    return float(2.0 * (alpha @ grad - grad.min()))


def min_norm_point(g, tol: float = 1e-8, max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm element of the convex hull of the rows of ``g``.

    Frank-Wolfe with away steps on the simplex, applied to the quadratic
    ``alpha @ G @ alpha`` with ``G = g @ g.T``; every step uses exact line
    search. Iteration starts from the shortest row, so the returned norm never
    exceeds ``min_k ||g_k||``.

    Args:
        g: ``(K, P)`` matrix, one gradient per row.
        tol: stop once the Frank-Wolfe duality gap drops below this value.
        max_iter: iteration cap.

    Returns:
        ``(alpha, direction)`` with ``direction = alpha @ g``.
    """
    g = _gradients(g)
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    k = g.shape[0]
    alpha = np.zeros(k)
    if k == 1:
        alpha[0] = 1.0
        return alpha, g[0].copy()

    gram = g @ g.T
    alpha[int(np.argmin(np.diag(gram)))] = 1.0
    for it in range(max_iter):
        grad = gram @ alpha  # half the true gradient
        s = int(np.argmin(grad))
        gap = 2.0 * (alpha @ grad - grad[s])
        if gap < tol:
            break
        if it % POLISH_EVERY == POLISH_EVERY - 1:
            cand = _polish_on_support(gram, alpha)
            if _fw_gap(gram, cand) < tol:
                alpha = cand
                break
        active = np.flatnonzero(alpha > 0.0)
        a = int(active[np.argmax(grad[active])])
        fw_gain = alpha @ grad - grad[s]
        away_gain = grad[a] - alpha @ grad
        d = -alpha.copy()
        if fw_gain >= away_gain:
            d[s] += 1.0
            gamma_max = 1.0
        else:
            d = alpha.copy()
            d[a] -= 1.0
            gamma_max = alpha[a] / (1.0 - alpha[a]) if alpha[a] < 1.0 else np.inf
        curvature = d @ gram @ d
        slope = d @ grad
        if curvature <= 0.0:
            gamma = gamma_max
        else:
            gamma = min(max(-slope / curvature, 0.0), gamma_max)
        if gamma == 0.0:
            break
        alpha = alpha + gamma * d
        alpha[alpha < 1e-15] = 0.0
        alpha /= alpha.sum()

    alpha = _polish_on_support(gram, alpha)
    return alpha, alpha @ g


# ---------------------------------------------------------------------------
# weight rules
# ---------------------------------------------------------------------------


def avg_weights(k: int) -> np.ndarray:
    if int(k) != k or k < 1:
        raise ValueError(f"number of objectives must be a positive integer, got {k!r}")
    return np.full(int(k), 1.0 / int(k))


def gman_weights(l, beta: float) -> np.ndarray:
    """Softmax of ``beta * l``; ``beta = 0`` is the plain average, large beta the worst loss."""
    l = _objectives(l)
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and non-negative, got {beta!r}")
    if beta == 0:
        return avg_weights(l.size)
    z = beta * l
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True)
class NadirState:
    eta: float
    delta: float


def update_nadir(l, delta: float = DEFAULT_DELTA) -> NadirState:
    """Place the nadir at ``delta * max(l)``.

    Losses that are all non-positive have no meaningful multiplicative slack;
    the nadir then sits ``EPS_FLOOR`` above the largest loss.
    """
    l = _objectives(l)
    if not delta > 1:
        raise ValueError(f"slack delta must exceed 1, got {delta!r}")
    top = float(l.max())
    if top > 0:
        eta = delta * top
    else:
        eta = top + EPS_FLOOR
    return NadirState(eta=eta, delta=float(delta))


def _nadir_gaps(l: np.ndarray, nadir: NadirState) -> np.ndarray:
    gaps = nadir.eta - l
    bad = np.flatnonzero(gaps <= EPS_GUARD)
    if bad.size:
        k = int(bad[0])
        raise NadirError(k, float(l[k]), float(nadir.eta))
    return gaps


def hv_weights(l, nadir: NadirState) -> np.ndarray:
    """Inverse-distance-to-nadir weights, normalized to the simplex."""
    l = _objectives(l)
    inv = 1.0 / _nadir_gaps(l, nadir)
    return inv / inv.sum()


def hv_loss(l, nadir: NadirState) -> float:
    """Negative log-hypervolume ``-sum(log(eta - l_k))`` of the box between ``l`` and the nadir."""
    l = _objectives(l)
    return float(-np.sum(np.log(_nadir_gaps(l, nadir))))


# ---------------------------------------------------------------------------
# consolidation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MGD:
    tol: float = 1e-8
    max_iter: int = 10_000


@dataclass(frozen=True)
class AVG:
    pass


@dataclass(frozen=True)
class GMAN:
    beta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"GMAN beta must be finite and non-negative, got {self.beta!r}")


@dataclass(frozen=True)
class HV:
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not self.delta > 1:
            raise ValueError(f"HV slack delta must exceed 1, got {self.delta!r}")


ConsolidationMethod = Union[MGD, AVG, GMAN, HV]


def consolidate(method: ConsolidationMethod, l, g) -> tuple[np.ndarray, np.ndarray]:
    """Reduce K gradients to one direction; returns ``(weights, weights @ g)``."""
    l = _objectives(l)
    g = _gradients(g)
    if g.shape[0] != l.size:
        raise DimensionError(f"{l.size} losses but {g.shape[0]} gradient rows")
    if isinstance(method, MGD):
        return min_norm_point(g, tol=method.tol, max_iter=method.max_iter)
    alpha = loss_weights(method, l)
    return alpha, alpha @ g


def loss_weights(method: ConsolidationMethod, l) -> np.ndarray:
    """Weights of the rules that look only at the losses (AVG, GMAN, HV).

    HV refreshes the nadir from ``l`` before weighting.
    """
    l = _objectives(l)
    if isinstance(method, AVG):
        return avg_weights(l.size)
    if isinstance(method, GMAN):
        return gman_weights(l, method.beta)
    if isinstance(method, HV):
        return hv_weights(l, update_nadir(l, method.delta))
    if isinstance(method, MGD):
        raise TypeError("MGD weights depend on the gradients; use consolidate()")
    raise TypeError(f"unknown consolidation method {method!r}")


def stationarity_residual(weights, g) -> float:
    """Norm of ``sum_k weights_k g_k``; zero exactly at a Pareto-stationary combination."""
    g = _gradients(g)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size != g.shape[0]:
        raise DimensionError(f"{w.size} weights for {g.shape[0]} gradient rows")
    return float(np.linalg.norm(w @ g))
