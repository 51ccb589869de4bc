"""Sample-quality metrics: Frechet distance between Gaussian fits, and mode coverage."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericError

PSD_TOL = 1e-8


class GaussianMoments(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray


class ModeReport(NamedTuple):
    modes_covered: int
    counts: np.ndarray
    reverse_kl: float


def estimate_moments(samples) -> GaussianMoments:
    """Sample mean and unbiased covariance of an ``(N, d)`` array, ``N >= 2``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"samples must be a 2-D array, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"need at least two samples to estimate a covariance, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return GaussianMoments(mean, 0.5 * (cov + cov.T))


def matrix_sqrt_psd(a) -> np.ndarray:
    """Symmetric square root of the PSD part of ``a``.

    ``a`` is symmetrized and eigenvalues below the numerical-rank threshold
    ``d * eps * max|lambda|`` (round-off, including negative ones) are set to 0.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    sym = 0.5 * (a + a.T)
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    cutoff = sym.shape[0] * np.finfo(float).eps * max(np.abs(vals).max(initial=0.0), np.finfo(float).tiny)
    vals = np.where(vals > cutoff, vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _check_psd(cov: np.ndarray, name: str) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionError(f"{name} covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=PSD_TOL * max(1.0, np.abs(cov).max())):
        raise NumericError(f"{name} covariance is not symmetric")
    lowest = np.linalg.eigvalsh(0.5 * (cov + cov.T)).min()
    if lowest < -PSD_TOL * max(1.0, np.abs(cov).max()):
        raise NumericError(f"{name} covariance is not positive semi-definite (eigenvalue {lowest:.3g})")


def frechet_distance(d: GaussianMoments, g: GaussianMoments) -> float:
    """Squared Frechet distance between two Gaussians.

    ``||m_d - m_g||^2 + tr(S_d + S_g - 2 (S_d S_g)^(1/2))``. The trace of the
    product root is taken as ``tr((R S_g R)^(1/2))`` with ``R = S_d^(1/2)``; that
    matrix is symmetric PSD and has the same eigenvalues as ``S_d S_g``.
    """
    m_d, s_d = np.atleast_1d(np.asarray(d.mean, float)), np.atleast_2d(np.asarray(d.cov, float))
    m_g, s_g = np.atleast_1d(np.asarray(g.mean, float)), np.atleast_2d(np.asarray(g.cov, float))
    if m_d.shape != m_g.shape or s_d.shape != s_g.shape or s_d.shape != (m_d.size, m_d.size):
        raise DimensionError("moments must share one dimension")
    _check_psd(s_d, "first")
    _check_psd(s_g, "second")
    root_d = matrix_sqrt_psd(s_d)
    cross = matrix_sqrt_psd(root_d @ s_g @ root_d)
    diff = m_d - m_g
    value = float(diff @ diff + np.trace(s_d) + np.trace(s_g) - 2.0 * np.trace(cross))
    if value < 0.0:
        if value < -PSD_TOL * max(1.0, np.trace(s_d) + np.trace(s_g)):
            raise NumericError(f"Frechet distance came out negative ({value:.3g})")
        value = 0.0
    # exact zero for identical inputs despite round-off in the square roots
    if np.array_equal(m_d, m_g) and np.array_equal(s_d, s_g):
        value = 0.0
    return value


def mode_coverage(samples, centers, std: float, threshold_sigmas: float = 3.0) -> ModeReport:
    """Assign samples to their nearest mode when within ``threshold_sigmas * std``.

    A mode is covered when at least one sample is assigned to it. ``reverse_kl``
    is ``KL(p_gen || uniform)`` over the assigned samples' mode histogram, and
    infinite when nothing is assigned.
    """
    x = np.asarray(samples, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("mode coverage needs a non-empty (N, d) sample array")
    if centers.ndim != 2 or centers.shape[1] != x.shape[1]:
        raise DimensionError(f"centers of shape {centers.shape} do not match samples {x.shape}")
    if not threshold_sigmas > 0 or not std > 0:
        raise ValueError("threshold_sigmas and std must be positive")
    m = centers.shape[0]
    sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    nearest = sq.argmin(axis=1)
    within = sq[np.arange(x.shape[0]), nearest] <= (threshold_sigmas * std) ** 2
    counts = np.bincount(nearest[within], minlength=m)
    total = counts.sum()
    if total == 0:
        return ModeReport(0, counts, float("inf"))
    p = counts[counts > 0] / total
    kl = float(np.sum(p * np.log(p * m)))
    return ModeReport(int(np.count_nonzero(counts)), counts, max(kl, 0.0))
