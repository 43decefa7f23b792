"""
kernel.py - spectral mixture-of-Gaussians covariance and stabilized Cholesky.

The covariance between two timestamps t, s is

    k(t, s) = sum_j amp_j * exp(-0.5 * bw_j * (t - s)^2)

with amp_j > 0, bw_j > 0. Parameters live in log space everywhere so
positivity never has to be enforced by the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import SingularMatrixError, ValidationError

__all__ = [
    "KernelParams",
    "kernel_eval",
    "kernel_matrix",
    "kernel_matrix_components",
    "kernel_diag_total",
    "CholeskyFactor",
    "chol_jittered",
]

JITTER_GROWTH = 10.0
MAX_JITTER_STEPS = 7  # base * 10**p for p in 0..6


@dataclass(frozen=True)
class KernelParams:
    """Log-space parameters of one class's covariance, each shape (J,)."""

    log_amplitudes: np.ndarray
    log_bandwidths: np.ndarray

    def __post_init__(self):
        la = np.atleast_1d(np.asarray(self.log_amplitudes, dtype=float))
        lb = np.atleast_1d(np.asarray(self.log_bandwidths, dtype=float))
        if la.ndim != 1 or la.shape != lb.shape or la.size < 1:
            raise ValidationError(
                f"kernel parameters must be equal-length 1-d arrays, got shapes "
                f"{la.shape} and {lb.shape}"
            )
        with np.errstate(over="ignore"):
            ok = (
                np.all(np.isfinite(la))
                and np.all(np.isfinite(lb))
                and np.all(np.isfinite(np.exp(la)))
                and np.all(np.isfinite(np.exp(lb)))
            )
        if not ok:
            raise ValidationError("kernel log-parameters must exponentiate to finite values")
        la = la.copy()
        lb = lb.copy()
        la.setflags(write=False)
        lb.setflags(write=False)
        object.__setattr__(self, "log_amplitudes", la)
        object.__setattr__(self, "log_bandwidths", lb)

    @property
    def n_components(self) -> int:
        return self.log_amplitudes.size

    @property
    def amplitudes(self) -> np.ndarray:
        return np.exp(self.log_amplitudes)

    @property
    def bandwidths(self) -> np.ndarray:
        return np.exp(self.log_bandwidths)


def kernel_eval(params: KernelParams, t, s) -> np.ndarray:
    """Pointwise covariance k(t, s) with broadcasting."""
    r2 = (np.asarray(t, dtype=float) - np.asarray(s, dtype=float)) ** 2
    amp = params.amplitudes
    bw = params.bandwidths
    out = np.zeros_like(r2, dtype=float)
    for j in range(params.n_components):
        out += amp[j] * np.exp(-0.5 * bw[j] * r2)
    return out


def _sqdist(t, s) -> np.ndarray:
    t = np.asarray(t, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    d = t[:, None] - s[None, :]
    return d * d


def kernel_matrix(params: KernelParams, t, s=None) -> np.ndarray:
    """Cross-covariance matrix K[a, b] = k(t[a], s[b]); s defaults to t."""
    if s is None:
        s = t
    r2 = _sqdist(t, s)
    amp = params.amplitudes
    bw = params.bandwidths
    out = np.zeros_like(r2)
    for j in range(params.n_components):
        out += amp[j] * np.exp(-0.5 * bw[j] * r2)
    return out


def kernel_matrix_components(params: KernelParams, t, s=None):
    """Per-component covariance slices, shape (J, len(t), len(s)).

    The full matrix is the sum over axis 0. Keeping components around makes
    log-parameter gradients cheap:
        d K / d log_amp_j = component_j
        d K / d log_bw_j  = -0.5 * bw_j * r2 * component_j
    so the squared distances are returned alongside.
    """
    if s is None:
        s = t
    r2 = _sqdist(t, s)
    amp = params.amplitudes
    bw = params.bandwidths
    comps = np.empty((params.n_components,) + r2.shape)
    for j in range(params.n_components):
        comps[j] = amp[j] * np.exp(-0.5 * bw[j] * r2)
    return comps, r2


def kernel_diag_total(params: KernelParams, n: int) -> float:
    """Trace of an n-point self-covariance: n * sum_j amp_j (r2 = 0 on the diagonal)."""
    return float(n) * float(np.sum(params.amplitudes))


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor of (A + jitter_used * I), plus solve helpers."""

    lower: np.ndarray
    jitter_used: float

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def solve(self, b) -> np.ndarray:
        """(A + jI)^{-1} b via two triangular solves."""
        y = scipy.linalg.solve_triangular(self.lower, b, lower=True)
        return scipy.linalg.solve_triangular(self.lower.T, y, lower=False)

    def half_solve(self, b) -> np.ndarray:
        """L^{-1} b, the whitening half of the solve."""
        return scipy.linalg.solve_triangular(self.lower, b, lower=True)

    def logdet(self) -> float:
        """log det(A + jI)."""
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def chol_jittered(a: np.ndarray, base_jitter: float) -> CholeskyFactor:
    """Cholesky of (a + j*I), escalating j from base_jitter by powers of ten.

    The jitter is always added, even when the plain factorization would
    succeed, so results are reproducible regardless of conditioning. After
    MAX_JITTER_STEPS failures a SingularMatrixError reports the smallest
    eigenvalue estimate.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"need a square matrix, got shape {a.shape}")
    if not base_jitter > 0:
        raise ValidationError(f"base jitter must be positive, got {base_jitter}")
    n = a.shape[0]
    eye = np.eye(n)
    jitter = float(base_jitter)
    for _ in range(MAX_JITTER_STEPS):
        try:
            lower = np.linalg.cholesky(a + jitter * eye)
            return CholeskyFactor(lower=lower, jitter_used=jitter)
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    min_eig = float(np.linalg.eigvalsh(a)[0])
    raise SingularMatrixError(
        f"matrix of size {n} stayed non positive definite up to jitter "
        f"{jitter / JITTER_GROWTH:g} (smallest eigenvalue ~ {min_eig:.3e})"
    )
