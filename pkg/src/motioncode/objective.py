"""
objective.py - training objective for jointly fitted collection models.

Each labeled collection gets a sparse process model anchored at m inducing
("most informative") timestamps. The per-collection evidence bound is the
tightest lower bound on the collection log-likelihood over all variational
distributions at those timestamps; the variational distribution is maximized
out analytically, leaving a closed form. With B series in the collection and
noise scale sigma, the effective noise variance is c = B * sigma**2 and the
bound decomposes over series:

    bound = sum_i [ log N(y_i | 0, c*I + Q_i) - (tr K_i - tr Q_i) / (2c) ]
    Q_i   = C_i^T K_SS^{-1} C_i,   C_i = K(S, T_i)

Every series term is evaluated through an m x m inner system, so one pass
costs O(m^2 * N) time for N total points, never O(N^2).

The training loss sums the negated bounds over classes and adds a ridge
penalty on the per-class codes:

    loss = -sum_k bound_k + lam * sum_k ||z_k||^2

where class k's inducing timestamps are sigmoid(code_map @ z_k).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    Collection,
    Dataset,
    ModelParams,
    NumericalError,
    ValidationError,
    code_to_timestamps,
)
from .kernel import KernelParams, chol_jittered, kernel_matrix_components

__all__ = [
    "BoundGrads",
    "ModelGrads",
    "informative_timestamps",
    "lmax_bound",
    "lmax_bound_and_grads",
    "total_loss",
    "loss_gradient",
]

LOG_2PI = float(np.log(2.0 * np.pi))


def informative_timestamps(code_map, code) -> np.ndarray:
    """Inducing timestamps of one class: sigmoid(code_map @ code), in (0, 1)."""
    return code_to_timestamps(code_map, code)


@dataclass(frozen=True)
class BoundGrads:
    """One collection's bound value and its parameter gradients.

    d_log_amplitudes : (J,)
    d_log_bandwidths : (J,)
    d_timestamps     : (m,)  derivative w.r.t. the inducing timestamps
    """

    value: float
    d_log_amplitudes: np.ndarray
    d_log_bandwidths: np.ndarray
    d_timestamps: np.ndarray


@dataclass(frozen=True)
class ModelGrads:
    """Training-loss gradients, shapes mirroring ModelParams."""

    d_log_amplitudes: np.ndarray  # (L, J)
    d_log_bandwidths: np.ndarray  # (L, J)
    d_codes: np.ndarray  # (L, d)
    d_code_map: np.ndarray  # (m, d)


def _check_inducing(s) -> np.ndarray:
    s = np.asarray(s, dtype=float).ravel()
    if s.size < 1 or not np.all(np.isfinite(s)):
        raise ValidationError("inducing timestamps must be a non-empty finite array")
    if s.min() < 0.0 or s.max() > 1.0:
        raise ValidationError(
            f"inducing timestamps must lie in [0, 1], got range [{s.min()}, {s.max()}]"
        )
    return s


def _bound_core(kp: KernelParams, s, times, values, c, jitter, want_grads):
    """Shared evaluation path. times/values are sequences of 1-d arrays.

    Returns (value, None) or (value, (d_log_amp, d_log_bw, d_timestamps)).
    """
    m = s.size
    p_comps, d_ss = kernel_matrix_components(kp, s)
    k_ss = p_comps.sum(axis=0)
    factor = chol_jittered(k_ss, jitter)
    amps = kp.amplitudes
    bws = kp.bandwidths
    amp_total = float(np.sum(amps))
    n_comp = kp.n_components

    value = 0.0
    if want_grads:
        p_dot = np.zeros((m, m))
        d_la = np.zeros(n_comp)
        d_lb = np.zeros(n_comp)
        d_s = np.zeros(m)

    for t_i, y_i in zip(times, values):
        n_i = t_i.size
        c_comps, d_i = kernel_matrix_components(kp, s, t_i)
        c_i = c_comps.sum(axis=0)
        v = factor.half_solve(c_i)  # (m, n_i)
        e = c * np.eye(m) + v @ v.T  # min eigenvalue >= c, no jitter needed
        try:
            l_e = np.linalg.cholesky(e)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "inner inducing-point system lost positive definiteness"
            ) from exc
        w = v @ y_i
        ew = scipy.linalg.cho_solve((l_e, True), w)
        quad = (float(y_i @ y_i) - float(w @ ew)) / c
        logdet = (n_i - m) * np.log(c) + 2.0 * float(np.sum(np.log(np.diag(l_e))))
        log_lik = -0.5 * (n_i * LOG_2PI + logdet + quad)
        trace_gap = n_i * amp_total - float(np.sum(v * v))
        value += log_lik - trace_gap / (2.0 * c)

        if want_grads:
            # adjoint of the series covariance block is rank m+1; contract it
            # without ever forming an n x n matrix
            ei_v = scipy.linalg.cho_solve((l_e, True), v)  # (m, n_i)
            resid = (y_i - v.T @ ew) / c  # (n_i,)
            w_mat = scipy.linalg.solve_triangular(factor.lower.T, v, lower=False)
            c_dot = (w_mat @ v.T) @ ei_v / c + np.outer(w_mat @ resid, resid)
            p_dot -= 0.5 * (c_dot @ w_mat.T)
            diff_cross = s[:, None] - t_i[None, :]
            g_cross = np.zeros((m, n_i))
            for j in range(n_comp):
                d_la[j] += float(np.sum(c_dot * c_comps[j])) - n_i * amps[j] / (2.0 * c)
                d_lb[j] += -0.5 * bws[j] * float(np.sum(c_dot * d_i * c_comps[j]))
                g_cross -= bws[j] * diff_cross * c_comps[j]
            d_s += np.sum(c_dot * g_cross, axis=1)

    if not np.isfinite(value):
        raise NumericalError("collection bound evaluated to a non-finite value")
    if not want_grads:
        return value, None

    p_dot = 0.5 * (p_dot + p_dot.T)
    diff_ss = s[:, None] - s[None, :]
    g_ss = np.zeros((m, m))
    for j in range(n_comp):
        d_la[j] += float(np.sum(p_dot * p_comps[j]))
        d_lb[j] += -0.5 * bws[j] * float(np.sum(p_dot * d_ss * p_comps[j]))
        g_ss -= bws[j] * diff_ss * p_comps[j]
    d_s += 2.0 * np.sum(p_dot * g_ss, axis=1)
    return value, (d_la, d_lb, d_s)


def _collection_arrays(collection: Collection):
    times = tuple(s.timestamps for s in collection.series)
    values = tuple(s.values for s in collection.series)
    return times, values


def lmax_bound(kernel_params: KernelParams, inducing, collection: Collection,
               sigma: float, jitter: float = 1e-6) -> float:
    """Evidence lower bound of one collection at the given inducing timestamps.

    c = (number of series) * sigma**2 is the effective per-point noise
    variance. Cost is O(m^2 * N) for N total observations.
    """
    s = _check_inducing(inducing)
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    times, values = _collection_arrays(collection)
    c = collection.size * sigma * sigma
    value, _ = _bound_core(kernel_params, s, times, values, c, jitter, want_grads=False)
    return value


def lmax_bound_and_grads(kernel_params: KernelParams, inducing, collection: Collection,
                         sigma: float, jitter: float = 1e-6) -> BoundGrads:
    """Bound value plus analytic gradients w.r.t. log-kernel parameters and
    the inducing timestamps. Same O(m^2 * N) cost as the value alone."""
    s = _check_inducing(inducing)
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    times, values = _collection_arrays(collection)
    c = collection.size * sigma * sigma
    value, grads = _bound_core(kernel_params, s, times, values, c, jitter, want_grads=True)
    d_la, d_lb, d_s = grads
    return BoundGrads(
        value=value,
        d_log_amplitudes=d_la,
        d_log_bandwidths=d_lb,
        d_timestamps=d_s,
    )


def _check_match(params: ModelParams, dataset: Dataset):
    if params.n_classes != dataset.n_classes:
        raise ValidationError(
            f"model has {params.n_classes} classes but dataset has {dataset.n_classes}"
        )


def _class_term(params: ModelParams, dataset: Dataset, k: int, want_grads: bool):
    h = params.hyper
    kp = KernelParams(params.log_amplitudes[k], params.log_bandwidths[k])
    z_k = params.codes[k]
    s_k = code_to_timestamps(params.code_map, z_k)
    collection = dataset.collections[k]
    times, values = _collection_arrays(collection)
    c = collection.size * h.sigma * h.sigma
    value, grads = _bound_core(kp, s_k, times, values, c, h.jitter, want_grads)
    penalty = h.lam * float(z_k @ z_k)
    if not want_grads:
        return -value + penalty, None
    d_la, d_lb, d_s = grads
    gate = d_s * s_k * (1.0 - s_k)  # chain through the sigmoid
    d_code = -(params.code_map.T @ gate) + 2.0 * h.lam * z_k
    d_map = -np.outer(gate, z_k)
    return -value + penalty, (-d_la, -d_lb, d_code, d_map)


def total_loss(params: ModelParams, dataset: Dataset, threads: int = 1) -> float:
    """Training loss: sum of negated collection bounds plus the code penalty."""
    _check_match(params, dataset)
    ks = range(dataset.n_classes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            terms = list(pool.map(lambda k: _class_term(params, dataset, k, False), ks))
    else:
        terms = [_class_term(params, dataset, k, False) for k in ks]
    # fixed class-order reduction keeps results reproducible at any thread count
    return float(sum(t[0] for t in terms))


def loss_gradient(params: ModelParams, dataset: Dataset, threads: int = 1):
    """Training loss and its gradients w.r.t. every learnable parameter.

    Returns (loss, ModelGrads). Per-class work is independent, so classes can
    be evaluated on a thread pool; the reduction always runs in class order.
    """
    _check_match(params, dataset)
    ks = range(dataset.n_classes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            terms = list(pool.map(lambda k: _class_term(params, dataset, k, True), ks))
    else:
        terms = [_class_term(params, dataset, k, True) for k in ks]

    L, J = params.log_amplitudes.shape
    d = params.hyper.d
    m = params.hyper.m
    d_la = np.zeros((L, J))
    d_lb = np.zeros((L, J))
    d_codes = np.zeros((L, d))
    d_map = np.zeros((m, d))
    loss = 0.0
    for k, (term, grads) in enumerate(terms):
        loss += term
        d_la[k], d_lb[k], d_codes[k] = grads[0], grads[1], grads[2]
        d_map += grads[3]
    return float(loss), ModelGrads(
        d_log_amplitudes=d_la,
        d_log_bandwidths=d_lb,
        d_codes=d_codes,
        d_code_map=d_map,
    )
