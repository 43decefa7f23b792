"""
inference.py - posterior over the inducing values, prediction, forecasting,
and nearest-prototype classification.

For one collection with B series and effective noise c = B * sigma**2, the
best Gaussian over the process values at the m inducing timestamps has

    Lam  = K_SS + (1/c) * sum_i C_i C_i^T        (C_i = K(S, T_i))
    mean = (1/c) * K_SS Lam^{-1} sum_i C_i y_i
    cov  = K_SS Lam^{-1} K_SS

Predictions at query timestamps T marginalize the signal through the
inducing values:

    p      = K_TS K_SS^{-1} mean
    var[t] = k(t,t) - q(t,t) + [K_TS K_SS^{-1} cov K_SS^{-1} K_ST](t,t)

Classification assigns a series to the class whose predicted mean curve is
closest in Euclidean distance (ties go to the smallest class index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Collection,
    Dataset,
    InputError,
    ModelParams,
    NumericalError,
    Prediction,
    TimeSeries,
    ValidationError,
)
from .kernel import (
    CholeskyFactor,
    KernelParams,
    chol_jittered,
    kernel_matrix,
)

__all__ = [
    "VariationalPosterior",
    "fit_posterior",
    "predict",
    "forecast",
    "classify",
    "class_posteriors",
    "classify_many",
    "FORECAST_HORIZON",
    "VARIANCE_SLACK",
]

# queries past the training range are allowed up to this normalized time
FORECAST_HORIZON = 1.25
# predictive variances this far below zero are treated as roundoff
VARIANCE_SLACK = -1e-8


@dataclass(frozen=True)
class VariationalPosterior:
    """Best Gaussian over class k's process values at its inducing timestamps.

    mean       : (m,)
    covariance : (m, m) symmetric, eigenvalues >= -1e-8
    kernel_factor and precision_factor cache the Cholesky factors of K_SS
    and Lam for reuse in prediction.
    """

    class_id: int
    inducing: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    kernel_factor: CholeskyFactor
    precision_factor: CholeskyFactor


def fit_posterior(collection: Collection, kparams: KernelParams, inducing,
                  sigma: float, jitter: float = 1e-6,
                  class_id: int = 0) -> VariationalPosterior:
    """Compute the optimal posterior for one collection.

    inducing timestamps must lie strictly inside (0, 1). All solves go
    through Cholesky factors; nothing is ever inverted explicitly.
    """
    s = np.asarray(inducing, dtype=float).ravel()
    if s.size < 1 or not np.all(np.isfinite(s)):
        raise ValidationError("inducing timestamps must be a non-empty finite array")
    if s.min() <= 0.0 or s.max() >= 1.0:
        raise ValidationError(
            f"inducing timestamps must lie strictly inside (0, 1), got range "
            f"[{s.min()}, {s.max()}]"
        )
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")

    c = collection.size * sigma * sigma
    k_ss = kernel_matrix(kparams, s)
    lam = k_ss.copy()
    rhs = np.zeros(s.size)
    for ts in collection.series:
        cross = kernel_matrix(kparams, s, ts.timestamps)
        lam += (cross @ cross.T) / c
        rhs += cross @ ts.values
    lam = 0.5 * (lam + lam.T)
    precision_factor = chol_jittered(lam, jitter)
    kernel_factor = chol_jittered(k_ss, jitter)

    mean = (k_ss @ precision_factor.solve(rhs)) / c
    cov = k_ss @ precision_factor.solve(k_ss)
    cov = 0.5 * (cov + cov.T)
    mean.setflags(write=False)
    cov.setflags(write=False)
    s.setflags(write=False)
    return VariationalPosterior(
        class_id=class_id,
        inducing=s,
        mean=mean,
        covariance=cov,
        kernel_factor=kernel_factor,
        precision_factor=precision_factor,
    )


def predict(posterior: VariationalPosterior, kparams: KernelParams,
            query) -> Prediction:
    """Predictive mean and per-point variance at arbitrary query timestamps.

    Queries may exceed 1 (forecasting); far from all data the mean reverts
    to 0 and the variance to the kernel's diagonal. Variances are clipped
    to 0 from below once they clear the VARIANCE_SLACK roundoff check.
    """
    t = np.asarray(query, dtype=float).ravel()
    if t.size < 1 or not np.all(np.isfinite(t)):
        raise ValidationError("query timestamps must be a non-empty finite array")
    k_ts = kernel_matrix(kparams, t, posterior.inducing)  # (n_q, m)
    u = posterior.kernel_factor.solve(k_ts.T)  # K_SS^{-1} K_ST, (m, n_q)
    mean = k_ts @ posterior.kernel_factor.solve(posterior.mean)
    prior_diag = float(np.sum(kparams.amplitudes))
    q_diag = np.sum(k_ts.T * u, axis=0)
    post_diag = np.sum(u * (posterior.covariance @ u), axis=0)
    var = prior_diag - q_diag + post_diag
    low = float(var.min())
    if low < VARIANCE_SLACK:
        raise NumericalError(
            f"predictive variance fell below the roundoff tolerance: {low:.3e}"
        )
    var = np.clip(var, 0.0, None)
    return Prediction(timestamps=t, mean=mean, variance=var)


def _class_kernel(model: ModelParams, k: int) -> KernelParams:
    return KernelParams(model.log_amplitudes[k], model.log_bandwidths[k])


def _check_class(model: ModelParams, k: int):
    if not (isinstance(k, (int, np.integer)) and 0 <= k < model.n_classes):
        raise InputError(
            f"class index {k} is out of range for a model with "
            f"{model.n_classes} classes"
        )


def class_posteriors(model: ModelParams, dataset: Dataset):
    """Fit every class's posterior from its training collection."""
    if model.n_classes != dataset.n_classes:
        raise ValidationError(
            f"model has {model.n_classes} classes but dataset has {dataset.n_classes}"
        )
    h = model.hyper
    return tuple(
        fit_posterior(
            dataset.collections[k], _class_kernel(model, k),
            model.inducing_timestamps(k), h.sigma, h.jitter, class_id=k,
        )
        for k in range(model.n_classes)
    )


def forecast(model: ModelParams, dataset: Dataset, k: int, query) -> Prediction:
    """One prediction for class k's whole collection at the query timestamps.

    k is the internal class index (0..L-1). Queries may run past the
    training range up to normalized time FORECAST_HORIZON.
    """
    _check_class(model, k)
    if model.n_classes != dataset.n_classes:
        raise ValidationError(
            f"model has {model.n_classes} classes but dataset has {dataset.n_classes}"
        )
    t = np.asarray(query, dtype=float).ravel()
    if t.size and np.all(np.isfinite(t)) and float(t.max()) > FORECAST_HORIZON:
        raise InputError(
            f"forecast queries are limited to normalized time {FORECAST_HORIZON}, "
            f"got {float(t.max())}"
        )
    h = model.hyper
    posterior = fit_posterior(
        dataset.collections[k], _class_kernel(model, k),
        model.inducing_timestamps(k), h.sigma, h.jitter, class_id=k,
    )
    return predict(posterior, _class_kernel(model, k), t)


def _distances(model: ModelParams, posteriors, series: TimeSeries) -> np.ndarray:
    d = np.empty(len(posteriors))
    for k, post in enumerate(posteriors):
        pred = predict(post, _class_kernel(model, k), series.timestamps)
        d[k] = float(np.linalg.norm(series.values - pred.mean))
    return d


def classify(model: ModelParams, dataset: Dataset, series: TimeSeries):
    """Label one series by its nearest predicted mean curve.

    Returns (class index, per-class distance vector). The reported label is
    always the argmin of the distances; ties break to the smallest index.
    """
    posteriors = class_posteriors(model, dataset)
    d = _distances(model, posteriors, series)
    return int(np.argmin(d)), d


def classify_many(model: ModelParams, dataset: Dataset, series_list):
    """Classify a batch of series, fitting each class posterior only once.

    Returns a list of (class index, distance vector) pairs in input order.
    """
    posteriors = class_posteriors(model, dataset)
    out = []
    for series in series_list:
        d = _distances(model, posteriors, series)
        out.append((int(np.argmin(d)), d))
    return out
