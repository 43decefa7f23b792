import dataclasses

import numpy as np
import pytest

from motioncode.core import (
    Collection,
    Dataset,
    Hyperparams,
    InputError,
    ModelParams,
    TimeSeries,
    ValidationError,
)
from motioncode.inference import (
    classify,
    classify_many,
    class_posteriors,
    fit_posterior,
    forecast,
    predict,
)
from motioncode.kernel import KernelParams, kernel_matrix
from motioncode.optimizer import train_model


def spaced(rng, n, lo=0.02, hi=0.98, grid=400):
    pts = np.linspace(lo, hi, grid)
    return np.sort(rng.choice(pts, size=n, replace=False))


def sharp_params(rng, j=1):
    return KernelParams(
        rng.uniform(-0.5, 0.5, j),
        rng.uniform(np.log(40.0), np.log(150.0), j),
    )


def good_inducing(rng, kp, m):
    for _ in range(200):
        s = np.sort(rng.uniform(0.05, 0.95, m))
        if m == 1 or np.diff(s).min() > 0.12:
            if np.linalg.eigvalsh(kernel_matrix(kp, s)).min() > 0.05:
                return s
    raise AssertionError("no well-conditioned inducing set found")


def rand_collection(rng, label=0, n_series=2, n_lo=4, n_hi=8):
    series = []
    for _ in range(n_series):
        n = int(rng.integers(n_lo, n_hi + 1))
        series.append(TimeSeries(spaced(rng, n), rng.normal(size=n)))
    return Collection(label, tuple(series))


def dense_posterior(kp, s, collection, sigma):
    """Oracle with explicit matrix inversion, no jitter."""
    c = collection.size * sigma**2
    k_ss = kernel_matrix(kp, s)
    lam = k_ss.copy()
    rhs = np.zeros(s.size)
    for ts in collection.series:
        cross = kernel_matrix(kp, s, ts.timestamps)
        lam = lam + cross @ cross.T / c
        rhs = rhs + cross @ ts.values
    sig = np.linalg.inv(lam)
    mean = k_ss @ sig @ rhs / c
    cov = k_ss @ sig @ k_ss
    return mean, cov


def dense_predict(kp, s, mean, cov, query):
    k_inv = np.linalg.inv(kernel_matrix(kp, s))
    k_ts = kernel_matrix(kp, query, s)
    p = k_ts @ k_inv @ mean
    proj = k_ts @ k_inv
    var = (
        np.sum(kp.amplitudes)
        - np.sum(proj * k_ts, axis=1)
        + np.sum(proj @ cov * proj, axis=1)
    )
    return p, var


def test_posterior_matches_dense_oracle():
    rng = np.random.default_rng(21)
    for trial in range(10):
        kp = sharp_params(rng, int(rng.integers(1, 3)))
        m = int(rng.integers(2, 5))
        s = good_inducing(rng, kp, m)
        col = rand_collection(rng, n_series=int(rng.integers(1, 4)))
        post = fit_posterior(col, kp, s, sigma=0.5, jitter=1e-12)
        mean, cov = dense_posterior(kp, s, col, 0.5)
        assert np.allclose(post.mean, mean, atol=1e-8)
        assert np.allclose(post.covariance, cov, atol=1e-8)
        assert np.allclose(post.covariance, post.covariance.T, atol=1e-10)
        assert np.linalg.eigvalsh(post.covariance).min() >= -1e-8


def test_predict_matches_dense_oracle():
    rng = np.random.default_rng(22)
    for trial in range(10):
        kp = sharp_params(rng)
        s = good_inducing(rng, kp, 3)
        col = rand_collection(rng)
        post = fit_posterior(col, kp, s, sigma=0.5, jitter=1e-12)
        q = np.sort(rng.uniform(0, 1.2, 7))
        pred = predict(post, kp, q)
        p, var = dense_predict(kp, s, post.mean, post.covariance, q)
        assert np.allclose(pred.mean, p, atol=1e-8)
        assert np.allclose(pred.variance, np.clip(var, 0, None), atol=1e-8)


def test_posterior_collapse_single_series():
    # B = 1 and inducing set equal to the data timestamps: the predictive
    # mean at those timestamps is the classic smoother K (K + s2 I)^{-1} y
    rng = np.random.default_rng(23)
    kp = KernelParams(np.array([0.1]), np.array([np.log(60.0)]))
    t = spaced(rng, 8)
    y = rng.normal(size=8)
    col = Collection(0, (TimeSeries(t, y),))
    sigma = 0.5
    post = fit_posterior(col, kp, t, sigma=sigma, jitter=1e-12)
    pred = predict(post, kp, t)
    k = kernel_matrix(kp, t)
    want = k @ np.linalg.solve(k + sigma**2 * np.eye(8), y)
    assert np.allclose(pred.mean, want, atol=1e-8)


def test_interpolation_limit():
    rng = np.random.default_rng(24)
    kp = KernelParams(np.array([0.0]), np.array([np.log(50.0)]))
    t = spaced(rng, 7)
    y = rng.normal(size=7)
    col = Collection(0, (TimeSeries(t, y),))
    post = fit_posterior(col, kp, t, sigma=1e-4, jitter=1e-12)
    pred = predict(post, kp, t)
    scale = np.max(np.abs(y))
    assert np.max(np.abs(pred.mean - y)) < 1e-2 * scale


def test_zero_data_gives_zero_mean():
    rng = np.random.default_rng(25)
    kp = sharp_params(rng)
    s = good_inducing(rng, kp, 3)
    t = spaced(rng, 6)
    col0 = Collection(0, (TimeSeries(t, np.zeros(6)),))
    post0 = fit_posterior(col0, kp, s, sigma=0.3)
    assert np.array_equal(post0.mean, np.zeros(3))
    # covariance ignores the observed values entirely
    col1 = Collection(0, (TimeSeries(t, rng.normal(size=6)),))
    post1 = fit_posterior(col1, kp, s, sigma=0.3)
    assert np.array_equal(post0.covariance, post1.covariance)
    # zero mean propagates to zero prediction anywhere
    pred = predict(post0, kp, [0.1, 0.7, 1.2])
    assert np.array_equal(pred.mean, np.zeros(3))


def test_predict_at_inducing_points():
    rng = np.random.default_rng(26)
    kp = sharp_params(rng)
    s = good_inducing(rng, kp, 4)
    col = rand_collection(rng, n_series=3)
    post = fit_posterior(col, kp, s, sigma=0.4, jitter=1e-12)
    pred = predict(post, kp, s)
    assert np.allclose(pred.mean, post.mean, atol=1e-8)
    assert np.allclose(pred.variance, np.diag(post.covariance), atol=1e-8)


def test_posterior_contraction():
    rng = np.random.default_rng(27)
    kp = KernelParams(np.array([0.0]), np.array([np.log(40.0)]))
    t = spaced(rng, 9)
    y = rng.normal(size=9)
    col = Collection(0, (TimeSeries(t, y),))
    errs = []
    for sigma in (1.0, 0.1, 0.01):
        post = fit_posterior(col, kp, t, sigma=sigma, jitter=1e-12)
        pred = predict(post, kp, t)
        errs.append(np.linalg.norm(pred.mean - y))
    assert errs[0] >= errs[1] >= errs[2]


def test_fit_posterior_validation():
    rng = np.random.default_rng(28)
    kp = sharp_params(rng)
    col = rand_collection(rng)
    with pytest.raises(ValidationError):
        fit_posterior(col, kp, [0.0, 0.5], sigma=0.3)  # endpoint not allowed
    with pytest.raises(ValidationError):
        fit_posterior(col, kp, [0.5, 1.0], sigma=0.3)
    with pytest.raises(ValidationError):
        fit_posterior(col, kp, [0.2, 0.5], sigma=0.0)


def constant_model_and_data(values=(0.0, 10.0), n=12, n_series=2):
    rng = np.random.default_rng(30)
    cols = []
    for k, v in enumerate(values):
        series = []
        for _ in range(n_series):
            t = spaced(rng, n)
            series.append(TimeSeries(t, np.full(n, float(v))))
        cols.append(Collection(k, tuple(series)))
    ds = Dataset(tuple(cols), (0.0, 1.0))
    h = Hyperparams(m=5, d=2, j=1, sigma=0.1, max_iters=0)
    from motioncode.optimizer import init_params

    model = init_params(len(values), h)
    return model, ds


def test_classify_separated_constants():
    model, ds = constant_model_and_data()
    rng = np.random.default_rng(31)
    t = spaced(rng, 10)
    label, dist = classify(model, ds, TimeSeries(t, np.full(10, 0.2)))
    assert label == 0
    assert dist[0] < dist[1]
    assert dist.shape == (2,)
    # distance to the matching prototype is near 0.2 * sqrt(n)
    assert dist[0] == pytest.approx(0.2 * np.sqrt(10), rel=0.5)


def test_classify_tie_breaks_to_smallest_index():
    # bit-identical collections and identical per-class parameters give
    # equal distances, so the reported label must be class 0
    rng = np.random.default_rng(32)
    series = tuple(TimeSeries(spaced(rng, 10), np.full(10, 3.0)) for _ in range(2))
    ds = Dataset(
        (Collection(0, series), Collection(1, series)), (0.0, 1.0)
    )
    from motioncode.optimizer import init_params

    model = init_params(2, Hyperparams(m=5, d=2, j=1, sigma=0.1))
    t = spaced(rng, 8)
    label, dist = classify(model, ds, TimeSeries(t, np.full(8, 1.0)))
    assert dist[0] == dist[1]
    assert label == 0


def test_classify_many_matches_single():
    model, ds = constant_model_and_data()
    rng = np.random.default_rng(33)
    tests = [
        TimeSeries(spaced(rng, 9), rng.normal(5.0, 1.0, 9)) for _ in range(4)
    ]
    batch = classify_many(model, ds, tests)
    for series, (label, dist) in zip(tests, batch):
        l2, d2 = classify(model, ds, series)
        assert label == l2
        assert np.array_equal(dist, d2)


def test_forecast_zero_class():
    rng = np.random.default_rng(34)
    t = spaced(rng, 15)
    col = Collection(0, (TimeSeries(t, np.zeros(15)),))
    ds = Dataset((col,), (0.0, 1.0))
    h = Hyperparams(m=4, d=2, j=1, sigma=0.1, max_iters=0)
    from motioncode.optimizer import init_params

    model = init_params(1, h)
    pred = forecast(model, ds, 0, [0.3, 0.9, 1.2])
    assert np.max(np.abs(pred.mean)) < 1e-6


def test_forecast_uses_only_its_class():
    model, ds = constant_model_and_data()
    q = [0.2, 0.5, 0.9]
    base = forecast(model, ds, 0, q)
    # perturb class 1's values; class 0's forecast must not move a bit
    rng = np.random.default_rng(35)
    new_series = tuple(
        TimeSeries(ts.timestamps, ts.values + rng.normal(size=len(ts)))
        for ts in ds.collections[1].series
    )
    ds2 = Dataset(
        (ds.collections[0], Collection(1, new_series)), ds.time_scale
    )
    again = forecast(model, ds2, 0, q)
    assert np.array_equal(base.mean, again.mean)
    assert np.array_equal(base.variance, again.variance)


def test_forecast_input_errors():
    model, ds = constant_model_and_data()
    with pytest.raises(InputError):
        forecast(model, ds, 5, [0.5])  # unknown class
    with pytest.raises(InputError):
        forecast(model, ds, 0, [1.3])  # beyond the forecast horizon


def test_forecast_trained_sine_in_range():
    rng = np.random.default_rng(36)
    t = spaced(rng, 30)
    col = Collection(0, (TimeSeries(t, np.sin(2 * np.pi * t)),))
    ds = Dataset((col,), (0.0, 1.0))
    h = Hyperparams(m=10, d=2, j=1, sigma=0.1, max_iters=50, epsilon=1e-8)
    model, info = train_model(ds, h)
    q = np.linspace(0.1, 0.9, 17)
    pred = forecast(model, ds, 0, q)
    assert np.max(np.abs(pred.mean - np.sin(2 * np.pi * q))) < 0.1


def test_classify_scale_mapping():
    # scaling data by rho > 0 maps exactly onto scaled kernel amplitudes and
    # scaled noise; the predicted label is unchanged and distances scale by rho
    rng = np.random.default_rng(37)
    cols = []
    for k in range(2):
        series = [
            TimeSeries(spaced(rng, 10), np.sin(2 * np.pi * spaced(rng, 10) + k))
            for _ in range(2)
        ]
        cols.append(Collection(k, tuple(series)))
    ds = Dataset(tuple(cols), (0.0, 1.0))
    h = Hyperparams(m=4, d=2, j=1, sigma=0.3, jitter=1e-12)
    from motioncode.optimizer import init_params

    model = init_params(2, h)
    model = dataclasses.replace(
        model,
        log_bandwidths=np.full((2, 1), np.log(30.0)),
        codes=rng.normal(size=(2, 2)),
    )
    t = spaced(rng, 9)
    series = TimeSeries(t, rng.normal(size=9))

    rho = 3.7
    scaled_cols = tuple(
        Collection(c.label, tuple(TimeSeries(s.timestamps, s.values * rho) for s in c.series))
        for c in ds.collections
    )
    ds_scaled = Dataset(scaled_cols, ds.time_scale)
    # the stabilizer jitter scales with the covariance, like everything else
    model_scaled = dataclasses.replace(
        model,
        log_amplitudes=model.log_amplitudes + 2.0 * np.log(rho),
        hyper=dataclasses.replace(h, sigma=h.sigma * rho, jitter=h.jitter * rho**2),
    )
    label, dist = classify(model, ds, series)
    label2, dist2 = classify(
        model_scaled, ds_scaled, TimeSeries(t, series.values * rho)
    )
    assert label == label2
    assert np.allclose(dist2, rho * dist, rtol=1e-6)
