import numpy as np
import pytest

from motioncode.core import SingularMatrixError, ValidationError
from motioncode.kernel import (
    CholeskyFactor,
    KernelParams,
    chol_jittered,
    kernel_diag_total,
    kernel_eval,
    kernel_matrix,
    kernel_matrix_components,
)


def params(amps, bws):
    return KernelParams(np.log(amps), np.log(bws))


def test_kernel_eval_single_component():
    p = params([2.0], [4.0])
    # k(t, s) = 2 exp(-0.5 * 4 * (t-s)^2)
    assert kernel_eval(p, 0.3, 0.3) == pytest.approx(2.0)
    assert kernel_eval(p, 0.0, 1.0) == pytest.approx(2.0 * np.exp(-2.0))


def test_kernel_eval_sums_components():
    p = params([1.0, 3.0], [1.0, 10.0])
    r2 = 0.25
    expected = np.exp(-0.5 * r2) + 3.0 * np.exp(-5.0 * r2)
    assert kernel_eval(p, 0.0, 0.5) == pytest.approx(expected)


def test_kernel_matrix_matches_eval():
    rng = np.random.default_rng(0)
    p = params([0.7, 1.3], [2.0, 30.0])
    t = np.sort(rng.uniform(0, 1, 6))
    s = np.sort(rng.uniform(0, 1, 4))
    K = kernel_matrix(p, t, s)
    assert K.shape == (6, 4)
    for a in range(6):
        for b in range(4):
            assert K[a, b] == pytest.approx(kernel_eval(p, t[a], s[b]))


def test_kernel_matrix_symmetric_and_decaying():
    p = params([1.0], [5.0])
    t = np.linspace(0, 1, 8)
    K = kernel_matrix(p, t)
    assert np.allclose(K, K.T)
    # covariance decays with distance for a single component
    row = K[0]
    assert np.all(np.diff(row) < 0)
    assert np.all(np.diag(K) == pytest.approx(1.0))


def test_kernel_matrix_psd():
    rng = np.random.default_rng(3)
    for trial in range(10):
        j = rng.integers(1, 4)
        p = KernelParams(rng.normal(size=j), rng.normal(size=j))
        t = np.sort(rng.uniform(0, 1, 12))
        K = kernel_matrix(p, t)
        eigs = np.linalg.eigvalsh(K)
        assert eigs.min() > -1e-9 * max(1.0, eigs.max())


def test_components_sum_and_gradients():
    rng = np.random.default_rng(5)
    p = params([0.5, 2.0], [1.0, 8.0])
    t = np.sort(rng.uniform(0, 1, 7))
    comps, r2 = kernel_matrix_components(p, t)
    assert comps.shape == (2, 7, 7)
    assert np.allclose(comps.sum(axis=0), kernel_matrix(p, t))
    # finite-difference check of the log-parameter derivative identities
    h = 1e-6
    for j in range(2):
        la = p.log_amplitudes.copy()
        la[j] += h
        Kp = kernel_matrix(KernelParams(la, p.log_bandwidths), t)
        la[j] -= 2 * h
        Km = kernel_matrix(KernelParams(la, p.log_bandwidths), t)
        fd = (Kp - Km) / (2 * h)
        assert np.allclose(fd, comps[j], atol=1e-6)
        lb = p.log_bandwidths.copy()
        lb[j] += h
        Kp = kernel_matrix(KernelParams(p.log_amplitudes, lb), t)
        lb[j] -= 2 * h
        Km = kernel_matrix(KernelParams(p.log_amplitudes, lb), t)
        fd = (Kp - Km) / (2 * h)
        analytic = -0.5 * p.bandwidths[j] * r2 * comps[j]
        assert np.allclose(fd, analytic, atol=1e-6)


def test_kernel_diag_total():
    p = params([1.5, 0.5], [3.0, 9.0])
    t = np.linspace(0, 1, 11)
    assert kernel_diag_total(p, 11) == pytest.approx(np.trace(kernel_matrix(p, t)))


def test_kernel_params_validation():
    with pytest.raises(ValidationError):
        KernelParams(np.zeros(2), np.zeros(3))
    with pytest.raises(ValidationError):
        KernelParams(np.array([np.inf]), np.zeros(1))
    with pytest.raises(ValidationError):
        KernelParams(np.array([1e4]), np.zeros(1))  # exp overflow


def test_chol_jittered_always_adds_base():
    a = np.eye(3)
    f = chol_jittered(a, 1e-6)
    assert f.jitter_used == 1e-6
    recon = f.lower @ f.lower.T
    assert np.allclose(recon, a + 1e-6 * np.eye(3), rtol=0, atol=1e-14)


def test_chol_jittered_escalates():
    # rank-1 matrix: fails at tiny jitter only if indefinite; make one
    # slightly indefinite so escalation is needed
    a = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-9]])
    f = chol_jittered(a, 1e-12)
    assert f.jitter_used > 1e-12
    recon = f.lower @ f.lower.T
    target = a + f.jitter_used * np.eye(2)
    rel = np.linalg.norm(recon - target) / np.linalg.norm(target)
    assert rel <= 1e-10


def test_chol_jittered_reconstruction_tolerance():
    rng = np.random.default_rng(11)
    for trial in range(20):
        n = rng.integers(2, 10)
        b = rng.normal(size=(n, n))
        a = b @ b.T
        f = chol_jittered(a, 1e-8)
        target = a + f.jitter_used * np.eye(n)
        rel = np.linalg.norm(f.lower @ f.lower.T - target) / np.linalg.norm(target)
        assert rel <= 1e-10


def test_chol_jittered_gives_up():
    a = -np.eye(4)  # negative definite at every jitter level tried
    with pytest.raises(SingularMatrixError) as err:
        chol_jittered(a, 1e-10)
    assert "eigenvalue" in str(err.value)


def test_cholesky_factor_solver():
    rng = np.random.default_rng(13)
    b = rng.normal(size=(5, 5))
    a = b @ b.T + 5 * np.eye(5)
    f = chol_jittered(a, 1e-12)
    rhs = rng.normal(size=5)
    x = f.solve(rhs)
    assert np.allclose((a + f.jitter_used * np.eye(5)) @ x, rhs, atol=1e-9)
    # half solve whitens: L^{-1} A L^{-T} = I when jitter is negligible
    half = f.half_solve(np.eye(5))
    assert np.allclose(half @ (a + f.jitter_used * np.eye(5)) @ half.T, np.eye(5), atol=1e-9)
    sign, absdet = np.linalg.slogdet(a + f.jitter_used * np.eye(5))
    assert sign > 0
    assert f.logdet() == pytest.approx(absdet)


def test_cholesky_factor_matrix_rhs():
    rng = np.random.default_rng(17)
    b = rng.normal(size=(4, 4))
    a = b @ b.T + np.eye(4)
    f = chol_jittered(a, 1e-12)
    rhs = rng.normal(size=(4, 3))
    x = f.solve(rhs)
    assert x.shape == (4, 3)
    assert np.allclose((a + f.jitter_used * np.eye(4)) @ x, rhs, atol=1e-9)
