"""
optimizer.py - limited-memory BFGS training loop.

The training loss is minimized over one flat vector packing, in order:

    1. per-class kernel logs, class-major: [log_amp_1..J, log_bw_1..J]
    2. per-class codes, class-major
    3. the shared code map, row-major

Line search is backtracking with the sufficient-decrease (Armijo) test only;
curvature pairs that would break positive definiteness of the implicit
Hessian approximation are skipped rather than repaired.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, Hyperparams, ModelParams, MotionCodeError, NumericalError
from .objective import loss_gradient, total_loss

__all__ = [
    "HISTORY_CAPACITY",
    "OptState",
    "MinimizeResult",
    "TrainInfo",
    "minimize",
    "init_params",
    "pack_params",
    "unpack_params",
    "train_model",
]

HISTORY_CAPACITY = 10
ARMIJO_C1 = 1e-4
INITIAL_STEP = 1.0
BACKTRACK = 0.5
MAX_HALVINGS = 30
CURVATURE_MIN = 1e-12
GRAD_TOL = 1e-10

STOP_MAX_ITERS = "max-iters"
STOP_SMALL_DECREASE = "small-decrease"
STOP_SMALL_GRADIENT = "small-gradient"
STOP_LINE_SEARCH = "line-search-failure"


@dataclass
class OptState:
    """Mutable state of one minimization run.

    history holds (step, gradient-difference) pairs, newest last, capacity
    HISTORY_CAPACITY; every stored pair satisfies step @ grad_diff > CURVATURE_MIN.
    """

    x: np.ndarray
    loss: float
    grad: np.ndarray
    iteration: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAPACITY))


@dataclass(frozen=True)
class MinimizeResult:
    x: np.ndarray
    loss: float
    iterations: int
    stop_reason: str


def _direction(state: OptState) -> np.ndarray:
    """Two-loop recursion; with empty history this is exactly -grad."""
    q = -state.grad
    if not state.history:
        return q
    alphas = []
    for s, y in reversed(state.history):
        rho = 1.0 / float(s @ y)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q = q - a * y
    s_last, y_last = state.history[-1]
    gamma = float(s_last @ y_last) / float(y_last @ y_last)
    q = gamma * q
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q = q + (a - b) * s
    return q


def minimize(loss_fn, grad_fn, x0, max_iters: int, epsilon: float) -> MinimizeResult:
    """Minimize loss_fn starting at x0; grad_fn supplies gradients.

    Stops when the iteration count reaches max_iters, when one accepted
    iteration decreases the loss by less than epsilon, or when the gradient
    max-norm falls below GRAD_TOL. A line search that finds no acceptable
    point after MAX_HALVINGS halvings stops at the current point with
    stop_reason "line-search-failure" instead of raising. Loss never
    increases across accepted iterations.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if max_iters < 0:
        raise ValueError(f"max_iters must be >= 0, got {max_iters}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    f0 = float(loss_fn(x0))
    if not np.isfinite(f0):
        raise NumericalError(f"loss at the starting point is not finite ({f0})")
    if max_iters == 0:
        return MinimizeResult(x=x0, loss=f0, iterations=0, stop_reason=STOP_MAX_ITERS)

    state = OptState(x=x0, loss=f0, grad=np.asarray(grad_fn(x0), dtype=float))
    while state.iteration < max_iters:
        p = _direction(state)
        slope = float(state.grad @ p)
        if slope > 0.0:  # not a descent direction; fall back to steepest descent
            p = -state.grad
            slope = float(state.grad @ p)

        step = INITIAL_STEP
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            trial = state.x + step * p
            f_trial = float(loss_fn(trial))
            if np.isfinite(f_trial) and f_trial <= state.loss + ARMIJO_C1 * step * slope:
                accepted = (trial, f_trial)
                break
            step *= BACKTRACK
        if accepted is None:
            return MinimizeResult(
                x=state.x,
                loss=state.loss,
                iterations=state.iteration,
                stop_reason=STOP_LINE_SEARCH,
            )

        x_new, f_new = accepted
        g_new = np.asarray(grad_fn(x_new), dtype=float)
        decrease = state.loss - f_new
        s = x_new - state.x
        y = g_new - state.grad
        state.x, state.loss, state.grad = x_new, f_new, g_new
        state.iteration += 1
        if decrease < epsilon:
            return MinimizeResult(
                x=state.x, loss=state.loss, iterations=state.iteration,
                stop_reason=STOP_SMALL_DECREASE,
            )
        if float(np.max(np.abs(state.grad))) < GRAD_TOL:
            return MinimizeResult(
                x=state.x, loss=state.loss, iterations=state.iteration,
                stop_reason=STOP_SMALL_GRADIENT,
            )
        if float(s @ y) > CURVATURE_MIN:
            state.history.append((s, y))
        else:
            # the pair would break positive definiteness; besides skipping
            # it, drop the stale memory so the next direction restarts from
            # steepest descent instead of looping on a frozen approximation
            state.history.clear()

    return MinimizeResult(
        x=state.x, loss=state.loss, iterations=state.iteration,
        stop_reason=STOP_MAX_ITERS,
    )


def init_params(n_classes: int, hyper: Hyperparams) -> ModelParams:
    """Deterministic starting point: unit kernel parameters (logs at zero),
    all-ones codes, and a code map whose every column runs arithmetically
    from 0.1 to 0.9 (midpoint 0.5 when m = 1)."""
    if n_classes < 1:
        raise ValueError(f"need at least one class, got {n_classes}")
    if hyper.m == 1:
        column = np.array([0.5])
    else:
        column = np.linspace(0.1, 0.9, hyper.m)
    return ModelParams(
        log_amplitudes=np.zeros((n_classes, hyper.j)),
        log_bandwidths=np.zeros((n_classes, hyper.j)),
        codes=np.ones((n_classes, hyper.d)),
        code_map=np.tile(column[:, None], (1, hyper.d)),
        hyper=hyper,
    )


def pack_params(params: ModelParams) -> np.ndarray:
    """Flatten learnable parameters in the documented order."""
    logs = np.concatenate(
        [params.log_amplitudes, params.log_bandwidths], axis=1
    )  # (L, 2J), class-major rows
    return np.concatenate([logs.ravel(), params.codes.ravel(), params.code_map.ravel()])


def pack_grads(grads) -> np.ndarray:
    """Flatten a ModelGrads in the same order as pack_params."""
    return np.concatenate([
        np.concatenate([grads.d_log_amplitudes, grads.d_log_bandwidths], axis=1).ravel(),
        grads.d_codes.ravel(),
        grads.d_code_map.ravel(),
    ])


def unpack_params(x: np.ndarray, params: ModelParams) -> ModelParams:
    """Rebuild a ModelParams from a flat vector, taking every non-learned
    field (hyper, scales, labels) from the template."""
    h = params.hyper
    L = params.n_classes
    j, d, m = h.j, h.d, h.m
    expected = L * 2 * j + L * d + m * d
    x = np.asarray(x, dtype=float)
    if x.shape != (expected,):
        raise ValueError(f"flat vector must have shape ({expected},), got {x.shape}")
    logs = x[: L * 2 * j].reshape(L, 2 * j)
    codes = x[L * 2 * j: L * 2 * j + L * d].reshape(L, d)
    code_map = x[L * 2 * j + L * d:].reshape(m, d)
    return dataclasses.replace(
        params,
        log_amplitudes=logs[:, :j],
        log_bandwidths=logs[:, j:],
        codes=codes,
        code_map=code_map,
    )


@dataclass(frozen=True)
class TrainInfo:
    loss: float
    iterations: int
    stop_reason: str


def train_model(dataset: Dataset, hyper: Hyperparams, threads: int = 1):
    """Fit one model to the dataset: init_params, then minimize the loss.

    Returns (ModelParams, TrainInfo). Evaluation failures at wild trial
    points surface as an infinite loss so the line search backtracks past
    them; a failure at the starting point still raises.
    """
    start = init_params(dataset.n_classes, hyper)
    start = _with_dataset_metadata(start, dataset)
    x0 = pack_params(start)

    def loss_fn(x):
        try:
            return total_loss(unpack_params(x, start), dataset, threads=threads)
        except MotionCodeError:
            return np.inf

    def grad_fn(x):
        _, grads = loss_gradient(unpack_params(x, start), dataset, threads=threads)
        return pack_grads(grads)

    result = minimize(loss_fn, grad_fn, x0, hyper.max_iters, hyper.epsilon)
    fitted = unpack_params(result.x, start)
    info = TrainInfo(loss=result.loss, iterations=result.iterations,
                     stop_reason=result.stop_reason)
    return fitted, info


def _with_dataset_metadata(params: ModelParams, dataset: Dataset) -> ModelParams:
    return dataclasses.replace(
        params,
        time_scale=dataset.time_scale,
        value_center=dataset.value_center,
        value_scale=dataset.value_scale,
        class_labels=dataset.class_labels,
    )
