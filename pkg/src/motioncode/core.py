"""
core.py - shared domain types for the motioncode package.

Conventions used throughout:
    * timestamps are unitless, normalized to [0, 1] at load time
    * values are centered/scaled dataset-wide at load time
    * every container is immutable after construction and safe to share
      across threads

Shapes (single source of truth)
-------------------------------
    log_amplitudes : (L, J)   per-class kernel log-amplitudes
    log_bandwidths : (L, J)   per-class kernel log-bandwidths
    codes          : (L, d)   per-class signature vectors
    code_map       : (m, d)   shared map from codes to timestamp logits
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MotionCodeError",
    "InputError",
    "ParseError",
    "ValidationError",
    "SplitError",
    "VersionError",
    "NumericalError",
    "SingularMatrixError",
    "TimeSeries",
    "Collection",
    "Dataset",
    "Hyperparams",
    "ModelParams",
    "Prediction",
    "normalize_timestamps",
    "code_to_timestamps",
]


class MotionCodeError(Exception):
    """Base class for every error raised by this package."""


class InputError(MotionCodeError):
    """Bad user input: files, flags, out-of-range values. CLI exit code 1."""


class ParseError(InputError):
    """Malformed file content; message carries path/line context."""


class ValidationError(InputError):
    """A domain invariant was violated by the supplied data."""


class SplitError(InputError):
    """A train/test split left some series too short to use."""


class VersionError(InputError):
    """Model file format version is not supported."""


class NumericalError(MotionCodeError):
    """Numerical failure (non-finite result, broken factorization). CLI exit code 2."""


class SingularMatrixError(NumericalError):
    """A matrix stayed non positive definite at every jitter level."""


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeSeries:
    """One realization of a stochastic process: (timestamps, values).

    timestamps : (N,) strictly increasing, inside [0, 1]
    values     : (N,) signal values, same length

    Single-point series are permitted only so that forecast splits can
    hold a lone future observation; file loaders require N >= 2.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _readonly(self.timestamps)
        y = _readonly(self.values)
        if t.ndim != 1 or y.ndim != 1 or t.shape != y.shape:
            raise ValidationError(
                f"timestamps and values must be equal-length 1-d arrays, "
                f"got shapes {t.shape} and {y.shape}"
            )
        if t.size < 1:
            raise ValidationError("a time series needs at least one point")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValidationError("timestamps and values must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if t[0] < 0.0 or t[-1] > 1.0:
            raise ValidationError(
                f"normalized timestamps must lie in [0, 1], got range "
                f"[{t[0]}, {t[-1]}]"
            )
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", y)

    def __len__(self) -> int:
        return self.timestamps.size


@dataclass(frozen=True)
class Collection:
    """All series sharing one label, i.e. one underlying process."""

    label: int
    series: tuple[TimeSeries, ...]

    def __post_init__(self):
        if self.label < 0 or self.label != int(self.label):
            raise ValidationError(f"label must be a non-negative integer, got {self.label}")
        object.__setattr__(self, "series", tuple(self.series))
        if not self.series:
            raise ValidationError(f"collection {self.label} has no series")

    @property
    def size(self) -> int:
        return len(self.series)

    def n_points(self) -> int:
        return sum(len(s) for s in self.series)


@dataclass(frozen=True)
class Dataset:
    """Labeled collections plus the normalization metadata recorded at load.

    collections  : labels contiguous 0..L-1, sorted
    time_scale   : (t_min, t_max) in original time units
    value_center : subtracted from raw values at load
    value_scale  : raw values divided by this after centering
    class_labels : original file labels, index -> label (identity by default)

    Classification datasets need L >= 2; the single-collection case is
    allowed here because per-class objective evaluation uses it.
    """

    collections: tuple[Collection, ...]
    time_scale: tuple[float, float]
    value_center: float = 0.0
    value_scale: float = 1.0
    class_labels: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "collections", tuple(self.collections))
        object.__setattr__(self, "time_scale", (float(self.time_scale[0]), float(self.time_scale[1])))
        if not self.collections:
            raise ValidationError("dataset has no collections")
        labels = [c.label for c in self.collections]
        if labels != list(range(len(labels))):
            raise ValidationError(
                f"collection labels must be contiguous 0..L-1 in order, got {labels}"
            )
        if self.time_scale[0] >= self.time_scale[1]:
            raise ValidationError(
                f"time_scale must satisfy t_min < t_max, got {self.time_scale}"
            )
        if not self.value_scale > 0:
            raise ValidationError(f"value_scale must be positive, got {self.value_scale}")
        if not self.class_labels:
            object.__setattr__(self, "class_labels", tuple(range(len(labels))))
        else:
            object.__setattr__(self, "class_labels", tuple(int(v) for v in self.class_labels))
        if len(self.class_labels) != len(self.collections):
            raise ValidationError("class_labels must list one original label per collection")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValidationError("class_labels must be distinct")

    @property
    def n_classes(self) -> int:
        return len(self.collections)

    def n_points(self) -> int:
        return sum(c.n_points() for c in self.collections)

    def to_original_values(self, centered) -> np.ndarray:
        """Map centered values back to original units."""
        return np.asarray(centered, dtype=float) * self.value_scale + self.value_center


@dataclass(frozen=True)
class Hyperparams:
    """Training knobs, mirroring the CLI flags one to one.

    m         : number of informative timestamps per class
    d         : dimension of the per-class code vectors
    j         : number of kernel components (CLI flag --J)
    lam       : ridge weight on the code vectors (CLI flag --lambda)
    sigma     : observation noise scale on centered values
    max_iters : optimizer iteration cap (0 = keep the initialization)
    epsilon   : stop when the loss decrease over one iteration falls below this
    jitter    : base diagonal stabilizer for kernel matrix factorizations
    seed      : root seed for every random choice downstream
    """

    m: int = 10
    d: int = 2
    j: int = 1
    lam: float = 1.0
    sigma: float = 0.1
    max_iters: int = 10
    epsilon: float = 1e-5
    jitter: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.d < 1 or self.j < 1:
            raise ValidationError("m, d and J must all be >= 1")
        if not (self.sigma > 0 and self.jitter > 0 and self.epsilon > 0):
            raise ValidationError("sigma, jitter and epsilon must be positive")
        if self.lam < 0:
            raise ValidationError("lambda must be non-negative")
        if self.max_iters < 0:
            raise ValidationError("max-iters must be >= 0")


def code_to_timestamps(code_map, code) -> np.ndarray:
    """Map one code vector to its m timestamps: sigmoid(code_map @ code).

    The output is clamped into the open interval (0, 1): saturated logits
    would otherwise round to exactly 0.0 or 1.0 in float64 and produce
    duplicate inducing timestamps.
    """
    u = np.asarray(code_map, dtype=float) @ np.asarray(code, dtype=float)
    # numerically stable sigmoid for large |u|
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    tiny = np.finfo(float).tiny
    return np.clip(out, tiny, 1.0 - np.finfo(float).epsneg)


@dataclass(frozen=True)
class ModelParams:
    """Everything learned by training, plus the metadata needed at inference.

    log_amplitudes : (L, J)
    log_bandwidths : (L, J)
    codes          : (L, d)
    code_map       : (m, d)

    Kernel parameters are stored in log space so that amplitudes and
    bandwidths stay positive by construction.
    """

    log_amplitudes: np.ndarray
    log_bandwidths: np.ndarray
    codes: np.ndarray
    code_map: np.ndarray
    hyper: Hyperparams
    time_scale: tuple[float, float] = (0.0, 1.0)
    value_center: float = 0.0
    value_scale: float = 1.0
    class_labels: tuple[int, ...] = ()
    data_digest: str | None = None

    def __post_init__(self):
        la = _readonly(self.log_amplitudes)
        lb = _readonly(self.log_bandwidths)
        z = _readonly(self.codes)
        cm = _readonly(self.code_map)
        h = self.hyper
        if la.ndim != 2 or la.shape != lb.shape:
            raise ValidationError(
                f"log_amplitudes/log_bandwidths must both be (L, J), got {la.shape} and {lb.shape}"
            )
        L = la.shape[0]
        if la.shape[1] != h.j:
            raise ValidationError(f"kernel parameters have {la.shape[1]} components, hyper says {h.j}")
        if z.shape != (L, h.d):
            raise ValidationError(f"codes must be ({L}, {h.d}), got {z.shape}")
        if cm.shape != (h.m, h.d):
            raise ValidationError(f"code_map must be ({h.m}, {h.d}), got {cm.shape}")
        for name, arr in (("log_amplitudes", la), ("log_bandwidths", lb)):
            with np.errstate(over="ignore"):
                ok = np.all(np.isfinite(arr)) and np.all(np.isfinite(np.exp(arr)))
            if not ok:
                raise ValidationError(f"{name} must exponentiate to finite positive values")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(cm))):
            raise ValidationError("codes and code_map must be finite")
        object.__setattr__(self, "log_amplitudes", la)
        object.__setattr__(self, "log_bandwidths", lb)
        object.__setattr__(self, "codes", z)
        object.__setattr__(self, "code_map", cm)
        ts = (float(self.time_scale[0]), float(self.time_scale[1]))
        if ts[0] >= ts[1]:
            raise ValidationError(f"time_scale must satisfy t_min < t_max, got {ts}")
        object.__setattr__(self, "time_scale", ts)
        if not self.value_scale > 0:
            raise ValidationError(f"value_scale must be positive, got {self.value_scale}")
        labels = self.class_labels if self.class_labels else tuple(range(L))
        labels = tuple(int(v) for v in labels)
        if len(labels) != L or len(set(labels)) != L:
            raise ValidationError("class_labels must hold one distinct label per class")
        object.__setattr__(self, "class_labels", labels)

    @property
    def n_classes(self) -> int:
        return self.log_amplitudes.shape[0]

    def inducing_timestamps(self, k: int) -> np.ndarray:
        """The m informative timestamps of class k, entries strictly in (0, 1)."""
        return code_to_timestamps(self.code_map, self.codes[k])

    def class_index(self, original_label: int) -> int:
        try:
            return self.class_labels.index(int(original_label))
        except ValueError:
            raise InputError(
                f"label {original_label} is not one of the model's classes {self.class_labels}"
            ) from None


@dataclass(frozen=True)
class Prediction:
    """Predictive mean and per-point variance at the query timestamps."""

    timestamps: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        t = _readonly(self.timestamps)
        mu = _readonly(self.mean)
        var = _readonly(self.variance)
        if not (t.shape == mu.shape == var.shape and t.ndim == 1):
            raise ValidationError(
                f"timestamps, mean and variance must share one 1-d shape, "
                f"got {t.shape}, {mu.shape}, {var.shape}"
            )
        if np.any(var < 0):
            raise ValidationError("variance entries must be >= 0 after clipping")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "variance", var)


def normalize_timestamps(raw_times, time_scale) -> np.ndarray:
    """Affinely map raw times in [t_min, t_max] onto [0, 1].

    Raises ValidationError naming the first offending value if any time
    falls outside the scale.
    """
    t_min, t_max = float(time_scale[0]), float(time_scale[1])
    if not t_min < t_max:
        raise ValidationError(f"time_scale must satisfy t_min < t_max, got ({t_min}, {t_max})")
    raw = np.asarray(raw_times, dtype=float)
    if raw.size:
        lo, hi = raw.min(), raw.max()
        if lo < t_min or hi > t_max:
            bad = lo if lo < t_min else hi
            raise ValidationError(
                f"timestamp {bad} falls outside the time scale [{t_min}, {t_max}]"
            )
    return (raw - t_min) / (t_max - t_min)
