"""Global (time-independent) calibration maps and their fitting routines.

Every calibrator maps an ``(n, M)`` logit array to an ``(n, M)`` array of
probabilities via :meth:`Calibrator.predict_proba`. Binary calibrators work on
the class-1 log-odds ``logits[:, 1] - logits[:, 0]``; multiclass problems use
them one-vs-rest through :class:`OneVsRestCalibrator`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    BETA_EPS,
    NLL_EPS,
    Dataset,
    DegenerateFitError,
    InvalidInputError,
    binary_logit,
    binary_sigmoid,
    clamp_probability,
    class_margins,
    logsumexp,
    softmax,
    to_onehot,
)
from .metrics import BinningSpec, assign_bins, nll
from .optimize import OptimizerConfig, minimize_nll

TAU_MIN = 1e-2
TAU_MAX = 1e2

CALIBRATOR_KINDS: Dict[str, type] = {}


class CalibrationWarning(UserWarning):
    """A fitted map scored worse than no calibration on its own calibration set."""


class IllConditionedWarning(UserWarning):
    """The calibration inputs cannot identify every parameter."""


def _as_2d(logits) -> Tuple[np.ndarray, bool]:
    z = np.asarray(logits, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    if z.ndim != 2:
        raise InvalidInputError("logits must be a vector or a 2-D array")
    return z, False


@dataclass(frozen=True)
class Calibrator:
    """Base class: a fitted map from logits to probabilities."""

    kind: ClassVar[str] = ""
    meta: dict = field(default_factory=dict, compare=False, repr=False, kw_only=True)

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.__dict__.get("kind"):
            CALIBRATOR_KINDS[cls.kind] = cls

    def predict_proba(self, logits) -> np.ndarray:
        z, single = _as_2d(logits)
        if not np.all(np.isfinite(z)):
            raise InvalidInputError("logits must be finite")
        p = self._predict(z)
        return p[0] if single else p

    def predict_dataset(self, dataset: Dataset) -> np.ndarray:
        return self.predict_proba(dataset.logits)

    def _predict(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_parameters(cls, params: dict) -> "Calibrator":
        return cls(**params)


@dataclass(frozen=True)
class IdentityCalibrator(Calibrator):
    kind: ClassVar[str] = "identity"

    def _predict(self, z):
        return softmax(z)

    def parameters(self):
        return {}


@dataclass(frozen=True)
class TemperatureCalibrator(Calibrator):
    kind: ClassVar[str] = "temperature"
    tau: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidInputError("temperature must be positive and finite")

    def _predict(self, z):
        return softmax(z / self.tau)

    def parameters(self):
        return {"tau": self.tau}


@dataclass(frozen=True)
class AffineLogitCalibrator(Calibrator):
    """``softmax(W x + b)`` with ``x`` the logits or the clamped log-probabilities.

    ``constraint="diagonal"`` is vector scaling, ``"full"`` matrix scaling;
    full with ``input_transform="log_probabilities"`` is Dirichlet scaling.
    """

    kind: ClassVar[str] = "affine"
    W: tuple = ()
    b: tuple = ()
    constraint: str = "full"
    input_transform: str = "logits"

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.b, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or b.shape != (W.shape[0],):
            raise InvalidInputError("W must be M x M and b of length M")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidInputError("affine parameters must be finite")
        if self.constraint not in ("full", "diagonal"):
            raise InvalidInputError(f"unknown constraint {self.constraint!r}")
        if self.input_transform not in ("logits", "log_probabilities"):
            raise InvalidInputError(f"unknown input transform {self.input_transform!r}")
        if self.constraint == "diagonal" and np.any(W[~np.eye(len(W), dtype=bool)] != 0):
            raise InvalidInputError("diagonal constraint requires zero off-diagonal entries")
        object.__setattr__(self, "W", tuple(tuple(float(v) for v in row) for row in W))
        object.__setattr__(self, "b", tuple(float(v) for v in b))

    @classmethod
    def identity(cls, num_classes: int, constraint="full", input_transform="logits"):
        return cls(W=np.eye(num_classes), b=np.zeros(num_classes),
                   constraint=constraint, input_transform=input_transform)

    def _predict(self, z):
        W = np.array(self.W)
        if z.shape[1] != W.shape[0]:
            raise InvalidInputError(f"calibrator expects {W.shape[0]} classes, got {z.shape[1]}")
        x = affine_features(z, self.input_transform)
        return softmax(x @ W.T + np.array(self.b))

    def parameters(self):
        return {"W": [list(r) for r in self.W], "b": list(self.b),
                "constraint": self.constraint, "input_transform": self.input_transform}


@dataclass(frozen=True)
class BinaryCalibrator(Calibrator):
    """Calibrator defined on the class-1 log-odds of a two-class problem."""

    def positive(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _predict(self, z):
        if z.shape[1] != 2:
            raise InvalidInputError(
                f"{self.kind} calibrator is binary; got {z.shape[1]} classes")
        q = self.positive(binary_logit(z))
        return np.column_stack([1.0 - q, q])


@dataclass(frozen=True)
class PlattCalibrator(BinaryCalibrator):
    kind: ClassVar[str] = "platt"
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidInputError("Platt parameters must be finite")

    def positive(self, z):
        return binary_sigmoid(self.alpha * np.asarray(z) + self.beta)

    def parameters(self):
        return {"alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class BetaCalibrator(BinaryCalibrator):
    """Calibrated log-odds ``a ln p - b ln(1 - p) + c`` on the class-1 probability."""

    kind: ClassVar[str] = "beta"
    a: float = 1.0
    b: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise InvalidInputError("beta parameters must be finite")

    def positive(self, z):
        f = beta_features(z)
        return binary_sigmoid(self.a * f[:, 0] + self.b * f[:, 1] + self.c)

    def parameters(self):
        return {"a": self.a, "b": self.b, "c": self.c}


@dataclass(frozen=True)
class HistogramCalibrator(BinaryCalibrator):
    kind: ClassVar[str] = "histogram"
    bin_edges: tuple = (0.0, 1.0)
    bin_values: tuple = (0.5,)

    def __post_init__(self):
        edges = tuple(float(v) for v in self.bin_edges)
        values = tuple(float(v) for v in self.bin_values)
        if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
            raise InvalidInputError("bin edges must ascend strictly from 0 to 1")
        if len(values) != len(edges) - 1 or not all(0 <= v <= 1 for v in values):
            raise InvalidInputError("need one value in [0, 1] per bin")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "bin_values", values)

    def bin_index(self, p) -> np.ndarray:
        return np.searchsorted(np.array(self.bin_edges[1:-1]), p, side="right")

    def positive(self, z):
        return np.array(self.bin_values)[self.bin_index(binary_sigmoid(np.asarray(z)))]

    def parameters(self):
        return {"bin_edges": list(self.bin_edges), "bin_values": list(self.bin_values)}


@dataclass(frozen=True)
class IsotonicCalibrator(BinaryCalibrator):
    """Non-decreasing step function of the class-1 probability.

    ``thresholds[j]`` is the smallest calibration score in block ``j``; a query
    takes the level of the last block starting at or below it, and the first
    level below the first threshold.
    """

    kind: ClassVar[str] = "isotonic"
    thresholds: tuple = (0.0,)
    levels: tuple = (0.5,)

    def __post_init__(self):
        th = tuple(float(v) for v in self.thresholds)
        lv = tuple(float(v) for v in self.levels)
        if len(th) != len(lv) or not th:
            raise InvalidInputError("one level per threshold required")
        if np.any(np.diff(th) <= 0) or np.any(np.diff(lv) < 0):
            raise InvalidInputError("thresholds must ascend and levels must not decrease")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "levels", lv)

    def positive(self, z):
        p = binary_sigmoid(np.asarray(z))
        j = np.searchsorted(np.array(self.thresholds), p, side="right") - 1
        return np.array(self.levels)[np.clip(j, 0, None)]

    def parameters(self):
        return {"thresholds": list(self.thresholds), "levels": list(self.levels)}


@dataclass(frozen=True)
class OneVsRestCalibrator(Calibrator):
    """One binary calibrator per class on that class's one-vs-rest log-odds.

    The per-class outputs are clamped away from zero and divided by their sum.
    """

    kind: ClassVar[str] = "ovr"
    members: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise InvalidInputError("one-vs-rest needs at least two members")

    def _predict(self, z):
        if z.shape[1] != len(self.members):
            raise InvalidInputError(
                f"calibrator expects {len(self.members)} classes, got {z.shape[1]}")
        margins = class_margins(z)
        q = np.column_stack([m.positive(margins[:, k]) for k, m in enumerate(self.members)])
        q = clamp_probability(q, NLL_EPS)
        return q / q.sum(axis=1, keepdims=True)

    def parameters(self):
        return {"members": [{"kind": m.kind, "parameters": m.parameters()} for m in self.members]}

    @classmethod
    def from_parameters(cls, params):
        return cls(members=[CALIBRATOR_KINDS[m["kind"]].from_parameters(m["parameters"])
                            for m in params["members"]])


def apply(model: Calibrator, logits) -> np.ndarray:
    return model.predict_proba(logits)


# ---------------------------------------------------------------------------
# Features and objectives. Each objective returns (mean NLL, gradient).


def affine_features(logits, input_transform: str) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    if input_transform == "logits":
        return z
    return np.log(clamp_probability(softmax(z), NLL_EPS))


def beta_features(z) -> np.ndarray:
    """Columns ``ln p`` and ``-ln(1 - p)`` of the clamped class-1 probability."""
    p = clamp_probability(binary_sigmoid(np.atleast_1d(np.asarray(z, dtype=float))), BETA_EPS)
    return np.column_stack([np.log(p), -np.log1p(-p)])


def logistic_objective(params, X, y):
    """Binary logistic NLL of ``X @ params`` against 0/1 labels ``y``."""
    a = X @ params
    f = np.mean(np.logaddexp(0.0, a) - y * a)
    r = binary_sigmoid(a) - y
    return float(f), X.T @ r / len(y)


def temperature_objective(log_tau, logits, labels):
    """NLL of ``softmax(logits / exp(log_tau))`` and its derivative in ``log_tau``."""
    u = float(np.asarray(log_tau).reshape(-1)[0])
    s = logits * math.exp(-u)
    lse = logsumexp(s, axis=1)
    picked = s[np.arange(len(labels)), labels]
    P = np.exp(s - lse[:, None])
    f = np.mean(lse - picked)
    grad = np.mean(picked - np.sum(P * s, axis=1))
    return float(f), np.array([grad])


def affine_objective(params, x, labels, constraint="full"):
    n, m = x.shape
    if constraint == "diagonal":
        W = np.diag(params[:m])
    else:
        W = params[: m * m].reshape(m, m)
    b = params[-m:]
    s = x @ W.T + b
    lse = logsumexp(s, axis=1)
    f = np.mean(lse - s[np.arange(n), labels])
    G = (np.exp(s - lse[:, None]) - to_onehot(labels, m)) / n
    gW = G.T @ x
    gW = np.diag(gW) if constraint == "diagonal" else gW.reshape(-1)
    return float(f), np.concatenate([gW, G.sum(axis=0)])


# ---------------------------------------------------------------------------
# Fitting.


def _require_labels(cal: Dataset, *, all_classes: bool = False):
    cal.require_nonempty()
    present = np.unique(cal.labels)
    if all_classes and len(present) < cal.num_classes:
        missing = sorted(set(range(cal.num_classes)) - set(present.tolist()))
        raise DegenerateFitError(f"classes {missing} absent from the calibration set")
    if len(present) < 2:
        raise DegenerateFitError("calibration set contains a single class")


def _require_binary(cal: Dataset, what: str):
    if cal.num_classes != 2:
        raise InvalidInputError(f"{what} needs exactly two classes, got {cal.num_classes}")


def _finish(model: Calibrator, cal: Dataset, extra: Optional[dict] = None) -> Calibrator:
    """Record fit metadata and warn when the map is worse than no calibration."""
    before = nll(cal.probabilities(), cal.labels)
    after = nll(model.predict_dataset(cal), cal.labels)
    if after > before + 1e-9:
        warnings.warn(
            f"{model.kind} fit has calibration NLL {after:.6g} above uncalibrated {before:.6g}",
            CalibrationWarning, stacklevel=3)
    model.meta.update({"n": len(cal), "nll_before": before, "nll_after": after})
    if extra:
        model.meta.update(extra)
    return model


def fit_temperature(cal: Dataset) -> TemperatureCalibrator:
    """Bounded 1-D search over ``log tau`` in ``[ln 1e-2, ln 1e2]``.

    The search result is compared with ``tau = 1`` and the lower NLL kept.
    """
    _require_labels(cal)
    z, y = cal.logits, cal.labels

    def f(u):
        return temperature_objective(u, z, y)[0]

    res = minimize_scalar(f, bounds=(math.log(TAU_MIN), math.log(TAU_MAX)),
                          method="bounded", options={"xatol": 1e-10, "maxiter": 500})
    u = float(res.x)
    if f(0.0) <= f(u):
        u = 0.0
    return _finish(TemperatureCalibrator(tau=math.exp(u)), cal)


def _logistic_fit(X, y, init, config):
    return minimize_nll(lambda p: logistic_objective(p, X, y), init, config)


def fit_platt(cal: Dataset, config: Optional[OptimizerConfig] = None) -> PlattCalibrator:
    _require_binary(cal, "Platt scaling")
    _require_labels(cal)
    z = binary_logit(cal.logits)
    if np.ptp(z) <= 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        warnings.warn("constant class-1 logit: slope is not identifiable",
                      IllConditionedWarning, stacklevel=2)
    X = np.column_stack([z, np.ones_like(z)])
    res = _logistic_fit(X, cal.labels.astype(float), [1.0, 0.0], config)
    model = PlattCalibrator(alpha=float(res.x[0]), beta=float(res.x[1]))
    return _finish(model, cal, res.diagnostics())


def fit_beta(cal: Dataset, config: Optional[OptimizerConfig] = None) -> Calibrator:
    if cal.num_classes > 2:
        return fit_one_vs_rest(cal, fit_beta, config=config)
    _require_labels(cal)
    f = beta_features(binary_logit(cal.logits))
    X = np.column_stack([f, np.ones(len(f))])
    res = _logistic_fit(X, cal.labels.astype(float), [1.0, 1.0, 0.0], config)
    model = BetaCalibrator(a=float(res.x[0]), b=float(res.x[1]), c=float(res.x[2]))
    return _finish(model, cal, res.diagnostics())


def fit_affine(cal: Dataset, constraint: str = "full", input_transform: str = "logits",
               config: Optional[OptimizerConfig] = None) -> AffineLogitCalibrator:
    """Vector, matrix or Dirichlet scaling, started at ``W = I, b = 0``."""
    _require_labels(cal, all_classes=True)
    m = cal.num_classes
    x = affine_features(cal.logits, input_transform)
    if constraint == "diagonal":
        init = np.concatenate([np.ones(m), np.zeros(m)])
    elif constraint == "full":
        init = np.concatenate([np.eye(m).reshape(-1), np.zeros(m)])
    else:
        raise InvalidInputError(f"unknown constraint {constraint!r}")
    res = minimize_nll(lambda p: affine_objective(p, x, cal.labels, constraint), init, config)
    W = np.diag(res.x[:m]) if constraint == "diagonal" else res.x[: m * m].reshape(m, m)
    model = AffineLogitCalibrator(W=W, b=res.x[-m:], constraint=constraint,
                                  input_transform=input_transform)
    return _finish(model, cal, res.diagnostics())


def fit_vector_scaling(cal: Dataset, config=None):
    return fit_affine(cal, "diagonal", "logits", config)


def fit_matrix_scaling(cal: Dataset, config=None):
    return fit_affine(cal, "full", "logits", config)


def fit_dirichlet(cal: Dataset, config=None):
    return fit_affine(cal, "full", "log_probabilities", config)


def default_histogram_binning() -> BinningSpec:
    return BinningSpec("equal_frequency", 10)


def fit_histogram(cal: Dataset, spec: Optional[BinningSpec] = None) -> Calibrator:
    """Positive rate per bin of the class-1 probability; empty bins get the global rate."""
    spec = spec or default_histogram_binning()
    if cal.num_classes > 2:
        return fit_one_vs_rest(cal, fit_histogram, spec=spec)
    cal.require_nonempty()
    p = binary_sigmoid(binary_logit(cal.logits))
    y = cal.labels.astype(float)
    if spec.strategy == "equal_width":
        edges = np.linspace(0.0, 1.0, spec.n_bins + 1)
    else:
        idx = assign_bins(p, spec)
        inner = []
        for b in range(spec.n_bins - 1):
            lo, hi = p[idx == b], p[idx == b + 1]
            if len(lo) and len(hi):
                inner.append(0.5 * (lo.max() + hi.min()))
        inner = np.unique([e for e in inner if 0.0 < e < 1.0])
        edges = np.concatenate([[0.0], inner, [1.0]])
    k = len(edges) - 1
    which = np.searchsorted(edges[1:-1], p, side="right")
    count = np.bincount(which, minlength=k)
    pos = np.bincount(which, weights=y, minlength=k)
    rate = float(y.mean())
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(count > 0, pos / count, rate)
    return _finish(HistogramCalibrator(bin_edges=edges, bin_values=values), cal)


def pava(values, weights=None) -> np.ndarray:
    """Least-squares non-decreasing fit to ``values`` (already ordered by the covariate)."""
    v = np.asarray(values, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    # each block: [weighted sum, total weight, number of points]
    blocks: list = []
    for vi, wi in zip(v, w):
        blocks.append([vi * wi, wi, 1])
        while len(blocks) > 1 and (blocks[-2][0] / blocks[-2][1]) > (blocks[-1][0] / blocks[-1][1]):
            s, ww, c = blocks.pop()
            blocks[-1][0] += s
            blocks[-1][1] += ww
            blocks[-1][2] += c
    return np.concatenate([np.full(c, s / ww) for s, ww, c in blocks]) if blocks else v.copy()


def fit_isotonic(cal: Dataset) -> Calibrator:
    """Monotone least-squares fit of the labels against the class-1 probability."""
    if cal.num_classes > 2:
        return fit_one_vs_rest(cal, fit_isotonic)
    cal.require_nonempty()
    p = binary_sigmoid(binary_logit(cal.logits))
    scores, inverse = np.unique(p, return_inverse=True)
    weight = np.bincount(inverse).astype(float)
    mean_label = np.bincount(inverse, weights=cal.labels.astype(float)) / weight
    fitted = pava(mean_label, weight)
    start = np.concatenate([[True], np.diff(fitted) != 0])
    model = IsotonicCalibrator(thresholds=scores[start], levels=fitted[start])
    return _finish(model, cal)


def one_vs_rest_datasets(cal: Dataset):
    """Binary view per class: logits ``[0, margin_m]`` with labels ``1{y == m}``."""
    margins = class_margins(cal.logits)
    for m in range(cal.num_classes):
        logits = np.column_stack([np.zeros(len(cal)), margins[:, m]])
        yield Dataset(logits, (cal.labels == m).astype(np.int64), t=cal.t)


def fit_one_vs_rest(cal: Dataset, fit_binary: Callable, **kwargs) -> OneVsRestCalibrator:
    cal.require_nonempty()
    members = []
    with warnings.catch_warnings():
        # members are judged jointly below, not one by one
        warnings.simplefilter("ignore", CalibrationWarning)
        for sub in one_vs_rest_datasets(cal):
            members.append(fit_binary(sub, **kwargs))
    return _finish(OneVsRestCalibrator(members=members), cal)


def fit_platt_ovr(cal: Dataset, config: Optional[OptimizerConfig] = None) -> Calibrator:
    if cal.num_classes == 2:
        return fit_platt(cal, config)
    _require_labels(cal, all_classes=True)
    return fit_one_vs_rest(cal, fit_platt, config=config)


def fit_identity(cal: Dataset) -> IdentityCalibrator:
    cal.require_nonempty()
    return _finish(IdentityCalibrator(), cal)


def calibrator_from_dict(obj: dict) -> Calibrator:
    kind = obj["kind"]
    if kind == "platt_ovr":
        kind = "ovr"
    if kind not in CALIBRATOR_KINDS:
        raise InvalidInputError(f"unknown calibrator kind {kind!r}")
    model = CALIBRATOR_KINDS[kind].from_parameters(obj.get("parameters", {}))
    model.meta.update(obj.get("meta", {}))
    return model


def calibrator_to_dict(model: Calibrator) -> dict:
    kind = model.kind
    if isinstance(model, OneVsRestCalibrator) and all(
            isinstance(m, PlattCalibrator) for m in model.members):
        kind = "platt_ovr"
    return {"kind": kind, "parameters": model.parameters(), "meta": dict(model.meta)}

