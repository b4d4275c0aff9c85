"""Calibration maps that depend on how far a sequence has progressed.

Two families:

* :class:`DiscreteTemporalCalibrator` keeps one fitted global calibrator per
  integer step (or per integer value of an alternative progress measure such
  as an absolute score difference) with a global fallback.
* :class:`ContinuousTemporalCalibrator` scales logits by an inverse
  temperature that evolves as a saturating exponential of normalised time,
  ``g(t) = gamma - alpha * exp(-beta * t / t_max - s)`` with ``beta`` stored
  as the square root of its effective value so that it stays nonnegative.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Dict, Optional, Union

import numpy as np

from .calibrators import (
    Calibrator,
    CalibrationWarning,
    IdentityCalibrator,
    calibrator_from_dict,
    calibrator_to_dict,
)
from .core import (
    Dataset,
    DegenerateFitError,
    InvalidInputError,
    logsumexp,
    softmax,
)
from .metrics import nll
from .optimize import OptimizerConfig, minimize_nll

TIME = "time"
MEASURE = "measure"


class NonPositiveInverseTemperatureWarning(UserWarning):
    """``g(t) <= 0`` for some query: the predicted class may flip."""


@dataclass(frozen=True)
class TemporalKey:
    """Which record field indexes calibration: elapsed time or an alternative measure."""

    kind: str = TIME

    def __post_init__(self):
        if self.kind not in (TIME, MEASURE):
            raise InvalidInputError(f"unknown temporal key {self.kind!r}")

    def values(self, dataset: Dataset) -> np.ndarray:
        if self.kind == TIME:
            return dataset.t
        if dataset.measure is None or np.any(np.isnan(dataset.measure)):
            raise InvalidInputError("measure key requires a measure on every record")
        return np.abs(dataset.measure)


def round_key(values) -> np.ndarray:
    # half-up rounding, independent of numpy's banker's rounding
    return np.floor(np.asarray(values, dtype=float) + 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Discrete


@dataclass(frozen=True)
class DiscreteTemporalCalibrator(Calibrator):
    kind: ClassVar[str] = "discrete_temporal"
    key: TemporalKey = TemporalKey()
    table: Dict[int, Calibrator] = field(default_factory=dict)
    fallback: Calibrator = IdentityCalibrator()

    def __post_init__(self):
        object.__setattr__(self, "table", {int(k): self.table[k] for k in sorted(self.table)})

    def resolve(self, key_values) -> np.ndarray:
        """Table key used for each query: exact match, else nearest (ties to the smaller)."""
        k = round_key(np.abs(key_values) if self.key.kind == MEASURE else key_values)
        keys = np.array(list(self.table), dtype=np.int64)
        if keys.size == 0:
            return k
        hi = np.clip(np.searchsorted(keys, k, side="left"), 0, len(keys) - 1)
        lo = np.clip(hi - 1, 0, len(keys) - 1)
        pick_lo = np.abs(k - keys[lo]) <= np.abs(keys[hi] - k)
        return np.where(pick_lo, keys[lo], keys[hi])

    def predict_proba(self, logits, key_values=None) -> np.ndarray:
        z = np.asarray(logits, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        kv = np.zeros(len(z)) if key_values is None else np.atleast_1d(np.asarray(key_values, float))
        if len(kv) != len(z):
            raise InvalidInputError("one key value per logit row required")
        out = np.empty_like(z)
        if not self.table:
            out[:] = self.fallback.predict_proba(z)
        else:
            resolved = self.resolve(kv)
            for k in np.unique(resolved):
                rows = resolved == k
                out[rows] = self.table[int(k)].predict_proba(z[rows])
        return out[0] if single else out

    def predict_dataset(self, dataset: Dataset) -> np.ndarray:
        return self.predict_proba(dataset.logits, self.key.values(dataset))

    def parameters(self):
        return {
            "key": self.key.kind,
            "table": [{"key": k, "model": calibrator_to_dict(m)} for k, m in self.table.items()],
            "fallback": calibrator_to_dict(self.fallback),
        }

    @classmethod
    def from_parameters(cls, params):
        return cls(key=TemporalKey(params["key"]),
                   table={int(e["key"]): calibrator_from_dict(e["model"]) for e in params["table"]},
                   fallback=calibrator_from_dict(params["fallback"]))


def apply_discrete(cal: DiscreteTemporalCalibrator, logits, key_value) -> np.ndarray:
    return cal.predict_proba(logits, key_value)


FitFn = Callable[[Dataset], Calibrator]


def fit_discrete(cal: Dataset, key: Union[TemporalKey, str] = TIME,
                 method: Union[str, FitFn] = "temperature", min_bin: int = 50) -> DiscreteTemporalCalibrator:
    """One calibrator per rounded key value.

    Groups smaller than ``min_bin`` or holding a single class, and groups whose
    fit is degenerate, map to a global fit on all records.
    """
    cal.require_nonempty()
    if min_bin < 2:
        raise InvalidInputError("min_bin must be at least 2")
    key = TemporalKey(key) if isinstance(key, str) else key
    fit = _resolve_method(method)
    fallback = fit(cal)
    keys = round_key(key.values(cal))
    table: Dict[int, Calibrator] = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        for k in np.unique(keys):
            rows = np.flatnonzero(keys == k)
            if len(rows) < min_bin or len(np.unique(cal.labels[rows])) < 2:
                continue
            try:
                table[int(k)] = fit(cal.subset(rows))
            except DegenerateFitError:
                continue
    model = DiscreteTemporalCalibrator(key=key, table=table, fallback=fallback)
    before = nll(cal.probabilities(), cal.labels)
    after = nll(model.predict_dataset(cal), cal.labels)
    model.meta.update({"n": len(cal), "nll_before": before, "nll_after": after,
                       "min_bin": min_bin, "fitted_keys": len(table)})
    return model


def _resolve_method(method) -> FitFn:
    if callable(method):
        return method
    from .harness import global_fit_function
    return global_fit_function(method)


# ---------------------------------------------------------------------------
# Continuous


@dataclass(frozen=True)
class ExponentialTemperature:
    """Inverse-temperature schedule ``gamma - alpha * exp(-beta_raw**2 * t_norm - s)``.

    ``t_norm = min(t / t_max, 1)``.
    """

    alpha: float = 0.0
    beta_raw: float = 1.0
    gamma: float = 1.0
    s: float = 0.0
    t_max: float = 1.0

    def __post_init__(self):
        if not self.t_max > 0:
            raise InvalidInputError("t_max must be positive")
        for name in ("alpha", "beta_raw", "gamma", "s", "t_max"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")

    @property
    def beta(self) -> float:
        return self.beta_raw ** 2

    def normalise(self, t) -> np.ndarray:
        return np.minimum(np.asarray(t, dtype=float) / self.t_max, 1.0)

    def __call__(self, t):
        out = self.gamma - self.alpha * np.exp(-self.beta * self.normalise(t) - self.s)
        return float(out) if np.ndim(out) == 0 else out

    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta_raw, self.gamma, self.s])

    @classmethod
    def from_vector(cls, theta, t_max: float) -> "ExponentialTemperature":
        a, b, g, s = (float(v) for v in theta)
        return cls(alpha=a, beta_raw=b, gamma=g, s=s, t_max=float(t_max))


def g_eval(sched: ExponentialTemperature, t):
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError("t must be nonnegative")
    return sched(t)


@dataclass(frozen=True)
class ContinuousTemporalCalibrator(Calibrator):
    kind: ClassVar[str] = "continuous_temporal"
    schedule: ExponentialTemperature = ExponentialTemperature()

    def predict_proba(self, logits, t=None) -> np.ndarray:
        z = np.asarray(logits, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        t = np.zeros(len(z)) if t is None else np.atleast_1d(np.asarray(t, dtype=float))
        if len(t) != len(z):
            raise InvalidInputError("one time value per logit row required")
        g = g_eval(self.schedule, t)
        if np.any(g <= 0):
            warnings.warn(f"inverse temperature <= 0 for {int(np.sum(g <= 0))} queries",
                          NonPositiveInverseTemperatureWarning, stacklevel=2)
        p = softmax(np.asarray(g)[:, None] * z)
        return p[0] if single else p

    def predict_dataset(self, dataset: Dataset) -> np.ndarray:
        return self.predict_proba(dataset.logits, dataset.t)

    def parameters(self):
        s = self.schedule
        return {"alpha": s.alpha, "beta_raw": s.beta_raw, "gamma": s.gamma, "s": s.s,
                "t_max": s.t_max}

    @classmethod
    def from_parameters(cls, params):
        return cls(schedule=ExponentialTemperature(**params))


def apply_continuous(cal: ContinuousTemporalCalibrator, logits, t) -> np.ndarray:
    return cal.predict_proba(logits, t)


def continuous_objective(theta, logits, labels, t_norm):
    """Mean NLL of ``softmax(g(t) * logits)`` and its gradient in (alpha, beta_raw, gamma, s)."""
    alpha, beta_raw, gamma, s = theta
    e = np.exp(-beta_raw ** 2 * t_norm - s)
    g = gamma - alpha * e
    scaled = g[:, None] * logits
    lse = logsumexp(scaled, axis=1)
    n = len(labels)
    picked = logits[np.arange(n), labels]
    P = np.exp(scaled - lse[:, None])
    f = np.mean(lse - g * picked)
    dg = (np.sum(P * logits, axis=1) - picked) / n
    grad = np.array([
        -np.sum(dg * e),
        np.sum(dg * alpha * e * 2 * beta_raw * t_norm),
        np.sum(dg),
        np.sum(dg * alpha * e),
    ])
    return float(f), grad


IDENTITY_START = np.array([0.0, 1.0, 1.0, 0.0])


def fit_continuous(cal: Dataset, init=None, restarts: int = 5, seed: int = 0,
                   config: Optional[OptimizerConfig] = None) -> ContinuousTemporalCalibrator:
    """Fit the exponential inverse-temperature schedule by NLL.

    ``t_max`` is the largest ``t`` in the calibration set. The descent starts
    from ``init`` (default: the identity schedule ``g == 1``) and from
    ``restarts`` seeded random points; the lowest final NLL wins, earlier
    starts winning ties.
    """
    cal.require_nonempty()
    if len(np.unique(cal.labels)) < 2:
        raise DegenerateFitError("calibration set contains a single class")
    t_max = float(cal.t.max())
    if t_max <= 0:
        t_max = 1.0
    t_norm = np.minimum(cal.t / t_max, 1.0)
    z, y = cal.logits, cal.labels

    def objective(theta):
        return continuous_objective(theta, z, y, t_norm)

    rng = np.random.default_rng(seed)
    starts = [IDENTITY_START if init is None else np.asarray(init, dtype=float)]
    for _ in range(restarts):
        starts.append(np.array([rng.uniform(-2, 2), rng.uniform(0.5, 3.0),
                                rng.uniform(0.5, 2.5), 0.0]))
    best = None
    for x0 in starts:
        res = minimize_nll(objective, x0, config)
        if best is None or res.fun < best.fun:
            best = res
    baseline = objective(IDENTITY_START)[0]
    if best.fun > baseline + 1e-9:
        warnings.warn(f"continuous fit NLL {best.fun:.6g} above uncalibrated {baseline:.6g}",
                      CalibrationWarning, stacklevel=2)
    model = ContinuousTemporalCalibrator(schedule=ExponentialTemperature.from_vector(best.x, t_max))
    model.meta.update({"n": len(cal), "nll_before": baseline, "nll_after": best.fun,
                       "seed": seed, "restarts": restarts, "trace": list(best.trace),
                       **{k: v for k, v in best.diagnostics().items() if k != "final_nll"}})
    return model
