"""Shared domain types and elementary probability transforms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

NLL_EPS = 1e-12
BETA_EPS = 1e-6


class CalibrationError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(CalibrationError, ValueError):
    """Input data violates a precondition (shape, range, finiteness)."""


class DegenerateFitError(CalibrationError):
    """The calibration set cannot identify the requested map (e.g. one class only)."""


class OptimizationError(CalibrationError):
    """The optimizer could not make progress on a finite objective."""


class InsufficientDataError(CalibrationError):
    """Too few records for the requested binning or grouping."""


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max-subtraction.

    Accepts a single logit vector or an ``(n, M)`` array.
    """
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logsumexp(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    m = z.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def binary_sigmoid(z):
    """Logistic function, stable for large ``|z|``. Works on scalars and arrays."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("sigmoid input must be finite")
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def to_onehot(label, num_classes: int) -> np.ndarray:
    """Indicator vector (or matrix, for an array of labels)."""
    labels = np.asarray(label)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise InvalidInputError(f"label out of range for {num_classes} classes")
    return np.eye(num_classes)[labels]


def clamp_probability(p, eps: float = NLL_EPS):
    if not 0 < eps < 0.5:
        raise InvalidInputError("eps must lie in (0, 0.5)")
    out = np.clip(p, eps, 1.0 - eps)
    return float(out) if np.ndim(out) == 0 else out


def binary_logit(logits) -> np.ndarray:
    """Class-1 log-odds of a two-column logit array: ``logits[:, 1] - logits[:, 0]``."""
    z = np.asarray(logits, dtype=float)
    if z.shape[-1] != 2:
        raise InvalidInputError(f"expected 2 classes, got {z.shape[-1]}")
    return z[..., 1] - z[..., 0]


def class_margins(logits) -> np.ndarray:
    """One-vs-rest log-odds of every class under softmax.

    Column ``m`` is ``log p_m - log(1 - p_m)``, computed without forming ``p``.
    Reduces to :func:`binary_logit` (up to sign per column) for two classes.
    """
    z = np.asarray(logits, dtype=float)
    n, m = z.shape
    out = np.empty_like(z)
    for k in range(m):
        rest = np.delete(z, k, axis=1)
        out[:, k] = z[:, k] - logsumexp(rest, axis=1)
    return out


def check_probability_vector(p, atol: float = 1e-9) -> None:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise InvalidInputError("probabilities must sum to 1")


@dataclass(frozen=True)
class PredictionRecord:
    """One model output plus its label and temporal metadata."""

    logits: tuple
    label: int
    t: float = 0.0
    total_len: Optional[float] = None
    measure: Optional[float] = None
    run_id: Optional[int] = None
    group_id: Optional[str] = None

    def __post_init__(self):
        logits = tuple(float(v) for v in self.logits)
        object.__setattr__(self, "logits", logits)
        if len(logits) < 2:
            raise InvalidInputError("need at least two logits")
        if not all(np.isfinite(logits)):
            raise InvalidInputError("logits must be finite")
        if not 0 <= self.label < len(logits):
            raise InvalidInputError(f"label {self.label} out of range")
        if not self.t >= 0:
            raise InvalidInputError("t must be nonnegative")
        if self.total_len is not None:
            if not self.total_len > 0:
                raise InvalidInputError("total_len must be positive")
            if self.t > self.total_len:
                raise InvalidInputError("t exceeds total_len")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Dataset:
    """Column-oriented collection of prediction records sharing a class count.

    Optional columns (``total_len``, ``measure``) use NaN for missing entries;
    ``run_id`` and ``group_id`` are ``None`` when no record carries them.
    """

    def __init__(self, logits, labels, t=None, total_len=None, measure=None,
                 run_id=None, group_id=None, num_classes: Optional[int] = None):
        try:
            logits = np.array(logits, dtype=float)
        except ValueError:
            raise InvalidInputError("logit rows differ in length") from None
        if logits.ndim != 2:
            if logits.size == 0 and num_classes:
                logits = logits.reshape(0, num_classes)
            else:
                raise InvalidInputError("logits must be a 2-D array")
        n, m = logits.shape
        if num_classes is not None and num_classes != m:
            raise InvalidInputError(f"logits have {m} columns, expected {num_classes}")
        if m < 2:
            raise InvalidInputError("need at least two classes")
        if not np.all(np.isfinite(logits)):
            raise InvalidInputError("logits must be finite")
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise InvalidInputError("labels and logits differ in length")
        if np.any(labels < 0) or np.any(labels >= m):
            raise InvalidInputError("label out of range")
        t = np.zeros(n) if t is None else np.array(t, dtype=float).reshape(-1)
        if t.shape[0] != n:
            raise InvalidInputError("t and logits differ in length")
        if np.any(~(t >= 0)):
            raise InvalidInputError("t must be nonnegative")
        if total_len is not None:
            total_len = np.array(total_len, dtype=float).reshape(-1)
            known = ~np.isnan(total_len)
            if np.any(total_len[known] <= 0) or np.any(t[known] > total_len[known]):
                raise InvalidInputError("total_len must be positive and >= t")
            total_len = _frozen(total_len)
        if measure is not None:
            measure = _frozen(np.array(measure, dtype=float).reshape(-1))
        if run_id is not None:
            run_id = _frozen(np.array(run_id, dtype=object).reshape(-1))
        if group_id is not None:
            group_id = _frozen(np.array(group_id, dtype=object).reshape(-1))
        self.logits = _frozen(logits)
        self.labels = _frozen(labels)
        self.t = _frozen(t)
        self.total_len = total_len
        self.measure = measure
        self.run_id = run_id
        self.group_id = group_id

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    def __len__(self) -> int:
        return self.logits.shape[0]

    @classmethod
    def from_records(cls, records: Iterable[PredictionRecord],
                     num_classes: Optional[int] = None) -> "Dataset":
        records = list(records)
        if not records:
            if num_classes is None:
                raise InvalidInputError("num_classes required for an empty dataset")
            return cls(np.empty((0, num_classes)), [], num_classes=num_classes)
        widths = {len(r.logits) for r in records}
        if len(widths) != 1:
            raise InvalidInputError("records disagree on the number of classes")

        def column(name):
            vals = [getattr(r, name) for r in records]
            return None if all(v is None for v in vals) else vals

        def float_column(name):
            vals = column(name)
            return None if vals is None else [np.nan if v is None else v for v in vals]

        return cls(
            [r.logits for r in records],
            [r.label for r in records],
            t=[r.t for r in records],
            total_len=float_column("total_len"),
            measure=float_column("measure"),
            run_id=column("run_id"),
            group_id=column("group_id"),
            num_classes=num_classes,
        )

    def records(self) -> Iterator[PredictionRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> PredictionRecord:
        def opt_float(col):
            if col is None or np.isnan(col[i]):
                return None
            return float(col[i])

        return PredictionRecord(
            logits=tuple(self.logits[i]),
            label=int(self.labels[i]),
            t=float(self.t[i]),
            total_len=opt_float(self.total_len),
            measure=opt_float(self.measure),
            run_id=None if self.run_id is None else self.run_id[i],
            group_id=None if self.group_id is None else self.group_id[i],
        )

    def subset(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(index)

        def take(col):
            return None if col is None else col[idx]

        return Dataset(self.logits[idx], self.labels[idx], t=self.t[idx],
                       total_len=take(self.total_len), measure=take(self.measure),
                       run_id=take(self.run_id), group_id=take(self.group_id),
                       num_classes=self.num_classes)

    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)

    def require_nonempty(self, what: str = "fit") -> None:
        if len(self) == 0:
            raise InvalidInputError(f"cannot {what} on an empty dataset")

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, num_classes={self.num_classes})"
