"""Proper scoring rules, accuracy and binned calibration error."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import NLL_EPS, Dataset, InvalidInputError, to_onehot

EQUAL_WIDTH = "equal_width"
EQUAL_FREQUENCY = "equal_frequency"


@dataclass(frozen=True)
class BinningSpec:
    strategy: str = EQUAL_WIDTH
    n_bins: int = 10

    def __post_init__(self):
        if self.strategy not in (EQUAL_WIDTH, EQUAL_FREQUENCY):
            raise InvalidInputError(f"unknown binning strategy {self.strategy!r}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise InvalidInputError("n_bins must be a positive integer")


@dataclass(frozen=True)
class BinStats:
    """Per-bin summaries. Empty bins have ``count == 0`` and NaN accuracy/confidence."""

    count: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n(self) -> int:
        return int(self.count.sum())

    def populated(self) -> np.ndarray:
        return self.count > 0


@dataclass(frozen=True)
class MetricsReport:
    nll: float
    brier: float
    ece: float
    classwise_ece: float
    accuracy: float
    n: int
    binning: BinningSpec

    def to_dict(self) -> dict:
        return asdict(self)


def _check(probs, labels):
    p = np.asarray(probs, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape[0] == 0:
        raise InvalidInputError("metrics need at least one record")
    if p.shape[0] != y.shape[0]:
        raise InvalidInputError("probs and labels differ in length")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise InvalidInputError("label out of range")
    return p, y


def nll(probs, labels, eps: float = NLL_EPS) -> float:
    p, y = _check(probs, labels)
    picked = np.clip(p[np.arange(len(y)), y], eps, 1.0)
    return float(-np.mean(np.log(picked)))


def brier(probs, labels) -> float:
    """Mean over records of the squared distance to the one-hot label, summed over classes."""
    p, y = _check(probs, labels)
    return float(np.mean(np.sum((to_onehot(y, p.shape[1]) - p) ** 2, axis=1)))


def predicted_class(probs) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(np.asarray(probs, dtype=float), axis=-1)


def accuracy(probs, labels) -> float:
    p, y = _check(probs, labels)
    return float(np.mean(predicted_class(p) == y))


def assign_bins(scores, spec: BinningSpec) -> np.ndarray:
    """Bin index for each score.

    Equal-width bin ``k`` covers ``[k/K, (k+1)/K)`` with the last bin closed at 1.
    Equal-frequency bins take consecutive runs of the scores sorted by
    (score, input position); bin sizes differ by at most one.
    """
    s = np.asarray(scores, dtype=float)
    k = spec.n_bins
    if spec.strategy == EQUAL_WIDTH:
        return np.minimum(np.floor(s * k).astype(np.int64), k - 1).clip(0)
    order = np.argsort(s, kind="stable")
    out = np.empty(len(s), dtype=np.int64)
    for b, chunk in enumerate(np.array_split(order, k)):
        out[chunk] = b
    return out


def binned_stats(scores, outcomes, spec: BinningSpec) -> BinStats:
    """Group ``(score, outcome)`` pairs into bins and summarise each bin."""
    s = np.asarray(scores, dtype=float)
    o = np.asarray(outcomes, dtype=float)
    if len(s) == 0:
        raise InvalidInputError("binning needs at least one record")
    k = spec.n_bins
    idx = assign_bins(s, spec)
    count = np.bincount(idx, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.bincount(idx, weights=o, minlength=k) / count
        conf = np.bincount(idx, weights=s, minlength=k) / count
    if spec.strategy == EQUAL_WIDTH:
        lower = np.arange(k) / k
        upper = np.arange(1, k + 1) / k
    else:
        lower = np.full(k, np.nan)
        upper = np.full(k, np.nan)
        for b in np.flatnonzero(count):
            members = s[idx == b]
            lower[b], upper[b] = members.min(), members.max()
    return BinStats(count=count, accuracy=acc, confidence=conf, lower=lower, upper=upper)


def bin_stats(probs, labels, spec: Optional[BinningSpec] = None) -> BinStats:
    """Top-label bins: confidence is the max-class probability, outcome is correctness."""
    p, y = _check(probs, labels)
    spec = spec or BinningSpec()
    correct = predicted_class(p) == y
    return binned_stats(p.max(axis=1), correct, spec)


def _calibration_gap(stats: BinStats) -> float:
    n = stats.n
    full = stats.populated()
    terms = stats.count[full] / n * np.abs(stats.accuracy[full] - stats.confidence[full])
    return math.fsum(terms.tolist())


def ece(probs, labels, spec: Optional[BinningSpec] = None) -> float:
    return _calibration_gap(bin_stats(probs, labels, spec))


def classwise_ece(probs, labels, spec: Optional[BinningSpec] = None) -> float:
    """Mean over classes of the one-vs-rest ECE on each class's probability."""
    p, y = _check(probs, labels)
    spec = spec or BinningSpec()
    per_class = [
        _calibration_gap(binned_stats(p[:, m], y == m, spec))
        for m in range(p.shape[1])
    ]
    return math.fsum(per_class) / len(per_class)


def score(probs, labels, spec: Optional[BinningSpec] = None) -> MetricsReport:
    spec = spec or BinningSpec()
    p, y = _check(probs, labels)
    return MetricsReport(
        nll=nll(p, y),
        brier=brier(p, y),
        ece=ece(p, y, spec),
        classwise_ece=classwise_ece(p, y, spec),
        accuracy=accuracy(p, y),
        n=len(y),
        binning=spec,
    )


def evaluate(dataset: Dataset, spec: Optional[BinningSpec] = None,
             calibrator=None) -> MetricsReport:
    """Score a dataset, uncalibrated or through ``calibrator.predict_dataset``."""
    dataset.require_nonempty("evaluate")
    probs = dataset.probabilities() if calibrator is None else calibrator.predict_dataset(dataset)
    return score(probs, dataset.labels, spec)
