"""Experimental machinery: truncation augmentation, planted synthetic data,
ECE-by-length curves, reliability-diagram data and rank-based comparison."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from . import calibrators as C
from .core import (
    Dataset,
    InsufficientDataError,
    InvalidInputError,
    softmax,
)
from .metrics import EQUAL_FREQUENCY, BinningSpec, bin_stats, ece, evaluate, nll
from .temporal import ExponentialTemperature, fit_continuous, fit_discrete, round_key

METHODS = (
    "identity", "temperature", "platt", "platt-ovr", "vector", "matrix", "dirichlet",
    "beta", "histogram", "isotonic", "temporal-discrete", "temporal-continuous",
)

_GLOBAL_FITS: Dict[str, Callable] = {
    "identity": C.fit_identity,
    "temperature": C.fit_temperature,
    "platt": C.fit_platt,
    "platt-ovr": C.fit_platt_ovr,
    "vector": C.fit_vector_scaling,
    "matrix": C.fit_matrix_scaling,
    "dirichlet": C.fit_dirichlet,
    "beta": C.fit_beta,
    "histogram": C.fit_histogram,
    "isotonic": C.fit_isotonic,
}


def global_fit_function(name: str) -> Callable[[Dataset], C.Calibrator]:
    try:
        return _GLOBAL_FITS[name.replace("_", "-")]
    except KeyError:
        raise InvalidInputError(f"unknown global calibration method {name!r}") from None


def fit_method(name: str, cal: Dataset, *, key: str = "time", min_bin: int = 50,
               binning: Optional[BinningSpec] = None, seed: int = 0,
               discrete_method: str = "temperature") -> C.Calibrator:
    """Fit any calibrator by its command-line name."""
    if name == "temporal-discrete":
        return fit_discrete(cal, key=key, method=discrete_method, min_bin=min_bin)
    if name == "temporal-continuous":
        return fit_continuous(cal, seed=seed)
    if name == "histogram" and binning is not None:
        return C.fit_histogram(cal, binning)
    return global_fit_function(name)(cal)


# ---------------------------------------------------------------------------
# Truncation augmentation


@dataclass(frozen=True)
class TruncationPlan:
    draws_per_sequence: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.draws_per_sequence < 1:
            raise InvalidInputError("draws_per_sequence must be at least 1")


def truncate_augment(sequence_lengths, plan: TruncationPlan, stream: int = 0) -> np.ndarray:
    """Uniform truncation points in ``{1..L}``, drawn with replacement.

    Returns an ``(n_sequences, draws)`` integer array.
    """
    L = np.asarray(sequence_lengths, dtype=np.int64).reshape(-1)
    if np.any(L < 1):
        raise InvalidInputError("sequence lengths must be at least 1")
    rng = np.random.default_rng([plan.rng_seed, stream])
    return rng.integers(1, L[:, None] + 1, size=(len(L), plan.draws_per_sequence))


def truncate_dataset(dataset: Dataset, plan: TruncationPlan, stream: int = 0) -> Dataset:
    """Sample prefixes of every source sequence.

    ``dataset`` holds model outputs for prefixes of sequences identified by
    ``group_id``. A sequence's length is its ``total_len`` when known, else its
    largest ``t``. Each drawn truncation point selects the longest stored
    prefix not exceeding it (the shortest one if none qualifies).
    """
    if dataset.group_id is None:
        raise InvalidInputError("truncation needs group_id on every record")
    dataset.require_nonempty("truncate")
    _, first, code = np.unique(dataset.group_id.astype(str), return_index=True, return_inverse=True)
    # renumber groups by first appearance so output order follows the input
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    code = rank[code]
    n_groups = len(first)
    t = dataset.t
    if dataset.total_len is not None and not np.any(np.isnan(dataset.total_len)):
        lengths = np.zeros(n_groups)
        np.maximum.at(lengths, code, dataset.total_len)
    else:
        lengths = np.zeros(n_groups)
        np.maximum.at(lengths, code, t)
    lengths = np.maximum(np.floor(lengths), 1).astype(np.int64)
    points = truncate_augment(lengths, plan, stream)
    span = float(max(t.max(), lengths.max())) + 2.0
    order = np.lexsort((t, code))
    composite = code[order] * span + t[order]
    query = (np.arange(n_groups)[:, None] * span + points).reshape(-1)
    pos = np.searchsorted(composite, query, side="right") - 1
    group_start = np.searchsorted(code[order], np.arange(n_groups), side="left")
    owner = np.repeat(np.arange(n_groups), plan.draws_per_sequence)
    pos = np.maximum(pos, group_start[owner])
    return dataset.subset(order[pos])


# ---------------------------------------------------------------------------
# Synthetic data with a planted calibration map


@dataclass(frozen=True)
class SyntheticSpec:
    """Sequences whose every prefix carries a raw logit vector.

    Labels are per sequence, and each prefix's logits are drawn so that
    ``P(y | z, t) = softmax(g(t) * z)`` exactly, where ``g`` is the planted
    inverse temperature: ``schedule(t)`` if given, else ``1 / step_temperatures[t]``
    (1 for unlisted steps), else 1. Binary logits are ``[0, z]`` with
    ``z ~ U[-logit_scale, logit_scale]``; multiclass logits are i.i.d. on that range.
    """

    n_sequences: int
    max_len: int
    min_len: int = 1
    schedule: Optional[ExponentialTemperature] = None
    step_temperatures: Optional[Mapping[int, float]] = None
    num_classes: int = 2
    logit_scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.n_sequences < 1 or not 1 <= self.min_len <= self.max_len:
            raise InvalidInputError("need n_sequences >= 1 and 1 <= min_len <= max_len")
        if self.num_classes < 2:
            raise InvalidInputError("need at least two classes")
        if self.schedule is not None and self.step_temperatures is not None:
            raise InvalidInputError("give either a schedule or step temperatures, not both")

    def inverse_temperature(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.schedule is not None:
            return np.asarray(self.schedule(t), dtype=float) * np.ones_like(t)
        if self.step_temperatures is not None:
            steps = round_key(t)
            table = {int(k): float(v) for k, v in self.step_temperatures.items()}
            return np.array([1.0 / table.get(int(k), 1.0) for k in steps])
        return np.ones_like(t)


@dataclass(frozen=True)
class SyntheticTruth:
    inverse_temperature: np.ndarray
    spec: SyntheticSpec

    def probabilities(self, dataset: Dataset) -> np.ndarray:
        """Planted probabilities for any records following this spec, e.g. a truncated sample."""
        g = self.spec.inverse_temperature(dataset.t)
        return softmax(g[:, None] * dataset.logits)

    def planted_nll(self, dataset: Dataset) -> float:
        return nll(self.probabilities(dataset), dataset.labels)


def _raw_logits(rng, n, m, scale):
    if m == 2:
        z = rng.uniform(-scale, scale, size=n)
        return np.column_stack([np.zeros(n), z])
    return rng.uniform(-scale, scale, size=(n, m))


def _conditional_logits(rng, labels, g, m, scale):
    """Rejection-sample logits from p(z | y) given P(y | z) = softmax(g z)[y]."""
    out = np.empty((len(labels), m))
    pending = np.arange(len(labels))
    while pending.size:
        cand = _raw_logits(rng, pending.size, m, scale)
        accept_p = softmax(g[pending, None] * cand)[np.arange(pending.size), labels[pending]]
        ok = rng.random(pending.size) < accept_p
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    return out


def generate_synthetic(spec: SyntheticSpec):
    """Full-prefix dataset plus the planted truth; identical specs give identical data."""
    rng = np.random.default_rng(spec.seed)
    lengths = rng.integers(spec.min_len, spec.max_len + 1, size=spec.n_sequences)
    # exchangeable logits make every class equally likely a priori
    seq_labels = rng.integers(0, spec.num_classes, size=spec.n_sequences)
    owner = np.repeat(np.arange(spec.n_sequences), lengths)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    t = (np.arange(len(owner)) - starts[owner] + 1).astype(float)
    labels = seq_labels[owner]
    g = spec.inverse_temperature(t)
    logits = _conditional_logits(rng, labels, g, spec.num_classes, spec.logit_scale)
    dataset = Dataset(logits, labels, t=t, total_len=lengths[owner].astype(float),
                      group_id=[str(i) for i in owner])
    return dataset, SyntheticTruth(inverse_temperature=g, spec=spec)


# ---------------------------------------------------------------------------
# Curves and reliability data


def _predict(dataset: Dataset, calibrator) -> np.ndarray:
    return dataset.probabilities() if calibrator is None else calibrator.predict_dataset(dataset)


@dataclass(frozen=True)
class LengthBin:
    t_min: float
    t_max: float
    count: int
    ece: float
    nll: float


@dataclass(frozen=True)
class LengthBinnedCurve:
    bins: tuple

    def ece(self) -> np.ndarray:
        return np.array([b.ece for b in self.bins])

    def to_rows(self) -> list:
        return [asdict(b) for b in self.bins]


def ece_by_length(dataset: Dataset, calibrator=None, n_length_bins: int = 10,
                  spec: Optional[BinningSpec] = None) -> LengthBinnedCurve:
    """ECE within equal-frequency bins of sequence length, shortest first."""
    if len(dataset) < n_length_bins:
        raise InsufficientDataError(
            f"{len(dataset)} records cannot fill {n_length_bins} length bins")
    probs = _predict(dataset, calibrator)
    order = np.argsort(dataset.t, kind="stable")
    bins = []
    for chunk in np.array_split(order, n_length_bins):
        p, y = probs[chunk], dataset.labels[chunk]
        bins.append(LengthBin(t_min=float(dataset.t[chunk].min()), t_max=float(dataset.t[chunk].max()),
                              count=len(chunk), ece=ece(p, y, spec), nll=nll(p, y)))
    return LengthBinnedCurve(bins=tuple(bins))


@dataclass(frozen=True)
class ReliabilityData:
    confidence: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def to_rows(self) -> list:
        return [{"bin": i, "confidence": float(c), "accuracy": float(a), "count": int(n)}
                for i, (c, a, n) in enumerate(zip(self.confidence, self.accuracy, self.count))]


def reliability_data(dataset: Dataset, calibrator=None, n_bins: int = 10) -> ReliabilityData:
    """Per-bin mean confidence and accuracy over equal-frequency confidence bins."""
    dataset.require_nonempty("build a reliability diagram")
    st = bin_stats(_predict(dataset, calibrator), dataset.labels,
                   BinningSpec(EQUAL_FREQUENCY, n_bins))
    keep = st.count > 0
    return ReliabilityData(confidence=st.confidence[keep], accuracy=st.accuracy[keep],
                           count=st.count[keep])


# ---------------------------------------------------------------------------
# Friedman test with the Nemenyi post-hoc critical difference

# two-tailed Nemenyi q at alpha = 0.05 (studentized range / sqrt 2), k = 2..10
NEMENYI_Q_05 = {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850,
                7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164}


@dataclass(frozen=True)
class RankComparison:
    methods: tuple
    values: np.ndarray
    average_ranks: np.ndarray
    statistic: float
    p_value: float
    critical_difference: float
    best_group: tuple
    alpha: float = 0.05

    def to_rows(self) -> list:
        return [{"method": m, "mean": float(np.mean(self.values[:, j])),
                 "average_rank": float(self.average_ranks[j]),
                 "best_group": bool(self.best_group[j])}
                for j, m in enumerate(self.methods)]

    def to_dict(self) -> dict:
        return {"methods": list(self.methods), "average_ranks": self.average_ranks.tolist(),
                "friedman_statistic": self.statistic, "p_value": self.p_value,
                "critical_difference": self.critical_difference,
                "best_group": list(self.best_group), "alpha": self.alpha}


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    if alpha != 0.05:
        raise InvalidInputError("only alpha = 0.05 is tabulated")
    if k not in NEMENYI_Q_05:
        raise InvalidInputError(f"Nemenyi q is tabulated for 2 <= k <= 10, got k={k}")
    return NEMENYI_Q_05[k] * math.sqrt(k * (k + 1) / (6.0 * n))


def friedman_nemenyi(values, alpha: float = 0.05,
                     methods: Optional[Sequence[str]] = None) -> RankComparison:
    """Rank methods per run (lower value is better, ties share the mean rank).

    A method belongs to the best group when its average rank is less than one
    critical difference above the best average rank.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise InvalidInputError("values must be an (n runs, k methods) array")
    n, k = v.shape
    if n < 2 or k < 2:
        raise InvalidInputError("need at least 2 runs and 2 methods")
    methods = tuple(methods) if methods is not None else tuple(f"m{j}" for j in range(k))
    if len(methods) != k:
        raise InvalidInputError("one name per method column required")
    cd = nemenyi_cd(k, n, alpha)
    ranks = stats.rankdata(v, axis=1)
    avg = ranks.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * (np.sum(avg ** 2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(float(chi2), 0.0)
    p = float(stats.chi2.sf(chi2, k - 1))
    best = tuple(bool(a - avg.min() < cd) for a in avg)
    return RankComparison(methods=methods, values=v, average_ranks=avg, statistic=chi2,
                          p_value=p, critical_difference=cd, best_group=best, alpha=alpha)


def _single_method_comparison(values, method) -> RankComparison:
    v = np.asarray(values, dtype=float).reshape(-1, 1)
    return RankComparison(methods=(method,), values=v, average_ranks=np.ones(1), statistic=0.0,
                          p_value=1.0, critical_difference=math.inf, best_group=(True,))


# ---------------------------------------------------------------------------
# Multi-seed experiment


@dataclass
class ExperimentResult:
    methods: tuple
    seeds: tuple
    reports: Dict[str, list] = field(default_factory=dict)
    curves: Dict[str, list] = field(default_factory=dict)
    ranks: Dict[str, RankComparison] = field(default_factory=dict)

    def metric(self, method: str, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports[method]])

    def summary(self) -> dict:
        out = {}
        for m in self.methods:
            out[m] = {}
            for name in ("nll", "brier", "ece", "classwise_ece", "accuracy"):
                vals = self.metric(m, name)
                out[m][name] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "summary": self.summary(),
            "runs": {m: [r.to_dict() for r in self.reports[m]] for m in self.methods},
            "curves": {m: [c.to_rows() for c in self.curves[m]] for m in self.methods},
            "ranks": {k: r.to_dict() for k, r in self.ranks.items()},
        }


def run_experiment(calibration: Dataset, test: Dataset, methods: Sequence[str],
                   seeds: Sequence[int] = tuple(range(10)), draws_per_sequence: int = 5,
                   n_length_bins: int = 10, binning: Optional[BinningSpec] = None,
                   key: str = "time", min_bin: int = 50) -> ExperimentResult:
    """Fit and score every method once per seed.

    For each seed, both sets are re-truncated (when they carry ``group_id``),
    every method is fitted on the calibration sample and scored on the test
    sample. Methods are then ranked across seeds on NLL and on ECE.
    """
    methods = tuple(methods)
    seeds = tuple(sorted(seeds))
    result = ExperimentResult(methods=methods, seeds=seeds,
                              reports={m: [] for m in methods}, curves={m: [] for m in methods})
    for seed in seeds:
        plan = TruncationPlan(draws_per_sequence, seed)
        cal = calibration if calibration.group_id is None else truncate_dataset(calibration, plan, 0)
        tst = test if test.group_id is None else truncate_dataset(test, plan, 1)
        for m in methods:
            model = fit_method(m, cal, key=key, min_bin=min_bin, seed=seed)
            result.reports[m].append(evaluate(tst, binning, calibrator=model))
            result.curves[m].append(ece_by_length(tst, model, n_length_bins, binning))
    for metric in ("nll", "ece"):
        grid = np.column_stack([result.metric(m, metric) for m in methods])
        if len(methods) == 1:
            result.ranks[metric] = _single_method_comparison(grid[:, 0], methods[0])
        else:
            result.ranks[metric] = friedman_nemenyi(grid, methods=methods)
    return result

