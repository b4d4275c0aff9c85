"""Command-line front end: ``tempcal {fit,apply,evaluate,curve,reliability,compare,synth}``.

Exit codes: 0 success, 1 usage, 2 input or format error, 3 numerical or fit failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from typing import List, Optional

import numpy as np

from .calibrators import Calibrator
from .core import (
    CalibrationError,
    DegenerateFitError,
    InsufficientDataError,
    InvalidInputError,
    OptimizationError,
)
from .harness import (
    METHODS,
    SyntheticSpec,
    TruncationPlan,
    ece_by_length,
    fit_method,
    friedman_nemenyi,
    generate_synthetic,
    reliability_data,
    truncate_dataset,
)
from .metrics import BinningSpec, evaluate, nll
from .persistence import (
    dataset_to_lines,
    load_calibrator,
    read_records,
    save_calibrator,
    write_csv,
    write_lines,
)
from .temporal import (
    ContinuousTemporalCalibrator,
    DiscreteTemporalCalibrator,
    ExponentialTemperature,
)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_FIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _binning(args, default="width") -> BinningSpec:
    strategy = {"width": "equal_width", "freq": "equal_frequency"}[args.bin_strategy or default]
    return BinningSpec(strategy, args.bins)


def _load_optional_calibrator(path) -> Optional[Calibrator]:
    return None if path is None else load_calibrator(path)


def _uses_time(model) -> bool:
    if isinstance(model, ContinuousTemporalCalibrator):
        return True
    return isinstance(model, DiscreteTemporalCalibrator) and model.key.kind == "time"


def _read(path, model=None):
    rf = read_records(path)
    if model is not None and _uses_time(model) and rf.t_missing:
        warnings.warn(f"{rf.t_missing} records lack t; using t = 0")
    return rf


def cmd_fit(args) -> int:
    rf = _read(args.input)
    cal = rf.dataset
    binning = _binning(args, default="freq") if args.method == "histogram" else None
    model = fit_method(args.method, cal, key=args.key, min_bin=args.min_bin,
                       binning=binning, seed=args.seed)
    before = nll(cal.probabilities(), cal.labels)
    after = nll(model.predict_dataset(cal), cal.labels)
    save_calibrator(model, args.output, method=args.method, seed=args.seed)
    summary = {"method": args.method, "kind": model.kind, "n": len(cal),
               "nll_before": before, "nll_after": after}
    if args.json:
        print(json.dumps(summary))
    else:
        print(f"method={args.method} n={len(cal)} nll_before={before:.6f} nll_after={after:.6f}")
    return EXIT_OK


def cmd_apply(args) -> int:
    model = load_calibrator(args.calibrator)
    rf = _read(args.input, model)
    probs = model.predict_dataset(rf.dataset)
    lines = []
    for obj, p in zip(rf.raw, probs):
        out = dict(obj)
        out["probs"] = p.tolist()
        lines.append(json.dumps(out))
    write_lines(args.output, lines)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_optional_calibrator(args.calibrator)
    rf = _read(args.input, model)
    report = evaluate(rf.dataset, _binning(args), calibrator=model)
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        for name in ("nll", "brier", "ece", "classwise_ece", "accuracy"):
            print(f"{name:<14}{getattr(report, name):.6f}")
        print(f"{'n':<14}{report.n}")
    return EXIT_OK


def cmd_curve(args) -> int:
    model = _load_optional_calibrator(args.calibrator)
    rf = _read(args.input, model)
    curve = ece_by_length(rf.dataset, model, args.length_bins, _binning(args))
    rows = [{"bin": i, **row} for i, row in enumerate(curve.to_rows())]
    write_csv(args.output, rows, ["bin", "t_min", "t_max", "count", "ece", "nll"])
    return EXIT_OK


def cmd_reliability(args) -> int:
    model = _load_optional_calibrator(args.calibrator)
    rf = _read(args.input, model)
    data = reliability_data(rf.dataset, model, args.bins)
    write_csv(args.output, data.to_rows(), ["bin", "confidence", "accuracy", "count"])
    return EXIT_OK


def _read_value_grid(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidInputError("value grid needs a header row and at least one run")
    header = [h.strip() for h in rows[0]]
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"value grid: {exc}") from None
    if values.ndim != 2 or values.shape[1] != len(header):
        raise InvalidInputError("every run needs one value per method")
    return header, values


def cmd_compare(args) -> int:
    methods, values = _read_value_grid(args.input)
    rc = friedman_nemenyi(values, alpha=args.alpha, methods=methods)
    rows = [{**row, "critical_difference": rc.critical_difference,
             "friedman_statistic": rc.statistic, "p_value": rc.p_value}
            for row in rc.to_rows()]
    write_csv(args.output, rows, ["method", "mean", "average_rank", "best_group",
                                  "critical_difference", "friedman_statistic", "p_value"])
    print(f"k={len(methods)} n={len(values)} critical_difference={rc.critical_difference:.4f} "
          f"p_value={rc.p_value:.4g}")
    return EXIT_OK


def _parse_floats(text, count, flag):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag} expects {count} comma-separated numbers") from None
    if len(vals) != count:
        raise UsageError(f"{flag} expects {count} comma-separated numbers")
    return vals


def _parse_step_taus(text):
    table = {}
    for item in text.split(","):
        try:
            k, v = item.split(":")
            table[int(k)] = float(v)
        except ValueError:
            raise UsageError("--step-taus expects entries like 1:0.5,2:1.0") from None
    return table


def cmd_synth(args) -> int:
    schedule = None
    steps = None
    planted = [args.tau is not None, args.schedule is not None, args.step_taus is not None]
    if sum(planted) > 1:
        raise UsageError("use at most one of --tau, --schedule, --step-taus")
    if args.tau is not None:
        if args.tau <= 0:
            raise UsageError("--tau must be positive")
        schedule = ExponentialTemperature(alpha=0.0, beta_raw=0.0, gamma=1.0 / args.tau,
                                          t_max=float(args.max_len))
    elif args.schedule is not None:
        a, b, g, s = _parse_floats(args.schedule, 4, "--schedule")
        if b < 0:
            raise UsageError("--schedule beta must be nonnegative")
        schedule = ExponentialTemperature(alpha=a, beta_raw=b ** 0.5, gamma=g, s=s,
                                          t_max=float(args.max_len))
    elif args.step_taus is not None:
        steps = _parse_step_taus(args.step_taus)
    spec = SyntheticSpec(n_sequences=args.sequences, max_len=args.max_len, min_len=args.min_len,
                         schedule=schedule, step_temperatures=steps, num_classes=args.classes,
                         logit_scale=args.scale, seed=args.seed)
    dataset, truth = generate_synthetic(spec)
    if args.truncate:
        dataset = truncate_dataset(dataset, TruncationPlan(args.truncate, args.seed))
    write_lines(args.output, dataset_to_lines(dataset))
    if args.truth:
        g = spec.inverse_temperature(dataset.t)
        write_csv(args.truth, [{"index": i, "t": float(ti), "inverse_temperature": float(gi)}
                               for i, (ti, gi) in enumerate(zip(dataset.t, g))],
                  ["index", "t", "inverse_temperature"])
    return EXIT_OK


def _common(p, bins=True):
    p.add_argument("--input", required=True, help="line-delimited JSON records")
    if bins:
        p.add_argument("--bins", type=int, default=10, metavar="K", help="confidence bins (default 10)")
        p.add_argument("--bin-strategy", choices=["width", "freq"],
                       help="equal-width or equal-frequency confidence bins "
                            "(default width; freq for histogram fits)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a calibrator and save it as JSON")
    _common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--output", required=True)
    p.add_argument("--key", choices=["time", "measure"], default="time",
                   help="temporal-discrete: index by t or by |measure|")
    p.add_argument("--min-bin", type=int, default=50, metavar="N",
                   help="temporal-discrete: smallest group fitted on its own (default 50)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print the summary as one JSON object")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="append calibrated probabilities to each record")
    _common(p, bins=False)
    p.add_argument("--calibrator", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("evaluate", help="NLL, Brier, ECE, classwise-ECE and accuracy")
    _common(p)
    p.add_argument("--calibrator", help="omit to score the uncalibrated softmax")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "curve", help="ECE per equal-frequency length bin",
        description="Writes CSV columns: bin, t_min, t_max, count, ece, nll.")
    _common(p)
    p.add_argument("--calibrator")
    p.add_argument("--length-bins", type=int, default=10)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser(
        "reliability", help="reliability-diagram points",
        description="Equal-frequency confidence bins. Writes CSV columns: "
                    "bin, confidence, accuracy, count.")
    p.add_argument("--input", required=True)
    p.add_argument("--calibrator")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser(
        "compare", help="Friedman test with Nemenyi critical difference",
        description="Input CSV: header of method names, one row per run, lower is better. "
                    "Writes CSV columns: method, mean, average_rank, best_group, "
                    "critical_difference, friedman_statistic, p_value.")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "synth", help="synthetic records with a planted calibration map",
        description="Writes line-delimited JSON records; --truth adds a CSV with columns "
                    "index, t, inverse_temperature.")
    p.add_argument("--output", required=True)
    p.add_argument("--sequences", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--scale", type=float, default=4.0, help="logits drawn from U[-scale, scale]")
    p.add_argument("--tau", type=float, help="constant planted temperature")
    p.add_argument("--schedule", metavar="A,B,G,S",
                   help="planted inverse temperature G - A*exp(-B*t/max_len - S)")
    p.add_argument("--step-taus", metavar="T:TAU,...", help="planted temperature per step")
    p.add_argument("--truncate", type=int, metavar="DRAWS",
                   help="keep DRAWS random prefixes per sequence instead of all of them")
    p.add_argument("--truth", help="optional CSV of planted inverse temperatures")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def _format_warning(message, category, filename, lineno, line=None):
    return f"warning: {message}\n"


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    warnings.formatwarning = _format_warning
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tempcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateFitError, OptimizationError, InsufficientDataError) as exc:
        print(f"tempcal: fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (InvalidInputError, OSError) as exc:
        print(f"tempcal: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CalibrationError, FloatingPointError) as exc:
        print(f"tempcal: error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
