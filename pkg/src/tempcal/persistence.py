"""Line-delimited record files and versioned calibrator files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from .calibrators import Calibrator, calibrator_from_dict, calibrator_to_dict
from .core import Dataset, InvalidInputError

SCHEMA_VERSION = 1

RECORD_FIELDS = ("logits", "label", "t", "total_len", "measure", "run_id", "group_id")


class RecordFormatError(InvalidInputError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class RecordFile:
    dataset: Dataset
    raw: List[dict]
    t_missing: int


def _number(obj, name, line, integer=False):
    v = obj[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise RecordFormatError(line, f"{name} must be a number")
    if integer and (not float(v).is_integer()):
        raise RecordFormatError(line, f"{name} must be an integer")
    if not math.isfinite(v):
        raise RecordFormatError(line, f"{name} must be finite")
    return int(v) if integer else float(v)


def parse_records(lines: Iterable[str]) -> RecordFile:
    logits, labels, t, total_len, measure, run_id, group_id, raw = ([] for _ in range(8))
    width = None
    t_missing = 0
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RecordFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise RecordFormatError(lineno, "expected a JSON object")
        for name in ("logits", "label"):
            if name not in obj:
                raise RecordFormatError(lineno, f"missing required field {name!r}")
        z = obj["logits"]
        if not isinstance(z, list) or len(z) < 2:
            raise RecordFormatError(lineno, "logits must be an array of at least two numbers")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) for v in z):
            raise RecordFormatError(lineno, "logits must be finite numbers")
        if width is None:
            width = len(z)
        elif len(z) != width:
            raise RecordFormatError(lineno, f"expected {width} logits, got {len(z)}")
        y = _number(obj, "label", lineno, integer=True)
        if not 0 <= y < width:
            raise RecordFormatError(lineno, f"label {y} out of range")
        if obj.get("t") is None:
            t_missing += 1
            ti = 0.0
        else:
            ti = _number(obj, "t", lineno)
            if ti < 0:
                raise RecordFormatError(lineno, "t must be nonnegative")
        tl = None if obj.get("total_len") is None else _number(obj, "total_len", lineno)
        if tl is not None and (tl <= 0 or ti > tl):
            raise RecordFormatError(lineno, "total_len must be positive and at least t")
        logits.append([float(v) for v in z])
        labels.append(y)
        t.append(ti)
        total_len.append(tl)
        measure.append(None if obj.get("measure") is None else _number(obj, "measure", lineno))
        run_id.append(None if obj.get("run_id") is None else _number(obj, "run_id", lineno, integer=True))
        group_id.append(None if obj.get("group_id") is None else str(obj["group_id"]))
        raw.append(obj)
    if width is None:
        raise InvalidInputError("record file is empty")

    def optional(col, missing=None):
        if all(v is None for v in col):
            return None
        return [missing if v is None else v for v in col]

    ds = Dataset(logits, labels, t=t, total_len=optional(total_len, np.nan),
                 measure=optional(measure, np.nan), run_id=optional(run_id),
                 group_id=optional(group_id))
    return RecordFile(dataset=ds, raw=raw, t_missing=t_missing)


def read_records(path) -> RecordFile:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh)


def dataset_to_lines(dataset: Dataset) -> List[str]:
    lines = []
    for r in dataset.records():
        obj = {"logits": list(r.logits), "label": r.label, "t": r.t}
        for name in ("total_len", "measure", "run_id", "group_id"):
            v = getattr(r, name)
            if v is not None:
                obj[name] = v
        lines.append(json.dumps(obj))
    return lines


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary sibling file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_lines(path, lines: Iterable[str]) -> None:
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_csv(path, rows: List[dict], columns: Optional[List[str]] = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def calibrator_document(model: Calibrator, **fit_meta) -> dict:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(calibrator_to_dict(model))
    doc["meta"].update(fit_meta)
    return doc


def dumps_calibrator(model: Calibrator, **fit_meta) -> str:
    # json writes floats with repr, the shortest string that round-trips
    return json.dumps(calibrator_document(model, **fit_meta), indent=2) + "\n"


def loads_calibrator(text: str) -> Calibrator:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"calibrator file is not valid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or "kind" not in doc:
        raise InvalidInputError("calibrator file lacks a kind tag")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported calibrator schema_version {version!r}")
    try:
        return calibrator_from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed calibrator parameters ({exc})") from None


def save_calibrator(model: Calibrator, path, **fit_meta) -> None:
    atomic_write_text(path, dumps_calibrator(model, **fit_meta))


def load_calibrator(path) -> Calibrator:
    with open(path, encoding="utf-8") as fh:
        return loads_calibrator(fh.read())
