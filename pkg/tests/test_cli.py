import contextlib
import csv
import json
import math
import subprocess
import sys
import warnings

import numpy as np
import pytest

from tempcal import load_calibrator, softmax
from tempcal.cli import main
from tempcal.persistence import read_records


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "records.jsonl"
    code = main(["synth", "--output", str(path), "--sequences", "300", "--max-len", "12",
                 "--schedule", "1,3,2,0", "--seed", "5"])
    assert code == 0
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_is_deterministic(tmp_path):
    args = ["--sequences", "50", "--max-len", "6", "--tau", "2.0", "--truncate", "3", "--seed", "1"]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["synth", "--output", str(a), "--truth", str(tmp_path / "ta.csv"), *args]) == 0
    assert main(["synth", "--output", str(b), "--truth", str(tmp_path / "tb.csv"), *args]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "ta.csv").read_bytes() == (tmp_path / "tb.csv").read_bytes()
    assert len(a.read_text().splitlines()) == 150
    truth = _rows(tmp_path / "ta.csv")
    assert {float(r["inverse_temperature"]) for r in truth} == {0.5}


def test_synth_conflicting_plants_is_usage_error(tmp_path, capsys):
    code = main(["synth", "--output", str(tmp_path / "x"), "--tau", "2", "--step-taus", "1:0.5"])
    assert code == 1
    assert "at most one" in capsys.readouterr().err


def test_fit_temperature_and_summary(tmp_path, synth, capsys):
    out = tmp_path / "temp.json"
    assert main(["fit", "--input", str(synth), "--method", "temperature", "--output", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["nll_after"] <= summary["nll_before"]
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == 1 and doc["kind"] == "temperature" and "tau" in doc["parameters"]
    assert doc["meta"]["n"] == summary["n"]


@pytest.mark.parametrize("method", ["identity", "temperature", "platt", "platt-ovr", "vector", "matrix",
                                    "dirichlet", "beta", "histogram", "isotonic",
                                    "temporal-discrete", "temporal-continuous"])
def test_save_load_apply_equals_direct(tmp_path, synth, method):
    from tempcal.harness import fit_method
    out = tmp_path / "model.json"
    assert main(["fit", "--input", str(synth), "--method", method, "--output", str(out),
                 "--min-bin", "20"]) == 0
    data = read_records(synth).dataset
    loaded = load_calibrator(out)
    kwargs = {"min_bin": 20}
    if method == "histogram":
        from tempcal import BinningSpec
        kwargs["binning"] = BinningSpec("equal_frequency", 10)
    with _quiet():
        direct = fit_method(method, data, **kwargs)
    assert loaded == direct
    assert np.array_equal(loaded.predict_dataset(data), direct.predict_dataset(data))
    applied = tmp_path / "applied.jsonl"
    assert main(["apply", "--input", str(synth), "--calibrator", str(out), "--output", str(applied)]) == 0
    lines = applied.read_text().splitlines()
    src = synth.read_text().splitlines()
    assert len(lines) == len(src)
    probs = np.array([json.loads(line)["probs"] for line in lines])
    assert np.array_equal(probs, direct.predict_dataset(data))
    first = json.loads(lines[0])
    assert {k: v for k, v in first.items() if k != "probs"} == json.loads(src[0])


@contextlib.contextmanager
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def test_fit_is_byte_deterministic(tmp_path, synth):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["fit", "--input", str(synth), "--method", "temporal-continuous",
                     "--output", str(path), "--seed", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_identity_apply_is_softmax(tmp_path):
    rec = tmp_path / "r.jsonl"
    rec.write_text('{"logits": [1.0, 2.0, -1.0], "label": 1}\n{"logits": [0.5, 0.5, 0.5], "label": 2}\n')
    model = tmp_path / "id.json"
    assert main(["fit", "--input", str(rec), "--method", "identity", "--output", str(model)]) == 0
    out = tmp_path / "o.jsonl"
    assert main(["apply", "--input", str(rec), "--calibrator", str(model), "--output", str(out)]) == 0
    probs = [json.loads(line)["probs"] for line in out.read_text().splitlines()]
    assert np.array_equal(np.array(probs), softmax(np.array([[1.0, 2.0, -1.0], [0.5, 0.5, 0.5]])))


def test_temporal_apply_without_t_warns(tmp_path, synth, capsys):
    model = tmp_path / "c.json"
    main(["fit", "--input", str(synth), "--method", "temporal-continuous", "--output", str(model)])
    rec = tmp_path / "no_t.jsonl"
    rec.write_text('{"logits": [0.0, 1.0], "label": 1}\n')
    res = subprocess.run([sys.executable, "-m", "tempcal", "apply", "--input", str(rec),
                          "--calibrator", str(model), "--output", str(tmp_path / "o.jsonl")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout == ""
    assert res.stderr.startswith("warning: 1 records lack t")


def test_apply_dimension_mismatch_exits_2(tmp_path, synth):
    model = tmp_path / "v.json"
    main(["fit", "--input", str(synth), "--method", "vector", "--output", str(model)])
    rec = tmp_path / "three.jsonl"
    rec.write_text('{"logits": [0.0, 1.0, 2.0], "label": 1}\n')
    assert main(["apply", "--input", str(rec), "--calibrator", str(model),
                 "--output", str(tmp_path / "o.jsonl")]) == 2


def test_evaluate_outputs(tmp_path, synth, capsys):
    assert main(["evaluate", "--input", str(synth), "--json"]) == 0
    width = json.loads(capsys.readouterr().out)
    assert set(width) >= {"nll", "brier", "ece", "classwise_ece", "accuracy", "n"}
    assert main(["evaluate", "--input", str(synth), "--json", "--bins", "3", "--bin-strategy", "freq"]) == 0
    freq = json.loads(capsys.readouterr().out)
    assert freq["nll"] == width["nll"] and freq["brier"] == width["brier"]
    assert freq["ece"] != width["ece"]
    assert main(["evaluate", "--input", str(synth)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("nll")


def test_evaluate_confident_file(tmp_path, capsys):
    rec = tmp_path / "c.jsonl"
    rec.write_text('{"logits": [60, 0], "label": 0}\n{"logits": [0, 70], "label": 1}\n')
    assert main(["evaluate", "--input", str(rec), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ece"] < 1e-12 and report["accuracy"] == 1.0


def test_curve_one_bin_matches_evaluate(tmp_path, synth, capsys):
    out = tmp_path / "curve.csv"
    assert main(["curve", "--input", str(synth), "--length-bins", "1", "--output", str(out)]) == 0
    main(["evaluate", "--input", str(synth), "--json"])
    report = json.loads(capsys.readouterr().out)
    rows = _rows(out)
    assert list(rows[0]) == ["bin", "t_min", "t_max", "count", "ece", "nll"]
    assert float(rows[0]["ece"]) == pytest.approx(report["ece"], abs=1e-12)


def test_curve_too_many_bins_exits_3(tmp_path):
    rec = tmp_path / "r.jsonl"
    rec.write_text('{"logits": [0, 1], "label": 0, "t": 1}\n')
    assert main(["curve", "--input", str(rec), "--length-bins", "5", "--output", str(tmp_path / "c.csv")]) == 3


def test_reliability_csv(tmp_path, synth):
    out = tmp_path / "rel.csv"
    assert main(["reliability", "--input", str(synth), "--bins", "5", "--output", str(out)]) == 0
    rows = _rows(out)
    assert list(rows[0]) == ["bin", "confidence", "accuracy", "count"] and len(rows) == 5


def test_compare_reports_ten_by_three_cd(tmp_path, capsys):
    grid = tmp_path / "grid.csv"
    rng = np.random.default_rng(0)
    lines = ["identity,temperature,temporal"] + [",".join(f"{v:.4f}" for v in rng.random(3)) for _ in range(10)]
    grid.write_text("\n".join(lines) + "\n")
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--input", str(grid), "--output", str(out)]) == 0
    rows = _rows(out)
    assert [r["method"] for r in rows] == ["identity", "temperature", "temporal"]
    assert float(rows[0]["critical_difference"]) == pytest.approx(1.047, abs=1e-3)
    assert "critical_difference=1.0478" in capsys.readouterr().out


def test_compare_bad_alpha_is_input_error(tmp_path):
    grid = tmp_path / "grid.csv"
    grid.write_text("a,b\n1,2\n2,1\n")
    assert main(["compare", "--input", str(grid), "--output", str(tmp_path / "o"), "--alpha", "0.1"]) == 2


def test_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.jsonl"
    good.write_text('{"logits": [0, 1], "label": 1}\n{"logits": [1, 0], "label": 1}\n')
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--input", str(good), "--method", "spline", "--output", str(tmp_path / "m")])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"logits": [0, 1], "label": 1}\n{"logits": [0, 1, 2], "label": 1}\n')
    assert main(["evaluate", "--input", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    garbage = tmp_path / "garbage.jsonl"
    garbage.write_text('{"logits": [0, 1], "label": 1}\nnot json\n')
    assert main(["evaluate", "--input", str(garbage)]) == 2
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["evaluate", "--input", str(empty)]) == 2
    assert main(["evaluate", "--input", str(tmp_path / "missing.jsonl")]) == 2

    one_class = tmp_path / "one.jsonl"
    one_class.write_text('{"logits": [0, 1], "label": 1}\n{"logits": [1, 0], "label": 1}\n')
    assert main(["fit", "--input", str(one_class), "--method", "temperature",
                 "--output", str(tmp_path / "m.json")]) == 3


def test_unknown_schema_version_exits_2(tmp_path, synth):
    model = tmp_path / "m.json"
    main(["fit", "--input", str(synth), "--method", "temperature", "--output", str(model)])
    doc = json.loads(model.read_text())
    doc["schema_version"] = 99
    model.write_text(json.dumps(doc))
    assert main(["evaluate", "--input", str(synth), "--calibrator", str(model)]) == 2


@pytest.mark.parametrize("line,fragment", [
    ('{"logits": [0, 1]}', "label"),
    ('{"logits": [0, "x"], "label": 0}', "finite numbers"),
    ('{"logits": [0, 1], "label": 3}', "out of range"),
    ('{"logits": [0, 1], "label": 0, "t": -1}', "nonnegative"),
    ('{"logits": [0, 1], "label": 0, "t": 5, "total_len": 3}', "total_len"),
    ('[1, 2]', "object"),
])
def test_record_errors_name_the_line(tmp_path, capsys, line, fragment):
    path = tmp_path / "r.jsonl"
    path.write_text('{"logits": [0, 1], "label": 0}\n' + line + "\n")
    assert main(["evaluate", "--input", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and fragment in err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tempcal", "fit"], capture_output=True, text=True)
    assert res.returncode == 1 and "usage" in res.stderr
    res = subprocess.run([sys.executable, "-m", "tempcal", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("fit", "apply", "evaluate", "curve", "reliability", "compare", "synth"):
        assert verb in res.stdout


def test_optional_fields_round_trip(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"logits": [0, 1], "label": 0, "t": 2, "total_len": 4, "measure": -3, '
                    '"run_id": 1, "group_id": "g7"}\n{"logits": [0.5, 1], "label": 1}\n')
    ds = read_records(path).dataset
    rec = ds.record(0)
    assert (rec.t, rec.total_len, rec.measure, rec.run_id, rec.group_id) == (2.0, 4.0, -3.0, 1, "g7")
    other = ds.record(1)
    assert other.t == 0.0 and other.measure is None and other.group_id is None
    assert math.isnan(ds.total_len[1])
