import json

import numpy as np
import pytest

from humansim.reporting import (
    RunManifest,
    config_digest,
    file_sha256,
    format_number,
    read_csv,
    write_csv,
    write_metrics_csv,
)


def test_format_number():
    assert format_number(None) == ""
    assert format_number(float("nan")) == ""
    assert format_number(True) == "1" and format_number(np.bool_(False)) == "0"
    assert format_number(np.int64(7)) == "7"
    assert format_number(0.1) == "0.1"
    assert format_number(1 / 3) == "0.333333333"
    assert format_number(-0.0) == "0"
    assert format_number(float("inf")) == "inf"
    assert format_number(1.23456789012e-7) == "1.23456789e-07"
    assert format_number("cam0") == "cam0"


def test_two_rows_give_three_lines_and_round_trip(tmp_path, rng):
    # error metrics live below 0.2, where 9 significant digits keep 1e-9 absolute
    vals = rng.uniform(-0.2, 0.2, size=(2, 3))
    rows = [("cam0", *vals[0]), ("cam1", *vals[1])]
    p = write_csv(str(tmp_path / "m.csv"), ("camera", "a", "b", "c"), rows)
    text = open(p).read()
    assert text.count("\n") == 3 and text.endswith("\n")
    header, back = read_csv(p)
    assert header == ("camera", "a", "b", "c")
    for r, b in zip(rows, back):
        assert b[0] == r[0]
        assert np.max(np.abs(np.array(r[1:]) - np.array(b[1:]))) <= 1e-9


def test_round_trip_relative_precision(tmp_path, rng):
    vals = rng.normal(size=200) * 10.0 ** rng.integers(-12, 12, size=200)
    p = write_csv(str(tmp_path / "m.csv"), ("v",), [(v,) for v in vals])
    back = np.array([r[0] for r in read_csv(p)[1]])
    # half a unit in the ninth significant digit
    assert np.all(np.abs(back - vals) <= 5e-9 * np.abs(vals))


def test_empty_report_writes_nothing(tmp_path):
    p = tmp_path / "m.csv"
    with pytest.raises(ValueError):
        write_csv(str(p), ("a",), [])
    assert not p.exists()
    with pytest.raises(ValueError):
        write_csv(str(p), ("a", "b"), [(1,)])
    assert not p.exists()


def test_missing_cells_round_trip_as_none(tmp_path):
    p = write_metrics_csv((("a", "b"), [(1.5, None)]), str(tmp_path / "m.csv"))
    assert read_csv(p)[1] == [(1.5, None)]


def test_manifest(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "b.csv").write_text("x\n1\n")
    (out / "a.csv").write_text("x\n2\n")
    m = RunManifest("0.1", config_digest("seed: 1\n"), 1, "track")
    m.add_output(str(out / "b.csv"), str(out))
    m.add_output(str(out / "a.csv"), str(out))
    m.finish()
    m.write(str(out / "manifest.json"))
    d = json.loads((out / "manifest.json").read_text())
    assert [o["path"] for o in d["outputs"]] == ["a.csv", "b.csv"]
    assert d["outputs"][0]["sha256"] == file_sha256(str(out / "a.csv"))
    assert d["config_digest"] == config_digest(b"seed: 1\n")
    assert d["master_seed"] == 1 and d["finished"] >= d["started"]
