import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from fcdtt.cli import EXIT_DATA, EXIT_INPUT, EXIT_OK, EXIT_USAGE, build_parser, main
from fcdtt.ingestion import band_contains, generate_synthetic, load_dataset, save_dataset, scenario_onsets
from scenarios import FORECAST_ONSET_OFFSETS, wave_scenario

SCENARIO = {
    "route_id": "R1", "n_links": 20, "link_length_m": 1000.0, "speed_limit_kmh": 100.0,
    "start_date": "2016-02-01", "end_date": "2016-02-29", "days_of_week": ["Mon"],
    "tod_range_s": [18000, 43200], "mean_sample_size": 8.0, "route_mean_sample_size": 4.0,
    "events": [{"onset_s": 25200, "origin_m": 20000.0, "duration_s": 7200, "speed_drop_kmh": 50.0,
                "onset_offsets_s": FORECAST_ONSET_OFFSETS}],
}


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def body(path):
    return [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]


def header(path):
    return dict(ln[2:].split(": ", 1) for ln in Path(path).read_text().splitlines()
                if ln.startswith("# ") and ": " in ln)


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    sc = root / "scenario.json"
    sc.write_text(json.dumps(SCENARIO))
    out = root / "data"
    assert main(["synth", "--scenario", str(sc), "--seed", "0", "--out", str(out)]) == EXIT_OK
    return root, out / "records.jsonl"


def test_synth_outputs(synth, tmp_path):
    root, records = synth
    assert (records.parent / "geometry.json").exists()
    again = tmp_path / "again"
    assert main(["synth", "--scenario", str(root / "scenario.json"), "--out", str(again)]) == EXIT_OK
    assert digest(again / "records.jsonl") == digest(records)
    assert digest(again / "geometry.json") == digest(records.parent / "geometry.json")
    assert len(load_dataset(records, records.parent / "geometry.json").dates) == 5


def test_synth_missing_scenario(tmp_path, capsys):
    code = main(["synth", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == EXIT_INPUT and code != 0
    assert "not found" in capsys.readouterr().err


def test_help_defaults():
    sub = build_parser()._subs
    field_help = sub["field"].format_help()
    for val in ("70.0", "-15.0", "50.0", "10.0"):
        assert f"(default: {val})" in field_help
    assert "(default: 500)" in sub["estimate"].format_help()


def test_field_header_and_band(tmp_path):
    sc = wave_scenario()
    save_dataset(generate_synthetic(sc, seed=0), tmp_path / "r.jsonl", tmp_path / "geometry.json")
    out = tmp_path / "grid.csv"
    assert main(["field", "--dataset", str(tmp_path / "r.jsonl"), "--date", "2016-02-01", "--dx", "500",
                 "--dt", "120", "--out", str(out)]) == EXIT_OK
    h = header(out)
    assert (h["c_free_kmh"], h["c_cong_kmh"], h["v_c_kmh"], h["delta_v_kmh"]) == ("70.0", "-15.0", "50.0", "10.0")
    rows = np.array([list(map(float, ln.split(","))) for ln in body(out)[1:]])
    xs, ts = np.unique(rows[:, 0]), np.unique(rows[:, 1])
    speed = rows[:, 2].reshape(xs.size, ts.size)
    congested = speed < 50.0
    _, n = ndimage.label(congested)
    assert n == 1
    (onset,) = scenario_onsets(sc, 0)[sc.dates[0]]
    truth = band_contains(sc.events[0], onset, xs[:, None], ts[None, :])
    agree = (congested == truth).mean()
    assert agree > 0.95 and congested.sum() > 0.5 * truth.sum()


def test_field_constant_day(tmp_path):
    doc = dict(SCENARIO, events=[], free_spread=0.0, median_noise=0.0, end_date="2016-02-01")
    sc = tmp_path / "flat.json"
    sc.write_text(json.dumps(doc))
    assert main(["synth", "--scenario", str(sc), "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "grid.csv"
    assert main(["field", "--dataset", str(tmp_path / "records.jsonl"), "--date", "2016-02-01",
                 "--out", str(out)]) == EXIT_OK
    speeds = {ln.split(",")[2] for ln in body(out)[1:]}
    assert speeds == {"100.000000"}


def test_field_unknown_route_or_date(synth, capsys):
    _, records = synth
    assert main(["field", "--dataset", str(records), "--date", "2016-02-22", "--route", "R9"]) == EXIT_INPUT
    assert main(["field", "--dataset", str(records), "--date", "2016-03-07"]) == EXIT_DATA
    assert "2016-03-07" in capsys.readouterr().err


def test_estimate_sweep(synth, tmp_path):
    _, records = synth
    out = tmp_path / "est.csv"
    assert main(["estimate", "--dataset", str(records), "--date", "2016-02-01", "--departure", "00:00-24:00",
                 "--step", "20", "--runs", "20", "--out", str(out)]) == EXIT_OK
    assert len(body(out)) == 1 + 72
    h = header(out)
    assert h["runs"] == "20" and h["scheme"] == "5min"


def test_estimate_usage_errors(synth, capsys):
    _, records = synth
    base = ["estimate", "--dataset", str(records), "--date", "2016-02-01", "--departure", "08:00"]
    assert main(base + ["--alpha", "0"]) == EXIT_USAGE
    assert main(base + ["--alpha", "1.2"]) == EXIT_USAGE
    assert "alpha" in capsys.readouterr().err
    assert main(base + ["--departure", "25:00"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(base + ["--scheme", "7min"])
    assert err.value.code == EXIT_USAGE


def test_estimate_default_runs(synth, tmp_path):
    _, records = synth
    out = tmp_path / "one.csv"
    assert main(["estimate", "--dataset", str(records), "--date", "2016-02-01", "--departure", "06:00",
                 "--out", str(out)]) == EXIT_OK
    assert header(out)["runs"] == "500"


def test_forecast_prev_week_header(synth, tmp_path):
    _, records = synth
    out = tmp_path / "fc.csv"
    assert main(["forecast", "--dataset", str(records), "--date", "2016-02-29", "--departure", "07:30",
                 "--strategy", "prev-week", "--runs", "100", "--out", str(out)]) == EXIT_OK
    assert header(out)["historical_days[prev-week]"] == "2016-02-22"
    rows = body(out)[1:]
    assert [r.split(",")[0] for r in rows] == ["reference", "prev-week"]
    assert rows[1].split(",")[1] == "1"


def test_forecast_all_strategies_shape(synth, tmp_path):
    _, records = synth
    out = tmp_path / "all.csv"
    assert main(["forecast", "--dataset", str(records), "--date", "2016-02-29", "--departure", "07:30",
                 "--all-strategies", "--runs", "100", "--out", str(out)]) == EXIT_OK
    rows = [r.split(",") for r in body(out)[1:]]
    forecasts = [r for r in rows if r[0] != "reference"]
    assert len(forecasts) == 9
    assert {(r[0], r[2]) for r in forecasts} == {
        (s, k) for s in ("prev-week", "prev-month", "prev-3-months") for k in ("5min", "20min", "demand5")}


def test_forecast_insufficient_history(synth, capsys):
    _, records = synth
    code = main(["forecast", "--dataset", str(records), "--date", "2016-02-29", "--departure", "07:30",
                 "--strategy", "prev-month", "--exclude-dates", "2016-02-22,2016-02-15,2016-02-08,2016-02-01"])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert "insufficient data" in err and "2016-02-15" in err


def test_config_file_and_override(synth, tmp_path):
    _, records = synth
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"dataset": str(records), "date": "2016-02-01", "departure": "08:00",
                                "runs": 30, "alpha": 0.5}))
    out = tmp_path / "c.csv"
    assert main(["estimate", "--config", str(conf), "--alpha", "0.2", "--out", str(out)]) == EXIT_OK
    h = header(out)
    assert h["runs"] == "30" and h["alpha"] == "0.2"
    conf.write_text(json.dumps({"bogus": 1}))
    assert main(["estimate", "--config", str(conf)]) == EXIT_USAGE


def test_console_script_entry(synth, tmp_path):
    _, records = synth
    res = subprocess.run([sys.executable, "-m", "fcdtt.cli", "estimate", "--dataset", str(records),
                          "--date", "2016-02-01", "--departure", "08:00", "--runs", "10"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "mean_tt_s" in res.stdout
