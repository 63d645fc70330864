import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import yaml

from mtst import checkpoint
from mtst.cli import main
from mtst.data import load_csv

ROOT = Path(__file__).resolve().parents[1]
SCHEMAS = ROOT / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def toy_raw(**train):
    raw = yaml.safe_load((ROOT / "configs" / "toy.yaml").read_text())
    raw["train"].update(epochs=3)
    raw["train"].update(train)
    return raw


def write_config(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    obj = json.loads(err)
    jsonschema.validate(obj, schema("error"))
    return obj


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp, toy_raw())
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "out")]) == 0
    return tmp, cfg, tmp / "out"


def test_train_outputs(trained):
    _, _, out = trained
    metrics = json.loads((out / "metrics.json").read_text())
    jsonschema.validate(metrics, schema("metrics"))
    lines = (out / "history.jsonl").read_text().splitlines()
    assert len(lines) >= 1
    for line in lines:
        jsonschema.validate(json.loads(line), schema("history"))
    assert (out / "checkpoint.mtst").read_bytes()[:8] == b"MTSTCKPT"


def test_train_deterministic(trained, tmp_path):
    _, cfg, out = trained
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for name in ("metrics.json", "checkpoint.mtst", "history.jsonl"):
        assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_evaluate_matches_train_report(trained, tmp_path):
    _, _, out = trained
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.mtst"), "--split", "test", "--out", str(tmp_path)]) == 0
    ev = json.loads((tmp_path / "eval_test.json").read_text())
    jsonschema.validate(ev, schema("eval"))
    report = json.loads((out / "metrics.json").read_text())["test"]
    assert {k: ev[k] for k in report} == report
    assert np.isfinite(ev["mse"]) and np.isfinite(ev["mae"])


def test_evaluate_wrong_variates(trained, tmp_path, capsys):
    _, _, out = trained
    bad = tmp_path / "one.csv"
    bad.write_text("a\n" + "\n".join(str(float(i)) for i in range(200)) + "\n")
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.mtst"), "--dataset", str(bad)]) == 1
    msg = last_error(capsys)["message"]
    assert "expects 2" in msg and "has 1" in msg


def test_evaluate_length_mismatch(trained, capsys):
    _, _, out = trained
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.mtst"), "--pred-len", "9"]) == 1
    assert "T=9" in last_error(capsys)["message"]


def _window_csv(path, rows, header="var0,var1"):
    path.write_text(header + "\n" + "\n".join(",".join(repr(float(v)) for v in r) for r in rows) + "\n")


def test_forecast_header_and_rows(trained, tmp_path, capsys):
    _, _, out = trained
    win = tmp_path / "w.csv"
    _window_csv(win, np.random.default_rng(0).standard_normal((32, 2)), header="var0 , var1")
    dest = tmp_path / "f.csv"
    assert main(["forecast", "--checkpoint", str(out / "checkpoint.mtst"), "--dataset", str(win), "--out", str(dest)]) == 0
    lines = dest.read_text().splitlines()
    assert lines[0] == "var0 , var1"
    assert len(lines) == 1 + 8
    _window_csv(win, np.zeros((31, 2)))
    assert main(["forecast", "--checkpoint", str(out / "checkpoint.mtst"), "--dataset", str(win), "--out", str(dest)]) == 1
    assert "L=32" in last_error(capsys)["message"]


def test_forecast_memorized_window(tmp_path):
    # a noise-free single sine is learned almost exactly; the forecast of a
    # held-out window must then match its stored target
    raw = toy_raw(epochs=150, patience=150, lr=0.003, batch_size=16)
    raw["data"]["synth"] = {"seed": 0, "length": 200, "periods": [16], "amplitudes": [1.0], "variates": 1}
    raw["model"]["ffn_hidden"] = 32
    cfg = write_config(tmp_path, raw)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    train_mse = json.loads((tmp_path / "o" / "history.jsonl").read_text().splitlines()[-1])["train_mse"]
    series = load_csv_from_synth(raw)
    win = tmp_path / "w.csv"
    _window_csv(win, series[150:182], header="var0")
    assert main(["forecast", "--checkpoint", str(tmp_path / "o" / "checkpoint.mtst"), "--dataset", str(win),
                 "--out", str(tmp_path / "f.csv")]) == 0
    pred = load_csv(tmp_path / "f.csv").values
    err = float(np.mean((pred - series[182:190]) ** 2))
    assert err < max(10 * train_mse, 1e-3)


def load_csv_from_synth(raw):
    from mtst.runconfig import synth_from_spec

    return synth_from_spec(raw["data"]["synth"]).values


def test_forecast_keeps_date_column(trained, tmp_path):
    _, _, out = trained
    win = tmp_path / "w.csv"
    rows = np.random.default_rng(1).standard_normal((32, 2))
    win.write_text("date,var0,var1\n" + "\n".join(f"2020-01-01 {i:02d}:00,{float(a)!r},{float(b)!r}" for i, (a, b) in enumerate(rows)) + "\n")
    dest = tmp_path / "f.csv"
    assert main(["forecast", "--checkpoint", str(out / "checkpoint.mtst"), "--dataset", str(win), "--out", str(dest)]) == 0
    got = list(csv.reader(dest.open()))
    assert got[0] == ["date", "var0", "var1"]
    assert [r[0] for r in got[1:]] == [f"t+{k}" for k in range(1, 9)]


def test_missing_dataset_path(tmp_path, capsys):
    raw = toy_raw()
    raw["data"] = {"path": "nowhere/data.csv"}
    cfg = write_config(tmp_path, raw)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "nowhere/data.csv" in last_error(capsys)["message"]


def test_bad_config_keys(tmp_path, capsys):
    raw = toy_raw()
    raw["model"]["patchez"] = [4]
    cfg = write_config(tmp_path, raw)
    assert main(["train", "--config", str(cfg)]) == 1
    assert "patchez" in last_error(capsys)["message"]


def test_ablate_report(tmp_path):
    raw = toy_raw(epochs=1)
    cfg = write_config(tmp_path, raw)
    assert main(["ablate", "--config", str(cfg), "--mode", "sinape", "--seeds", "2", "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "ablation_sinape.json").read_text())
    jsonschema.validate(rep, schema("ablation"))
    assert rep["variant"]["pe"] == "SinAPE" and rep["base"]["pe"] == "RPE"
    assert len(rep["deltas"]) == 2


def test_ablate_no_low_res_on_three_branches(tmp_path):
    raw = toy_raw(epochs=1)
    raw["model"]["patches"] = [4, 8, 16]
    raw["model"]["strides"] = [2, 4, 8]
    cfg = write_config(tmp_path, raw)
    assert main(["ablate", "--config", str(cfg), "--mode", "no-low-res", "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "ablation_no-low-res.json").read_text())
    assert rep["variant"]["patches"] == [[4, 8]]


def test_ablate_bad_mode_lists_modes(tmp_path, capsys):
    cfg = write_config(tmp_path, toy_raw())
    assert main(["ablate", "--config", str(cfg), "--mode", "nobranch"]) == 1
    assert "no-low-res" in last_error(capsys)["message"]


def test_synth_round_trip(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["synth", "--seed", "3", "--length", "300", "--periods", "16,48", "--amplitudes", "1,0.5"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    raw = toy_raw(epochs=1)
    raw["data"] = {"path": str(a)}
    cfg = write_config(tmp_path, raw)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_synth_rejects_negative_sigma(tmp_path, capsys):
    assert main(["synth", "--periods", "16", "--sigma", "-1", "--out", str(tmp_path / "x.csv")]) == 1
    assert "sigma" in last_error(capsys)["message"]


def test_threads_flag_and_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("MTST_OUT", str(tmp_path / "env_out"))
    cfg = write_config(tmp_path, toy_raw(epochs=1))
    assert main(["--threads", "1", "train", "--config", str(cfg)]) == 0
    assert (tmp_path / "env_out" / "metrics.json").is_file()


def test_checkpoint_records_config_hash(trained):
    _, _, out = trained
    _, block = checkpoint.load(out / "checkpoint.mtst")
    assert block["config_hash"] == json.loads((out / "metrics.json").read_text())["config_hash"]
