import json

import numpy as np
import pytest

from ppelm import cli
from ppelm.datasets import load_libsvm, normalize
from ppelm.elm import Activation, load_model, train_fixed_point
from ppelm.fieldcodec import FieldConfig
from ppelm.report import read_report_csv


def _err(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_run_writes_report_row(data_dir, tmp_path, capsys):
    out = tmp_path / "report.csv"
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "3", "--hidden", "20", "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "heart: k=3" in printed
    assert "identical=yes" in printed
    rows = read_report_csv(out)
    assert len(rows) == 1
    row = rows[0]
    assert row["dataset"] == "heart"
    assert row["k"] == "3" and row["L"] == "20" and row["seed"] == "42"
    assert row["models_identical"] == "true"
    for col in ("train_accuracy_secure", "train_accuracy_plain",
                "train_accuracy_float"):
        assert 0.0 <= float(row[col]) <= 1.0
    assert float(row["wall_time_total"]) >= float(row["wall_time_protocol"])


def test_run_model_out_round_trip(data_dir, tmp_path):
    model_path = tmp_path / "model.json"
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "2", "--hidden", "15",
                     "--model-out", str(model_path)])
    assert code == 0
    model = load_model(model_path)
    ds = normalize(load_libsvm(data_dir / "heart.libsvm"), "minmax")
    base = train_fixed_point(ds.X, ds.y, 42, 15, Activation.SIGN, FieldConfig())
    assert np.array_equal(model.beta, base.beta)
    assert np.array_equal(model.predict(ds.X), base.predict(ds.X))


def test_run_repetitions_write_sample_sidecar(data_dir, tmp_path):
    out = tmp_path / "rep.csv"
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "2", "--hidden", "10",
                     "--repetitions", "3", "--out", str(out)])
    assert code == 0
    sidecar = tmp_path / "rep.csv.samples.json"
    assert sidecar.exists()
    samples = json.loads(sidecar.read_text())
    assert len(samples["runs"]) == 1
    assert len(samples["runs"][0]["wall_time_total"]) == 3
    assert samples["runs"][0]["repetitions"] == 3


@pytest.mark.parametrize("parties", ["1", "0", "200"])
def test_run_rejects_party_count_outside_range(data_dir, capsys, parties):
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", parties])
    assert code == 2
    assert _err(capsys)["error"] == "ConfigError"


def test_run_requires_dataset_and_parties(data_dir, capsys):
    assert cli.main(["run", "--parties", "2"]) == 2
    assert "--dataset" in _err(capsys)["message"]
    assert cli.main(["run", "--dataset", str(data_dir / "heart.libsvm")]) == 2
    assert "--parties" in _err(capsys)["message"]


def test_run_missing_dataset_file_is_a_runtime_error(tmp_path, capsys):
    code = cli.main(["run", "--dataset", str(tmp_path / "nope.libsvm"),
                     "--parties", "2"])
    assert code == 3
    assert _err(capsys)["error"] == "FileNotFoundError"


def test_run_rejects_field_without_headroom(data_dir, capsys):
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "2", "--field-bits", "31",
                     "--scale-bits", "14"])
    assert code == 2
    assert _err(capsys)["error"] == "ConfigError"


def test_run_tcp_validates_address_count(data_dir, capsys):
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "3", "--transport", "tcp",
                     "--party-addr", "127.0.0.1:9"])
    assert code == 2
    assert "party-addr" in _err(capsys)["message"]


def test_config_file_merges_under_cli_flags(data_dir, tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "hidden": 7,
        "seed": 5,
        "field": {"modulus": (1 << 61) - 1, "scale_bits": 18},
    }))
    out = tmp_path / "report.csv"
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "2", "--config", str(cfg_path),
                     "--hidden", "9", "--out", str(out)])
    assert code == 0
    row = read_report_csv(out)[0]
    assert row["L"] == "9", "command line must win over the config file"
    assert row["seed"] == "5", "config file must win over defaults"


def test_config_file_rejects_unknown_keys(data_dir, tmp_path, capsys):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"k_min": 2}))
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "2", "--config", str(cfg_path)])
    assert code == 2
    assert "k_min" in _err(capsys)["message"]


def test_config_file_must_be_json_object(data_dir, tmp_path, capsys):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text("[1, 2]")
    code = cli.main(["run", "--dataset", str(data_dir / "heart.libsvm"),
                     "--parties", "2", "--config", str(cfg_path)])
    assert code == 2


def test_sweep_writes_rows_and_figure(data_dir, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep", "--dataset", str(data_dir / "heart.libsvm"),
                     "--k-min", "2", "--k-max", "5", "--hidden", "15",
                     "--out", str(out)])
    assert code == 0
    rows = read_report_csv(out)
    assert [r["k"] for r in rows] == ["2", "3", "4", "5"]
    assert all(r["models_identical"] == "true" for r in rows)
    figure = tmp_path / "sweep.png"
    assert figure.exists()
    assert figure.read_bytes()[:4] == b"\x89PNG"
    assert "wrote" in capsys.readouterr().out


def test_sweep_defaults_k_max_to_feature_count(data_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep", "--dataset", str(data_dir / "diabetes.libsvm"),
                     "--k-min", "6", "--hidden", "10", "--no-figure",
                     "--out", str(out)])
    assert code == 0
    rows = read_report_csv(out)
    assert [r["k"] for r in rows] == ["6", "7", "8"]  # diabetes has 8 features
    assert not (tmp_path / "sweep.png").exists()


def test_sweep_parallel_blanks_timings(data_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep", "--dataset", str(data_dir / "heart.libsvm"),
                     "--k-min", "2", "--k-max", "4", "--hidden", "10",
                     "--parallel", "--out", str(out)])
    assert code == 0
    rows = read_report_csv(out)
    assert len(rows) == 3
    assert all(r["wall_time_total"] == "" for r in rows)
    assert all(r["models_identical"] == "true" for r in rows)
    assert not (tmp_path / "sweep.png").exists()


def test_sweep_validates_range(data_dir, capsys):
    code = cli.main(["sweep", "--dataset", str(data_dir / "heart.libsvm"),
                     "--k-min", "5", "--k-max", "3"])
    assert code == 2
    assert _err(capsys)["error"] == "ConfigError"


def test_serve_party_requires_identity_and_listen(capsys):
    code = cli.main(["serve-party", "--id", "0"])
    assert code == 2
    message = _err(capsys)["message"]
    assert "--listen" in message and "--dataset" in message
