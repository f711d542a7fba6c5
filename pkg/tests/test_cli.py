import csv
import io
import json

import pytest
from click.testing import CliRunner

from approxfp import cnn
from approxfp.cli import DATA_ENV, main
from conftest import FIXTURE_NET


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    res = CliRunner().invoke(main, ["make-synthetic", "--out-dir", str(d), "--n-train", "64", "--n-test", "40"])
    assert res.exit_code == 0, res.output
    return d


def run(runner, args, code=0):
    res = runner.invoke(main, args)
    assert res.exit_code == code, res.output
    return res


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_version(runner):
    assert "0.1.0" in run(runner, ["--version"]).output


def test_make_synthetic_layout(data_dir):
    assert (data_dir / "data_batch_1.bin").stat().st_size == 64 * cnn.RECORD
    assert (data_dir / "test_batch.bin").stat().st_size == 40 * cnn.RECORD
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["seeds"] == {"train": 0, "test": 1}


def test_characterize_csv_with_manifest(runner, tmp_path):
    out = tmp_path / "err.csv"
    run(runner, ["characterize", "--config", "PMSI", "--config", "exact", "--n", "5000", "--out", str(out)])
    table = rows(out.read_text())
    assert [r["config"] for r in table] == ["PMSI", "exact"]
    assert table[1]["ER%"] == "0.000"
    manifest = json.loads((tmp_path / "err.csv.manifest.json").read_text())
    assert manifest["command"] == "characterize"
    assert manifest["seeds"] == {"operands": 1}
    assert manifest["parameters"]["n"] == 5000


def test_characterize_json_stdout(runner):
    doc = json.loads(run(runner, ["characterize", "--all", "--n", "2000", "--format", "json"]).output)
    assert len(doc["rows"]) == 9
    assert doc["rows"][0]["config"] == "exact" and doc["rows"][0]["error_rate"] == 0.0


def test_characterize_needs_a_config(runner):
    run(runner, ["characterize"], code=2)


@pytest.mark.parametrize(
    "args",
    [
        ["characterize", "--config", "PMXX"],
        ["dump-placement", "--config", "nope"],
        ["evaluate", "--weights", str(FIXTURE_NET), "--config", "bogus"],
    ],
)
def test_unknown_config_is_a_usage_error(runner, args):
    res = run(runner, args, code=2)
    assert "unknown multiplier config" in res.output


def test_costs(runner):
    table = rows(run(runner, ["costs"]).output)
    assert len(table) == 9
    assert table[0]["config"] == "exact" and table[0]["pdp_benefit_pct"] == ""
    doc = json.loads(run(runner, ["costs", "--format", "json"]).output)
    assert doc["rows"][0]["pdp_benefit_pct"] is None


def test_costs_override(runner, tmp_path):
    text = run(runner, ["costs"]).output.replace("1.667", "2.000")
    path = tmp_path / "c.csv"
    path.write_text(text)
    doc = json.loads(run(runner, ["costs", "--table", str(path), "--format", "json"]).output)
    assert doc["rows"][0]["pdp_pj"] == 2.0
    assert list(doc["manifest"]["inputs"]) == ["c.csv"]


def test_dump_placement(runner):
    table = rows(run(runner, ["dump-placement", "--config", "NMCI"]).output)
    assert len(table) == 170
    assert {r["kind"] for r in table if int(r["column"]) >= 24} == {"exact"}


def test_evaluate(runner, data_dir, tmp_path):
    seq = tmp_path / "mix.json"
    cnn.AssignmentSequence(tuple(["PMSI", "exact"] * 99)).save(seq)
    args = ["evaluate", "--weights", str(FIXTURE_NET), "--data", str(data_dir), "--seq", str(seq), "--config", "exact", "--n", "10"]
    table = rows(run(runner, args).output)
    assert [r["sequence"] for r in table] == ["mix.json", "exact"]
    assert table[1]["pdp_pj"] == "330.066" and table[1]["n_images"] == "10"


def test_evaluate_uses_env_data(runner, data_dir, monkeypatch):
    monkeypatch.setenv(DATA_ENV, str(data_dir))
    doc = json.loads(run(runner, ["evaluate", "--weights", str(FIXTURE_NET), "--config", "exact", "--n", "5", "--format", "json"]).output)
    assert doc["rows"][0]["n_images"] == 5


def test_evaluate_data_errors(runner, data_dir, tmp_path, monkeypatch):
    monkeypatch.delenv(DATA_ENV, raising=False)
    base = ["evaluate", "--weights", str(FIXTURE_NET), "--config", "exact"]
    assert "APPROXFP_DATA" in run(runner, base, code=2).output
    run(runner, base + ["--data", str(tmp_path)], code=2)
    run(runner, base + ["--data", str(data_dir), "--n", "41"], code=2)
    run(runner, ["evaluate", "--weights", str(FIXTURE_NET), "--data", str(data_dir)], code=2)


def test_optimize_hardware_only(runner, tmp_path):
    out = tmp_path / "front.json"
    run(runner, ["optimize", "--hardware-only", "--k", "2", "--pop", "10", "--gens", "5", "--out", str(out)])
    doc = json.loads(out.read_text())
    assert doc["types"] == ["PMCSI", "NMSI"]
    assert doc["manifest"]["seeds"] == {"evolution": 0}
    for m in doc["front"]:
        assert len(m["slots"]) == 198 and {"area", "pdp"} <= m.keys()


def test_optimize_full(runner, data_dir):
    args = ["optimize", "--k", "2", "--pop", "4", "--gens", "1", "--weights", str(FIXTURE_NET), "--data", str(data_dir)]
    doc = json.loads(run(runner, args + ["--n-eval", "6", "--n-final", "8"]).output)
    assert 0 <= doc["candidate"] < len(doc["front"])
    for m in doc["front"]:
        assert {"area", "pdp", "accuracy_loss", "accuracy_final"} <= m.keys()
    assert "baseline_accuracy_final" in doc
    run(runner, ["optimize", "--k", "2"], code=2)


def test_permute(runner, data_dir):
    args = ["permute", "--k", "3", "--n", "3", "--weights", str(FIXTURE_NET), "--data", str(data_dir), "--n-images", "6"]
    doc = json.loads(run(runner, args + ["--format", "json"]).output)
    assert len(doc["rows"]) == 3
    assert doc["max_accuracy_pct"] == max(r["accuracy_pct"] for r in doc["rows"])
    assert all(sorted(r["slots"]) == sorted(doc["manifest"]["parameters"]["source"]) for r in doc["rows"])
    run(runner, ["permute", "--weights", str(FIXTURE_NET), "--data", str(data_dir)], code=2)


def test_train_command(runner, data_dir, tmp_path):
    pytest.importorskip("torch")
    out = tmp_path / "w.afpw"
    run(runner, ["train", "--data", str(data_dir), "--epochs", "1", "--out", str(out)])
    assert cnn.load_weights(out).conv1.shape == (10, 3, 3, 3)
    manifest = json.loads((tmp_path / "w.afpw.manifest.json").read_text())
    assert manifest["parameters"]["n"] == 64 and len(manifest["result"]["epoch_losses"]) == 1


@pytest.mark.parametrize(
    "args",
    [
        ["characterize", "--config", "NMCSI", "--n", "3000"],
        ["optimize", "--hardware-only", "--k", "3", "--pop", "8", "--gens", "3", "--seed", "5"],
        ["costs", "--format", "json"],
    ],
)
def test_reruns_are_byte_identical(runner, tmp_path, args):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        run(runner, args + ["--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_output_validation_rejects_nan(tmp_path):
    from approxfp.cli import OutputError, emit_table

    with pytest.raises(OutputError):
        emit_table(None, "csv", {}, ["a"], [[float("nan")]])
    with pytest.raises(OutputError):
        emit_table(None, "csv", {}, ["a", "b"], [[1]])
