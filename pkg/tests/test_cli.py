import csv
import json

import numpy as np
import pytest

from conftest import SCALED, planted_d2
from hamcorr import cli, dataio
from hamcorr.hamiltonian import ModelContext
from hamcorr.training import FitConfig, loss

PAIR = (0.01, 0.3)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "device.json").write_text(json.dumps(dataio.device_params_to_dict(SCALED)))
    (root / "plant.json").write_text(json.dumps(dataio.corrections_to_dict(planted_d2())))
    return root


@pytest.fixture(scope="module")
def dataset_file(workdir):
    out = workdir / "data.json"
    code = cli.main(["gen-data", "--device", str(workdir / "device.json"), "--out", str(out),
                     "--standard-grid", "--pair", "0.01,0.3", "--plant",
                     str(workdir / "plant.json"), "--workers", "1"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def fit_file(workdir, dataset_file):
    out = workdir / "fit.json"
    code = cli.main(["fit", "--dataset", str(dataset_file), "--out", str(out), "--iters", "3",
                     "--lr", "3e-7", "--tol", "0", "--workers", "1"])
    assert code == 0
    return out


def test_simulate_zero_amplitudes_stays_put(workdir):
    out = workdir / "sim.csv"
    assert cli.main(["simulate", "--device", str(workdir / "device.json"), "--out", str(out),
                     "--amplitudes", "0,0", "--count", "4"]) == 0
    rows = read_csv(out)
    assert rows[0] == ["duration_dt", "duration_ns", "survival_uncorrected"]
    assert [int(r[0]) for r in rows[1:]] == [384, 512, 640, 768]
    assert all(abs(float(r[2]) - 1.0) < 1e-9 for r in rows[1:])


def test_simulate_missing_device(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    code = cli.main(["simulate", "--device", str(tmp_path / "nope.json"), "--out", str(out)])
    assert code == cli.EXIT_DATA
    assert not out.exists()
    assert "nope.json" in capsys.readouterr().err


def test_usage_errors(workdir, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == cli.EXIT_USAGE
    code = cli.main(["simulate", "--device", str(workdir / "device.json"),
                     "--out", str(tmp_path / "x.csv"), "--amplitudes", "0.1"])
    assert code == cli.EXIT_USAGE
    code = cli.main(["gen-data", "--device", str(workdir / "device.json"),
                     "--out", str(tmp_path / "x.json")])
    assert code == cli.EXIT_USAGE


def test_fit_rejects_bad_learning_rate(dataset_file, tmp_path):
    code = cli.main(["fit", "--dataset", str(dataset_file), "--out", str(tmp_path / "f.json"),
                     "--lr", "-1"])
    assert code == cli.EXIT_USAGE


def test_gen_data_layout(dataset_file):
    ds = dataio.load_dataset(dataset_file)
    assert ds.pairs() == [PAIR]
    assert len(ds.points) == 50
    assert ds.provenance["planted_digest"] == dataio.corrections_digest(planted_d2())


def test_fit_file(fit_file, dataset_file):
    results, doc = dataio.load_fit_results(fit_file)
    assert len(results) == 1 and results[0].pair == PAIR
    assert results[0].iterations_used == 3
    assert doc["dataset_digest"] == dataio.dataset_digest(dataio.load_dataset(dataset_file))
    assert doc["frame"] == "rotating"


def test_fit_is_deterministic(fit_file, dataset_file, tmp_path):
    again = tmp_path / "again.json"
    assert cli.main(["fit", "--dataset", str(dataset_file), "--out", str(again), "--iters", "3",
                     "--lr", "3e-7", "--tol", "0", "--workers", "1"]) == 0
    a = json.loads(fit_file.read_text())
    b = json.loads(again.read_text())
    assert a["digest"] == b["digest"]
    assert a["results"] == b["results"]


def test_eval_and_export(fit_file, dataset_file, tmp_path):
    out = tmp_path / "eval"
    assert cli.main(["eval", "--dataset", str(dataset_file), "--fit", str(fit_file),
                     "--out", str(out)]) == 0
    table = read_csv(out / "loss_table.csv")
    assert len(table) == 2 and table[1][:2] == ["0.01", "0.3"]
    assert len(read_csv(out / "heatmap_D2_0.01_0.3.csv")) == 10
    series = read_csv(out / "timeseries.csv")
    assert len(series) == 51
    states = {(r[2], r[3]) for r in read_csv(out / "state_losses.csv")[1:]}
    assert states == {("00", "train"), ("10", "train"), ("00", "validation"),
                      ("10", "validation"), ("01", "validation"), ("11", "validation")}

    exp = tmp_path / "export"
    assert cli.main(["export", "--fit", str(fit_file), "--eval", str(out / "eval.json"),
                     "--out", str(exp)]) == 0
    assert read_csv(exp / "loss_table.csv") == table
    assert read_csv(exp / "d2_trends.csv") == read_csv(out / "d2_trends.csv")


def test_eval_train_loss_matches_training_objective(fit_file, dataset_file):
    ds = dataio.load_dataset(dataset_file)
    results, _ = dataio.load_fit_results(fit_file)
    ctx = ModelContext(SCALED)
    rows, _, _, _, l_unc, l_cor = cli.evaluate_pair(ds, ctx, PAIR, results[0])
    train, _ = dataio.split(ds, PAIR)
    model = ds.prepared_model(ctx)
    n = len(train)
    assert [p for p, _ in rows[:n]] == train
    assert l_unc[:n].sum() == loss(np.zeros(model.n_params), train, model)
    assert l_cor[:n].sum() == loss(results[0].params, train, model)


def test_dimension_mismatch_is_reported(fit_file, dataset_file, tmp_path, capsys):
    doc = json.loads(dataset_file.read_text())
    doc["device_params"]["levels"] = 4
    other = tmp_path / "four_level.json"
    other.write_text(json.dumps(doc))
    code = cli.main(["eval", "--dataset", str(other), "--fit", str(fit_file),
                     "--out", str(tmp_path / "e")])
    assert code == cli.EXIT_DATA
    assert "9x9" in capsys.readouterr().err


def test_run_fit_api_matches_cli(fit_file, dataset_file, tmp_path):
    out = tmp_path / "api.json"
    cfg = FitConfig(learning_rate=3e-7, max_iterations=3, loss_threshold=0.0, log_every=10)
    cli.run_fit(dataset_file, out, config=cfg)
    assert json.loads(out.read_text())["digest"] == json.loads(fit_file.read_text())["digest"]
