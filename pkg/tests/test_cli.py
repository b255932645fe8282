import json

import numpy as np
import pytest

from nogp.cli import main
from nogp.data_io import load_dataset
from nogp.layer_cov import fno_architecture


def _jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "syn.txt"
    assert main(["generate", "--n", "10", "--out", str(path)]) == 0
    return path


def test_generate_writes_dataset_and_manifest(small_dataset):
    ds = load_dataset(small_dataset)
    assert ds.n == 10 and ds.grid.sizes == (11,)
    manifest = json.loads((small_dataset.parent / "syn.txt.manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["seeds"] == {"seed": 0, "truth_seed": 1}
    assert {"nogp", "numpy", "scipy", "python"} <= set(manifest["versions"])
    assert manifest["wall_time_s"] >= 0


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        main(["generate", "--n", "4", "--seed", "5", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()
    main(["generate", "--kind", "burgers", "--n", "3", "--m", "32", "--out", str(tmp_path / "bg.bin")])
    assert load_dataset(tmp_path / "bg.bin").grid.sizes == (32,)


def test_limit_check_small_run_and_determinism(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    args = ["limit-check", "--widths", "1,10", "--samples", "500", "--seed", "2"]
    assert main(args + ["--out", str(a)]) == 0
    main(args + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    recs = _jsonl(a)
    assert [r["J"] for r in recs] == [1, 10]
    assert all(0 <= r["tvd"] <= 1 for r in recs)


def test_limit_check_single_sample_is_degenerate(tmp_path):
    out = tmp_path / "one.jsonl"
    assert main(["limit-check", "--widths", "5", "--samples", "1", "--out", str(out)]) == 0
    assert _jsonl(out)[0]["tvd"] > 0.9


def test_variance_check_rows(tmp_path):
    out = tmp_path / "var.csv"
    assert main(["variance-check", "--samples-schedule", "10,100,1000", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "N,mc_variance,analytic_variance,relative_error"
    rows = [line.split(",") for line in lines[1:]]
    assert [int(r[0]) for r in rows] == [10, 100, 1000]
    assert len({r[2] for r in rows}) == 1


def test_regress_budget_one_returns_init(small_dataset, tmp_path):
    out = tmp_path / "r.jsonl"
    code = main(["regress", "--dataset", str(small_dataset), "--folds", "5", "--budget", "1",
                 "--band", "2", "--out", str(out)])
    assert code == 0
    recs = _jsonl(out)
    folds = [r for r in recs if r["record"] == "fold"]
    assert [r["n_test"] for r in folds] == [2] * 5
    init = {"config": fno_architecture(2).to_dict(), "noise_variance": 1e-3}
    assert all(r["hyperparams"] == init for r in folds)
    agg = recs[-1]
    assert agg["record"] == "aggregate"
    assert np.isfinite(agg["rel_l2_mean"]) and np.isfinite(agg["abs_l2_mean"])


def test_regress_matern_and_outputs(small_dataset, tmp_path):
    out, pred, model = tmp_path / "m.jsonl", tmp_path / "p.csv", tmp_path / "model.json"
    code = main(["regress", "--dataset", str(small_dataset), "--model", "matern", "--nu", "inf",
                 "--folds", "2", "--budget", "2", "--save-predictions", str(pred),
                 "--save-model", str(model), "--out", str(out)])
    assert code == 0
    assert len(pred.read_text().splitlines()) == 1 + 10 * 11
    assert json.loads(model.read_text())["dataset_sha256"] == load_dataset(small_dataset).sha256()
    out2 = tmp_path / "m2.jsonl"
    assert main(["regress", "--dataset", str(small_dataset), "--load-model", str(model),
                 "--folds", "2", "--budget", "1", "--out", str(out2)]) == 0


def test_regress_is_deterministic(small_dataset, tmp_path):
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        main(["regress", "--dataset", str(small_dataset), "--folds", "2", "--budget", "3",
              "--band", "2", "--seed", "4", "--out", str(p)])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_exit_codes(small_dataset, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["limit-check", "--widths", "0", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2
    assert main(["regress", "--dataset", str(small_dataset), "--folds", "11",
                 "--out", str(tmp_path / "x")]) == 2
    assert main(["regress", "--dataset", str(tmp_path / "missing.txt"),
                 "--out", str(tmp_path / "x")]) == 3
    bad = tmp_path / "bad.txt"
    bad.write_text("not a header\n1,2,3\n")
    assert main(["regress", "--dataset", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert "bad.txt" in capsys.readouterr().err
    # nu = 1.5 leaves too much spectral mass beyond the default truncation
    assert main(["regress", "--dataset", str(small_dataset), "--model", "matern", "--nu", "1.5",
                 "--folds", "2", "--budget", "1", "--out", str(tmp_path / "x")]) == 4
