import json

import pytest

from rflmpc import cli
from rflmpc.simulate import LOG_COLUMNS, evaluate, load_log

FAST = """
seed = 4
forest.n_trees = 4
paths.train = "S20, L25:90, S15, R25:90, S15, L30:120, S20"
paths.eval = ["S20, L25:60, S20", "S20, R28:80, S20"]
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "fast.toml").write_text(FAST)
    return d


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def artifacts(work):
    cfg = work / "fast.toml"
    assert cli.main(["collect", "--config", str(cfg), "--out", str(work / "ds.csv")]) == 0
    assert cli.main(["train", "--config", str(cfg), "--data", str(work / "ds.csv"), "--trees", "20",
                     "--depth", "6", "--out", str(work / "model.json"),
                     "--report", str(work / "report.json")]) == 0
    for name, extra in (("nom", []), ("rfl", ["--model", str(work / "model.json")])):
        assert cli.main(["run", "--config", str(cfg), "--path", "S20, L25:60, S20", "--deterministic",
                         "--out", str(work / f"{name}.csv")] + extra) == 0
    return work


def test_collect_train_run(artifacts):
    report = json.loads((artifacts / "report.json").read_text())
    assert report["forest"]["n_trees"] == 20 and report["forest"]["max_depth"] == 6
    assert report["forest"]["seed"] == 4
    te = report["models"]
    # leaf-linear single tree beats the leaf-mean tree on held-out e1 residues
    assert te["RTL"]["test"]["e1"]["rmse"] < te["RT"]["test"]["e1"]["rmse"]
    log = load_log(artifacts / "rfl.csv")
    assert (log["step_ms"] == 0.0).all()
    assert (artifacts / "nom.csv").read_text().splitlines()[0] == ",".join(LOG_COLUMNS)


def test_eval_matches_library(artifacts, capsys):
    code, out, _ = _run(["eval", artifacts / "rfl.csv", "--baseline", artifacts / "nom.csv"], capsys)
    assert code == 0
    got = json.loads(out)
    ref = evaluate(load_log(artifacts / "rfl.csv"), load_log(artifacts / "nom.csv"))
    assert got["pe_percent"] == pytest.approx(ref["pe_percent"], rel=1e-12)
    assert got["e1"] == pytest.approx(ref["e1"], rel=1e-12)


def test_compare_matches_evaluate(artifacts, capsys):
    code, out, _ = _run(["compare", artifacts / "nom.csv", artifacts / "rfl.csv"], capsys)
    assert code == 0
    header, row = out.strip().splitlines()
    rec = dict(zip(header.split(","), row.split(",")))
    ref = evaluate(load_log(artifacts / "rfl.csv"), load_log(artifacts / "nom.csv"))["pe_percent"]
    # table values carry six significant digits
    assert float(rec["pe_percent"]) == pytest.approx(ref, rel=1e-5, abs=1e-9)


def test_run_is_reproducible(artifacts, capsys):
    cfg = artifacts / "fast.toml"
    code, _, _ = _run(["run", "--config", cfg, "--path", "S20, L25:60, S20", "--deterministic",
                       "--model", artifacts / "model.json", "--out", artifacts / "again.csv"], capsys)
    assert code == 0
    assert (artifacts / "again.csv").read_bytes() == (artifacts / "rfl.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["run", "--bogus"],
    ["train"],                                   # --data is required
    ["train", "--data", "x.csv", "--trees", "0"],
    ["run", "--seed", "-3"],
    ["compare", "a.csv"],                        # odd number of logs
])
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = _run(argv, capsys)
    assert code == cli.EXIT_USAGE
    assert "error" in err


def test_config_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("vehicle.vxx = 1.0\n")
    assert _run(["collect", "--config", bad], capsys)[0] == cli.EXIT_USAGE
    assert _run(["collect", "--config", tmp_path / "missing.toml"], capsys)[0] == cli.EXIT_USAGE


def test_runtime_errors_exit_2(tmp_path, artifacts, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert _run(["eval", empty], capsys)[0] == cli.EXIT_RUNTIME
    assert _run(["eval", tmp_path / "nope.csv"], capsys)[0] == cli.EXIT_RUNTIME
    assert _run(["train", "--data", tmp_path / "nope.csv"], capsys)[0] == cli.EXIT_RUNTIME
    assert _run(["run", "--model", empty, "--path", "S20"], capsys)[0] == cli.EXIT_RUNTIME
    # model trained for N=16 used with a shorter horizon
    short = tmp_path / "short.toml"
    short.write_text("horizon.N = 8\nhorizon.Nc = 8\nforest.min_leaf = 18\n")
    code = _run(["run", "--config", short, "--model", artifacts / "model.json", "--path", "S20"], capsys)[0]
    assert code == cli.EXIT_RUNTIME


def test_pipeline(tmp_path, capsys):
    cfg = tmp_path / "fast.toml"
    cfg.write_text(FAST)
    code, out, _ = _run(["pipeline", "--config", cfg, "--out", tmp_path / "o", "--deterministic"], capsys)
    assert code == 0
    o = tmp_path / "o"
    for f in ("config.toml", "dataset.csv", "model.json", "train_report.json", "compare.csv",
              "summary.json", "logs/nominal_path0.csv", "logs/rfl_path1.csv", "figures/compare_mae.png"):
        assert (o / f).is_file(), f
    summary = json.loads((o / "summary.json").read_text())
    assert set(summary["leaf_linear_ratio_e1"]) == {"RTL/RT", "RFL/RF"}
    assert out.strip().splitlines()[-1].startswith("pooled,")
