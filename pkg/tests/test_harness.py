import binascii
import csv
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from dpsbench.harness import pipeline
from dpsbench.harness.cli import main
from dpsbench.harness.config import BenchmarkConfig, ConfigError, load_config
from dpsbench.harness.report import build_report, delta_table, render, write_rows
from dpsbench.harness.seeds import seed_sequence, stream
from dpsbench.harness.storage import ArrayBundle, ItemStore, StorageError, read_json

TINY = {
    "seed": 3,
    "d": 33,
    "laws": ["gauss", "bl"],
    "operators": ["identity"],
    "counts": {"train": 200, "val": 4, "test": 12},
    "diffusion": {"T": 4},
    "gold": {"burn_in": 50, "samples": 200, "keep": 20},
    "denoise": {"burn_in": 5, "samples": 3},
    "methods": ["l2", "l1", "cdps", "dpnp"],
    "denoisers": [{"name": "oracle"}, {"name": "oracle", "label": "again"}],
    "tuning": {"model_items": None, "dps_items": 2, "dps_samples": 3,
               "grids": {"l2": {"a": -3, "b": 1, "n": 5}, "l1": {"a": -3, "b": 1, "n": 5},
                         "cdps": {"a": -3, "b": -1, "n": 2}, "dpnp": {"a": -1, "b": 0, "n": 2}}},
    "run": {"items": 10, "n_samples": 4},
}


def tiny(out, **changes):
    data = json.loads(json.dumps(TINY))
    data.update(changes)
    data["out"] = str(out)
    return BenchmarkConfig.from_dict(data)


def run_all(config):
    return [stage(config) for stage in (pipeline.generate, pipeline.tune, pipeline.run, pipeline.evaluate,
                                        pipeline.report)]


def tree(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    config = tiny(tmp_path_factory.mktemp("bench"))
    assert run_all(config) == [0, 0, 0, 0, 0]
    return config


# ---------------------------------------------------------------------------
# config and seeds
# ---------------------------------------------------------------------------


def test_profiles():
    desk, paper = BenchmarkConfig.from_dict({}), BenchmarkConfig.from_dict({}, "paper")
    assert desk.diffusion["T"] == 200 and paper.diffusion["T"] == 1000
    assert paper.counts == {"train": 1_000_000, "val": 1000, "test": 1000}
    assert len(paper.laws) == 6 and len(paper.operators) == 4
    assert desk.n_run == 50 and paper.n_run == 1000


@pytest.mark.parametrize("change", [
    {"bogus": 1}, {"d": 32}, {"laws": ["cauchy"]}, {"operators": ["blur"]}, {"methods": ["magic"]},
    {"denoisers": [{"name": "oracle"}, {"name": "oracle"}]}, {"denoisers": [{"name": "nope"}]},
    {"alpha": 1.0}, {"seed": None}, {"seed": -1}, {"counts": {"test": 0}}, {"diffusion": {"T": 1}},
    {"gold": {"keep": 1}}, {"run": {"n_samples": 1}},
])
def test_config_rejects(change):
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict(change)


def test_unknown_profile():
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({}, "huge")


def test_load_config_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"profile": "desk", "seed": 5, "laws": ["laplace"], "counts": {"test": 7}}))
    config = load_config(path, seed=11, out=tmp_path / "o")
    assert config.seed == 11 and config.laws == ["laplace"]
    assert config.counts == {"train": 1000, "val": 100, "test": 7}
    assert config.out == str(tmp_path / "o")
    assert load_config(path, profile="paper").diffusion["T"] == 1000
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_streams():
    a = stream(0, "gold", "bl", "identity", 3).standard_normal(4)
    assert np.array_equal(a, stream(0, "gold", "bl", "identity", 3).standard_normal(4))
    assert not np.array_equal(a, stream(0, "gold", "bl", "identity", 4).standard_normal(4))
    assert not np.array_equal(a, stream(0, "run", "bl", "identity", 3).standard_normal(4))
    assert not np.array_equal(a, stream(1, "gold", "bl", "identity", 3).standard_normal(4))
    assert seed_sequence(0, "gold", "bl").spawn_key == (4, binascii.crc32(b"bl"))
    with pytest.raises(ValueError):
        stream(0, "gold", -1)


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------


def test_bundle_round_trip_and_checksum(tmp_path):
    bundle = ArrayBundle(tmp_path / "b")
    x = np.arange(6.0).reshape(2, 3)
    bundle.save({"x": x}, {"k": 1})
    assert np.array_equal(bundle.load("x"), x) and bundle.meta == {"k": 1}
    assert bundle.manifest()["format_version"] == 1
    raw = bytearray((tmp_path / "b" / "x.bin").read_bytes())
    raw[0] ^= 1
    (tmp_path / "b" / "x.bin").write_bytes(bytes(raw))
    with pytest.raises(StorageError):
        bundle.load("x")
    with pytest.raises(StorageError):
        bundle.verify()
    with pytest.raises(StorageError):
        bundle.load("y")


def test_item_store_marker_commits(tmp_path):
    store = ItemStore(tmp_path / "s")
    assert store.items() == [] and not store.done(0)
    store.put(2, {"a": np.ones(3)}, {"m": 1})
    assert store.items() == [2] and store.done(2)
    assert store.record(2)["meta"] == {"m": 1}
    (tmp_path / "s" / "00002.json").unlink()
    assert not store.done(2)
    with pytest.raises(StorageError):
        store.get(2, "a")


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def test_layout(bench):
    out = Path(bench.out)
    for rel in ["config.json", "dataset/bl/manifest.json", "dataset/bl/identity/manifest.json",
                "gold/gauss/identity/00011.json", "tuning/gauss/identity/l1.json",
                "tuning/gauss/identity/cdps__again.json", "runs/bl/identity/dpnp/oracle/00009.json",
                "runs/bl/identity/l2/-/00000.json", "results/gaps.csv", "results/coverage.csv",
                "report/table_gap.txt", "report/table_delta.csv", "report/table_coverage.csv"]:
        assert (out / rel).exists(), rel
    assert not (out / "runs/bl/identity/dpnp/oracle/00010.json").exists()
    assert "train_signals" not in ArrayBundle(out / "dataset" / "bl").names()


def test_dataset_contents(bench):
    model = pipeline.load_model(bench, "bl", "identity")
    x = pipeline.load_truths(bench, "bl", "test")
    y = pipeline.load_measurements(bench, "bl", "identity", "test")
    assert x.shape == (12, 33) and y.shape == (12, 33)
    assert model.sigma_n > 0
    resid = (y - x).std()
    assert 0.3 * model.sigma_n < resid < 3 * model.sigma_n


def test_result_rows(bench):
    with open(Path(bench.out) / "results" / "gaps.csv") as fh:
        rows = list(csv.DictReader(fh))
    cells = {(r["law"], r["method"], r["denoiser"]) for r in rows}
    assert ("gauss", "l2", "-") in cells and ("bl", "cdps", "again") in cells
    assert len(rows) == 2 * 10 * (2 + 2 * 2)
    gauss_l2 = [float(r["value"]) for r in rows if r["law"] == "gauss" and r["method"] == "l2"]
    assert abs(np.mean(gauss_l2)) < 1.0


def test_rerun_is_bitwise_identical(bench, tmp_path):
    other = tiny(tmp_path / "again")
    assert run_all(other) == [0, 0, 0, 0, 0]
    a, b = Path(bench.out), Path(other.out)
    files = tree(a)
    assert files == tree(b)
    for rel in files:
        if rel.name == "config.json":
            continue
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_resume_reproduces_deleted_item(bench, tmp_path):
    config = tiny(tmp_path / "resume")
    run_all(config)
    store = pipeline.run_store(config, "bl", "identity", "cdps", "oracle")
    before = store.get(4, "draws")
    (store.directory / "00004.json").unlink()
    (store.directory / "00004_draws.bin").unlink()
    assert pipeline.run(config) == 0
    assert np.array_equal(store.get(4, "draws"), before)
    ref = pipeline.run_store(bench, "bl", "identity", "cdps", "oracle")
    assert np.array_equal(ref.get(4, "draws"), before)


def test_tune_is_cached(bench):
    path = Path(bench.out) / "tuning" / "gauss" / "identity" / "l2.json"
    stamp = path.stat().st_mtime_ns
    assert pipeline.tune(bench) == 0
    assert path.stat().st_mtime_ns == stamp


def test_run_never_reads_test_truths(tmp_path):
    config = tiny(tmp_path / "iso", laws=["gauss"], methods=["l2", "cdps"])
    pipeline.generate(config)
    pipeline.tune(config)
    sig = Path(config.out) / "dataset" / "gauss" / "test_signals.bin"
    sig.write_bytes(b"garbage")
    assert pipeline.run(config) == 0
    with pytest.raises(StorageError):
        pipeline.evaluate(config)


def test_missing_tuning_counts_failures(tmp_path):
    config = tiny(tmp_path / "notune", laws=["gauss"], methods=["l2", "cdps"], denoisers=[{"name": "oracle"}])
    pipeline.generate(config)
    assert pipeline.run(config) == 2 * config.n_run


def test_failed_items_are_recorded_and_retried(tmp_path, monkeypatch):
    config = tiny(tmp_path / "fail", laws=["gauss"], methods=["l2"])
    pipeline.generate(config)
    pipeline.tune(config)

    def broken(*args, **kwargs):
        raise FloatingPointError("synthetic")

    monkeypatch.setattr(pipeline.baselines, "solve_l2", broken)
    assert pipeline.run(config) == config.n_run
    store = pipeline.run_store(config, "gauss", "identity", "l2", pipeline.POINT)
    assert read_json(store.directory / "failed_00000.json")["error"].startswith("FloatingPointError")
    monkeypatch.undo()
    assert pipeline.run(config) == 0
    assert not (store.directory / "failed_00000.json").exists()


def test_gold_chain_thinning(rng):
    from dpsbench.levy import jump_law

    mean, var, draws = pipeline.gold_chain(np.eye(33), np.zeros(33), 0.1, jump_law("gauss"), 10, 100, 10, rng,
                                           segment=30)
    assert draws.shape == (10, 33)
    assert mean.shape == var.shape == (33,) and np.all(var > 0)


def test_diagnose_stage(tmp_path):
    config = tiny(tmp_path / "diag", diagnose={"law": "gauss", "sigma": 1.0, "chains": 10, "iterations": 60,
                                               "n_avg": 30, "tol": 0.5})
    assert pipeline.diagnose(config) == 0
    summary = read_json(Path(config.out) / "diagnose" / "summary.json")
    assert 1 <= summary["plateau_iteration"] <= 30 and 1 <= summary["window"] <= 30


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


ORDER = {"laws": ["gauss", "bl"], "operators": ["identity"], "methods": ["gibbs", "cdps"], "reference": "oracle"}


def test_render_leaves_missing_cells_blank():
    text = render({("identity", "cdps", "oracle", "gauss"): 1}, ["gauss", "bl"], lambda k: "0.50")
    lines = text.splitlines()
    assert lines[0].split() == ["operator", "method", "gauss", "bl"]
    assert lines[2].split() == ["identity", "cdps/oracle", "0.50"]


def test_delta_of_identical_variants():
    rows = [("identity", "gauss", "cdps", den, i, 0.1 * i) for den in ("oracle", "copy") for i in range(20)]
    (row,) = delta_table(rows, ORDER)
    assert row[2] == "copy" and row[5] == 0.0 and row[7] == 1.0 and row[8] == ""


def test_delta_detects_shift():
    rows = [("identity", "gauss", "cdps", "oracle", i, 0.0) for i in range(30)]
    rows += [("identity", "gauss", "cdps", "worse", i, 1.0 + 0.01 * i) for i in range(30)]
    (row,) = delta_table(rows, ORDER)
    assert row[5] > 1.0 and row[8] == "***"


def test_build_report_single_denoiser(tmp_path):
    rows = [("identity", "gauss", "cdps", "oracle", i, float(i)) for i in range(5)]
    write_rows(tmp_path / "g.csv", rows)
    write_rows(tmp_path / "c.csv", [r[:5] + (1.0,) for r in rows])
    build_report(tmp_path / "g.csv", tmp_path / "c.csv", tmp_path / "rep", ORDER)
    assert "no second denoiser" in (tmp_path / "rep" / "table_delta.txt").read_text()
    assert "2.00 ± 1.58" in (tmp_path / "rep" / "table_gap.txt").read_text()
    with open(tmp_path / "rep" / "table_coverage.csv") as fh:
        (cov,) = list(csv.DictReader(fh))
    assert float(cov["coverage"]) == 1.0 and cov["n"] == "5"


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    data = json.loads(json.dumps(TINY))
    data.update(laws=["gauss"], methods=["l2"], denoisers=[{"name": "oracle"}])
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(data))
    out = tmp_path / "cli"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 2  # nothing generated yet
    assert main(["generate", "--config", str(path), "--out", str(out)]) == 0
    assert main(["run", "--config", str(path), "--out", str(out)]) == 1  # no tuning yet
    assert main(["all", "--config", str(path), "--out", str(out), "--seed-override", "3"]) == 0
    assert (out / "report" / "table_gap.txt").exists()
    bad = tmp_path / "bad.yaml"
    bad.write_text("d: 8\n")
    assert main(["generate", "--config", str(bad)]) == 2
    assert "d must be at least 33" in capsys.readouterr().err
