import json
import time

import numpy as np
import pytest

from rattlab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from rattlab.metrics import read_report_csv
from rattlab.splitter import load_dataset, load_manifest, split_disjoint, vocab_stats

SPEC = {"seed": 4, "num_categories": 2, "images_per_category": 40, "vocab_per_category": 12, "pool_size": 8}
TASKS = {"tasks": [{"name": "first", "categories": ["cat0"]}, {"name": "second", "categories": [1]}],
         "fractions": [0.6, 0.2, 0.2], "seed": 2}
TRAIN = {"epochs": 2, "batch_size": 16, "d_emb": 8, "d_hidden": 12, "max_len": 12}


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["-q", "generate", write(d / "spec.json", SPEC), str(d / "data.json")]) == EXIT_OK
    assert main(["-q", "split", str(d / "data.json"), write(d / "tasks.json", TASKS), str(d / "split.json")]) == EXIT_OK
    return d


def run_cfg(d, name, **extra):
    doc = {"dataset": "data.json", "split": "split.json", "output": f"runs/{name}", "train": TRAIN}
    doc.update(extra)
    return write(d / f"{name}.json", doc)


def test_generate_deterministic_and_loadable(workspace, tmp_path):
    out = tmp_path / "again.json"
    assert main(["-q", "generate", str(workspace / "spec.json"), str(out)]) == EXIT_OK
    assert out.read_bytes() == (workspace / "data.json").read_bytes()
    images, cats = load_dataset(out)
    assert len(images) == 80 and cats == ["cat0", "cat1"]


def test_generate_zero_images(tmp_path):
    spec = write(tmp_path / "s.json", {"images_per_category": 0})
    assert main(["-q", "generate", spec, str(tmp_path / "d.json")]) == EXIT_OK
    assert load_dataset(tmp_path / "d.json")[0] == []


def test_generate_rejects_unknown_key(tmp_path, capsys):
    spec = write(tmp_path / "s.json", {"images": 3})
    assert main(["-q", "generate", spec, str(tmp_path / "d.json")]) == EXIT_CONFIG
    assert "images" in capsys.readouterr().err
    bad = write(tmp_path / "b.json", {"caption_len": [1, 2]})
    assert main(["-q", "generate", bad, str(tmp_path / "d.json")]) == EXIT_CONFIG


def test_split_stats_match_recount(workspace, capsys):
    tasks = write(workspace / "t2.json", TASKS)
    assert main(["-q", "split", str(workspace / "data.json"), tasks, str(workspace / "s2.json")]) == EXIT_OK
    printed = capsys.readouterr().out
    doc = json.loads((workspace / "s2.json").read_text())
    images, _ = load_dataset(workspace / "data.json")
    split = load_manifest(workspace / "s2.json")
    recount = vocab_stats(split, images)
    assert doc["stats"] == json.loads(json.dumps(recount))
    for name, row in recount["per_task"].items():
        assert f"{name:<12}{row['train']:>7}{row['valid']:>7}{row['test']:>7}{row['vocab']:>7}" in printed


def test_split_single_task_keeps_candidates(workspace):
    one = write(workspace / "one.json", {"tasks": [{"name": "only", "categories": [0, 1]}]})
    assert main(["-q", "split", str(workspace / "data.json"), one, str(workspace / "one_split.json")]) == EXIT_OK
    split = load_manifest(workspace / "one_split.json")
    assert len(split.examples[0]) == 80


def test_split_rejects_overlapping_disjoint_tasks(workspace, capsys):
    bad = write(workspace / "bad.json", {"tasks": [{"name": "a", "categories": [0]}, {"name": "b", "categories": [0, 1]}]})
    assert main(["-q", "split", str(workspace / "data.json"), bad, str(workspace / "x.json")]) == EXIT_CONFIG
    assert "share categories" in capsys.readouterr().err
    assert main(["-q", "split", "--procedure", "incremental", str(workspace / "data.json"), bad, str(workspace / "x.json")]) == EXIT_OK


def test_train_smoke_and_rerun_identical(workspace):
    t0 = time.perf_counter()
    assert main(["-q", "train", run_cfg(workspace, "ft", method="FT")]) == EXIT_OK
    assert time.perf_counter() - t0 < 60
    run = workspace / "runs" / "ft"
    for f in ("config.json", "split.json", "manifest.json", "report.csv", "report.json", "task00_first.npz", "task01_second.npz"):
        assert (run / f).exists(), f
    first = (run / "report.csv").read_bytes()
    assert main(["-q", "train", run_cfg(workspace, "ft", method="FT")]) == EXIT_OK
    assert (run / "report.csv").read_bytes() == first
    # the run directory's own config re-runs the experiment
    assert main(["-q", "train", str(run / "config.json"), "--out", str(workspace / "rerun")]) == EXIT_OK
    assert (workspace / "rerun" / "report.csv").read_bytes() == first


def test_train_ratt_flags_off_equals_ft(workspace):
    main(["-q", "train", run_cfg(workspace, "ft", method="FT")])
    off = {"mask_x": False, "mask_h": False, "mask_s": False, "sparsity": 0.0}
    assert main(["-q", "train", run_cfg(workspace, "off", method="RATT", ratt=off)]) == EXIT_OK
    a = read_report_csv(workspace / "runs" / "ft" / "report.csv")
    b = read_report_csv(workspace / "runs" / "off" / "report.csv")
    assert a == b
    assert (workspace / "runs" / "off" / "mask_usage.csv").exists()


def test_train_config_errors(workspace, capsys):
    assert main(["-q", "train", run_cfg(workspace, "u", method="FT", extra_key=1)]) == EXIT_CONFIG
    assert main(["-q", "train", run_cfg(workspace, "m", method="XX")]) == EXIT_CONFIG
    assert main(["-q", "train", run_cfg(workspace, "n", method="FT", dataset="missing.json")]) == EXIT_CONFIG
    assert main(["-q", "train", str(workspace / "nope.json")]) == EXIT_CONFIG
    (workspace / "broken.json").write_text("{not json")
    assert main(["-q", "train", str(workspace / "broken.json")]) == EXIT_CONFIG
    assert "missing.json" in capsys.readouterr().err


def test_train_divergence_exit_code(workspace, capsys):
    doc = json.loads((workspace / "data.json").read_text())
    for rec in doc["images"]:
        rec["features"][0] = float("nan")
    (workspace / "nan_data.json").write_text(json.dumps(doc))
    assert main(["-q", "train", run_cfg(workspace, "diverge", method="FT", dataset="nan_data.json")]) == EXIT_RUNTIME
    assert "non-finite" in capsys.readouterr().err


def test_report_matches_json_and_is_idempotent(workspace, capsys):
    main(["-q", "train", run_cfg(workspace, "ft", method="FT")])
    run = workspace / "runs" / "ft"
    before = (run / "report.csv").read_bytes()
    assert main(["-q", "report", str(run)]) == EXIT_OK
    out1 = capsys.readouterr().out
    assert main(["-q", "report", str(run)]) == EXIT_OK
    assert capsys.readouterr().out == out1 and (run / "report.csv").read_bytes() == before
    doc = json.loads((run / "report.json").read_text())
    for i, row in enumerate(doc["matrix"]):
        for v in row:
            if v is not None:
                assert f"{v:.4f}" in out1.splitlines()[2 + i]
    assert str(run / "report.csv") in out1


def test_report_single_task_prints_na(workspace, capsys):
    one_split = workspace / "one_split.json"
    if not one_split.exists():
        one = write(workspace / "one.json", {"tasks": [{"name": "only", "categories": [0, 1]}]})
        main(["-q", "split", str(workspace / "data.json"), one, str(one_split)])
    assert main(["-q", "train", run_cfg(workspace, "single", method="FT", split="one_split.json")]) == EXIT_OK
    capsys.readouterr()
    assert main(["-q", "report", str(workspace / "runs" / "single")]) == EXIT_OK
    assert "N/A" in capsys.readouterr().out


def test_report_missing_run(tmp_path):
    assert main(["-q", "report", str(tmp_path)]) == EXIT_CONFIG


def test_bad_usage_is_config_error():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_CONFIG
