import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from ropstage.cli import main
from ropstage.dataset import DatasetManifest, Split, read_fused
from ropstage.detect import Detection, dumps_sidecar, sidecar_path
from ropstage.annot import StageLabel

DATA = Path(__file__).parent / "data"


def run(*args):
    return main([str(a) for a in args])


def common(data, out, *extra):
    return ["--images-dir", data / "images", "--via-json", data / "via.json", "--output-dir", out,
            "--output-size", 64, "--tiles-x", 4, "--tiles-y", 4, *extra]


def test_build_prints_count_table(synthetic, tmp_path, capsys):
    assert run("build", *common(synthetic, tmp_path / "out")) == 0
    text = capsys.readouterr().out
    assert "Train" in text and "Stage1" in text
    m = DatasetManifest.load(tmp_path / "out" / "manifest.json")
    assert m.counts()[StageLabel.STAGE1] == {Split.TRAIN: 30, Split.TEST: 3, Split.VALIDATION: 1}
    assert m.params["config_hash"]


def test_build_factor_one(synthetic, tmp_path):
    assert run("build", *common(synthetic, tmp_path / "out", "--augment-factor", 1)) == 0
    m = DatasetManifest.load(tmp_path / "out" / "manifest.json")
    assert not any(r.is_augmented for r in m.records)
    assert m.counts()[StageLabel.STAGE1][Split.TRAIN] == 6


def test_build_same_seed_same_bytes(synthetic, tmp_path):
    run("build", *common(synthetic, tmp_path / "a", "--seed", 11))
    run("build", *common(synthetic, tmp_path / "b", "--seed", 11))
    run("build", *common(synthetic, tmp_path / "c", "--seed", 12))
    a, b, c = ((tmp_path / d / "manifest.json").read_bytes() for d in "abc")
    assert a == b and a != c


def test_build_parse_error_exit_code(synthetic, tmp_path, capsys):
    (synthetic / "via.json").write_text('{"x": [')
    assert run("build", *common(synthetic, tmp_path / "out")) == 2
    assert "byte offset" in capsys.readouterr().err


def test_missing_paths_are_config_errors(tmp_path):
    assert run("build", "--images-dir", tmp_path / "nope", "--via-json", tmp_path / "nope.json") == 2
    assert run("preprocess", "--images-dir", tmp_path, "--output-dir", tmp_path / "empty") == 2


def test_preprocess_writes_pngs_and_is_idempotent(synthetic, tmp_path):
    out = tmp_path / "out"
    run("build", *common(synthetic, out))
    assert run("preprocess", *common(synthetic, out)) == 0
    files = sorted((out / "preprocessed").glob("*.png"))
    assert len(files) == len(DatasetManifest.load(out / "manifest.json").records)
    first = {f.name: f.read_bytes() for f in files}
    assert run("preprocess", *common(synthetic, out, "--workers", 3)) == 0
    assert {f.name: f.read_bytes() for f in (out / "preprocessed").glob("*.png")} == first


def test_preprocess_reports_missing_source(synthetic, tmp_path, capsys):
    out = tmp_path / "out"
    run("build", *common(synthetic, out))
    victim = DatasetManifest.load(out / "manifest.json").records[0]
    (synthetic / "images" / victim.source_path).unlink()
    assert run("preprocess", *common(synthetic, out)) == 1
    assert victim.id in capsys.readouterr().err
    log = json.loads((out / "preprocess_log.json").read_text())
    assert victim.id in log["failures"]


def test_preprocess_empty_manifest(tmp_path):
    out = tmp_path / "out"
    DatasetManifest([], seed=0).save(out / "manifest.json")
    assert run("preprocess", "--images-dir", tmp_path, "--output-dir", out) == 0


def test_oracle_pipeline_is_perfect(synthetic, tmp_path, capsys):
    out = tmp_path / "out"
    run("build", *common(synthetic, out))
    assert run("predict", *common(synthetic, out, "--backend", "oracle")) == 0
    assert run("evaluate", *common(synthetic, out)) == 0
    stage = json.loads((out / "evaluation" / "stage_report.json").read_text())
    det = json.loads((out / "evaluation" / "detection_report.json").read_text())
    assert stage["accuracy"] == 1.0 and det["average_precision"] == 1.0
    for name in ("confusion.png", "pr_curve.png", "pr_curve.csv", "stage_report.txt"):
        assert (out / "evaluation" / name).stat().st_size > 0
    # fused mask channel equals the union of the rasterized annotations
    m = DatasetManifest.load(out / "manifest.json")
    from ropstage.dataset import ground_truth_masks
    for rec in m.by_split(Split.TEST):
        fused = read_fused(out / "fused" / f"{rec.id}.ropf")
        union = np.logical_or.reduce(ground_truth_masks(rec, 64, 64))
        assert np.array_equal(fused.channel1.astype(bool), union)


def test_null_pipeline_predicts_rop_free(synthetic, tmp_path):
    out = tmp_path / "out"
    run("build", *common(synthetic, out))
    assert run("predict", *common(synthetic, out, "--backend", "null")) == 0
    assert all(not read_fused(f).channel1.any() for f in (out / "fused").glob("*.ropf"))
    assert run("evaluate", *common(synthetic, out, "--mode", "stage")) == 0
    stage = json.loads((out / "evaluation" / "stage_report.json").read_text())
    assert stage["accuracy"] == 0.0
    assert stage["confusion_matrix"]["columns"][0] == "RopFree"
    assert [row[0] for row in stage["confusion_matrix"]["counts"]] == [3, 3, 3]


def test_file_backend_filters_by_threshold(synthetic, tmp_path):
    out = tmp_path / "out"
    run("build", *common(synthetic, out))
    m = DatasetManifest.load(out / "manifest.json")
    preds = tmp_path / "external"
    preds.mkdir()
    for rec in m.by_split(Split.TEST):
        keep = np.zeros((64, 64), bool)
        keep[:5, :5] = True
        drop = np.zeros((64, 64), bool)
        drop[10:40, 10:40] = True
        dets = [Detection(keep, StageLabel.STAGE1, 0.9), Detection(drop, StageLabel.STAGE3, 0.7)]
        sidecar_path(preds, rec).write_text(dumps_sidecar(rec, dets))
    assert run("predict", *common(synthetic, out, "--backend", "file", "--file-dir", preds)) == 0
    assert run("evaluate", *common(synthetic, out, "--mode", "stage")) == 0
    stage = json.loads((out / "evaluation" / "stage_report.json").read_text())
    # only the 0.9 Stage-1 detection survives, so every image is called Stage 1
    assert stage["confusion_matrix"]["columns"] == ["Stage1", "Stage2", "Stage3"]
    assert [row[0] for row in stage["confusion_matrix"]["counts"]] == [3, 3, 3]


def test_evaluate_lists_missing_predictions(synthetic, tmp_path, capsys):
    out = tmp_path / "out"
    run("build", *common(synthetic, out))
    assert run("evaluate", *common(synthetic, out)) == 2
    assert "missing predictions" in capsys.readouterr().err


def _pipeline(synthetic, out, seed=4):
    for cmd in ("build", "preprocess", "predict", "evaluate"):
        assert run(cmd, *common(synthetic, out, "--seed", seed)) == 0
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_full_pipeline_rerun_is_byte_identical(synthetic, tmp_path):
    out = tmp_path / "out"
    first = _pipeline(synthetic, out)
    second = _pipeline(synthetic, out)
    assert first.keys() == second.keys()
    assert all(first[k] == second[k] for k in first)


def test_pipeline_outputs_do_not_depend_on_output_location(synthetic, tmp_path):
    a, b = _pipeline(synthetic, tmp_path / "a"), _pipeline(synthetic, tmp_path / "b")
    assert a.keys() == b.keys()
    # logs and JSON reports echo the full config, including the output directory
    echoes = {k for k in a if k.endswith(".json") and not k.startswith("predictions/") and k != "manifest.json"}
    assert all(a[k] == b[k] for k in a.keys() - echoes)
    assert a["manifest.json"] == b["manifest.json"]


def test_report_command(tmp_path, capsys):
    tables = sorted((DATA / "confusion").glob("*.json"))
    assert run("report", *tables, "--output-dir", tmp_path) == 0
    text = capsys.readouterr().out
    assert "0.67" in text and "0.54" in text and "0.47" in text
    for t in tables:
        assert (tmp_path / "report" / f"{t.stem}.png").is_file()
    assert (tmp_path / "report" / "summary.csv").read_text().count("accuracy") == 3


def test_report_plots_pr_csv(tmp_path):
    csv = tmp_path / "pr.csv"
    csv.write_text("confidence,precision,recall\n0.9,1.0,0.5\n0.8,0.5,0.5\n")
    assert run("report", "--pr-csv", csv, "--output-dir", tmp_path) == 0
    assert (tmp_path / "report" / "pr_curve.png").is_file()


def test_config_file_and_env(synthetic, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'seed = 21\nimages_dir = "{synthetic / "images"}"\nvia_json = "{synthetic / "via.json"}"\n'
                   f'output_dir = "{tmp_path / "out"}"\naugment_factor = 2\n[clahe]\ntiles_x = 2\n')
    monkeypatch.setenv("ROPSTAGE_CONFIG", str(cfg))
    assert run("build") == 0
    m = DatasetManifest.load(tmp_path / "out" / "manifest.json")
    assert m.seed == 21 and m.params["clahe"]["tiles_x"] == 2
    assert m.counts()[StageLabel.STAGE1][Split.TRAIN] == 12
    cfg.write_text("bogus_key = 1\n")
    assert run("build") == 2


def test_fixtures_command(tmp_path):
    assert run("fixtures", tmp_path / "fx", "--per-stage", 1, 2, 3) == 0
    assert len(list((tmp_path / "fx" / "images").glob("*.png"))) == 6
