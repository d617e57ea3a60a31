"""Command-line entry point: ``ropstage {build,preprocess,predict,evaluate,report,fixtures}``.

Exit codes: 0 success, 1 some records failed, 2 configuration or parse error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .annot import ViaParseError, ViaRegionError, parse_via
from .config import ConfigError, PipelineConfig, load_config, with_overrides
from .dataset import (DatasetManifest, RecordIOError, Split, augment_class, counts_table, fuse,
                      ground_truth_masks, materialize, records_from_via, split, write_fused)
from .detect import PredictionError, dumps_sidecar, extract_stage, load_sidecar, predict, sidecar_path
from .imgcore import write_png
from .metrics import (ConfusionMatrix, average_precision, confusion_matrix, format_report,
                      match_detections, pr_curve, pr_csv, read_pr_csv, report)

log = logging.getLogger("ropstage")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _provenance(cfg: PipelineConfig) -> dict:
    return {"config_hash": cfg.hash(), "config": cfg.to_dict(), "created_by": f"ropstage {__version__}"}


def _safe_name(record_id: str) -> str:
    return record_id.replace("/", "__").replace("\\", "__")


def _require(cfg: PipelineConfig, *names: str, dirs=(), files=()) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise UsageError(f"missing required setting: {name}")
    for name in dirs:
        if not Path(getattr(cfg, name)).is_dir():
            raise UsageError(f"{name} is not a directory: {getattr(cfg, name)}")
    for name in files:
        if not Path(getattr(cfg, name)).is_file():
            raise UsageError(f"{name} does not exist: {getattr(cfg, name)}")


def _manifest_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.manifest) if cfg.manifest else Path(cfg.output_dir) / "manifest.json"


def _load_manifest(cfg: PipelineConfig) -> DatasetManifest:
    path = _manifest_path(cfg)
    try:
        return DatasetManifest.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load manifest {path}: {exc}") from exc


def _run_records(fn, records, workers: int):
    """Apply ``fn`` to each record; returns ``(results, failures)`` in record order."""
    def guarded(record):
        try:
            return fn(record), None
        except (OSError, ValueError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(guarded, records))
    results = {r.id: res for r, (res, err) in zip(records, outcomes) if err is None}
    failures = {r.id: err for r, (res, err) in zip(records, outcomes) if err is not None}
    return results, failures


def _finish(failures: dict, what: str) -> int:
    if failures:
        print(f"{len(failures)} record(s) failed during {what}:", file=sys.stderr)
        for rid, err in sorted(failures.items()):
            print(f"  {rid}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# -- commands ---------------------------------------------------------------

def cmd_build(cfg: PipelineConfig) -> int:
    _require(cfg, "via_json", "images_dir", dirs=["images_dir"], files=["via_json"])
    text = Path(cfg.via_json).read_bytes()
    entries = parse_via(text, stage_key=cfg.stage_key)
    try:
        records = records_from_via(entries, cfg.images_dir)
    except RecordIOError as exc:
        raise UsageError(str(exc)) from exc
    params = {
        "clahe": {"tiles_x": cfg.clahe.tiles_x, "tiles_y": cfg.clahe.tiles_y, "clip_limit": cfg.clahe.clip_limit},
        "output_size": cfg.output_size,
        "stage_key": cfg.stage_key,
        "config_hash": cfg.hash(),
    }
    manifest = split(records, cfg.ratios, cfg.seed, params=params)
    manifest = augment_class(manifest, cfg.target_stage, cfg.augment_factor, cfg.seed)
    manifest.save(_manifest_path(cfg))
    print(counts_table(manifest))
    print(f"manifest: {_manifest_path(cfg)} ({len(manifest.records)} records)")
    return EXIT_OK


def cmd_preprocess(cfg: PipelineConfig) -> int:
    _require(cfg, "images_dir", dirs=["images_dir"])
    manifest = _load_manifest(cfg)
    out = Path(cfg.output_dir) / "preprocessed"

    def work(record):
        path = out / f"{_safe_name(record.id)}.png"
        write_png(path, materialize(record, manifest, cfg.images_dir))
        return str(path)

    written, failures = _run_records(work, manifest.records, cfg.workers)
    _dump_json(Path(cfg.output_dir) / "preprocess_log.json",
               {**_provenance(cfg), "written": sorted(written.values()), "failures": failures})
    print(f"preprocessed {len(written)} of {len(manifest.records)} record(s) into {out}")
    return _finish(failures, "preprocessing")


def cmd_predict(cfg: PipelineConfig) -> int:
    _require(cfg, "images_dir", dirs=["images_dir"])
    if cfg.backend.file_dir and not Path(cfg.backend.file_dir).is_dir():
        raise UsageError(f"prediction directory does not exist: {cfg.backend.file_dir}")
    manifest = _load_manifest(cfg)
    records = manifest.by_split(Split.TEST)
    root = Path(cfg.output_dir)
    config_hash = cfg.hash()

    def work(record):
        img = materialize(record, manifest, cfg.images_dir)
        dets = predict(cfg.backend, record, img, cfg.images_dir)
        mask = np.zeros(img.shape, dtype=bool)
        for d in dets:
            mask |= d.mask
        write_fused(fuse(img, mask), root / "fused" / f"{_safe_name(record.id)}.ropf")
        sidecar = json.loads(dumps_sidecar(record, dets))
        sidecar["config_hash"] = config_hash
        path = sidecar_path(root / "predictions", record)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(sidecar, separators=(",", ":"), sort_keys=True) + "\n")
        return len(dets)

    counts, failures = _run_records(work, records, cfg.workers)
    _dump_json(root / "predict_log.json", {**_provenance(cfg), "detections": counts, "failures": failures})
    print(f"{cfg.backend.kind.value} backend: {sum(counts.values())} detection(s) on {len(counts)} test record(s)")
    return _finish(failures, "prediction")


def cmd_evaluate(cfg: PipelineConfig, mode: str = "both", predictions: str | None = None) -> int:
    manifest = _load_manifest(cfg)
    records = manifest.by_split(Split.TEST)
    pred_dir = Path(predictions) if predictions else Path(cfg.output_dir) / "predictions"
    missing = [r.id for r in records if not sidecar_path(pred_dir, r).is_file()]
    if missing:
        raise UsageError("missing predictions for: " + ", ".join(missing))
    if not records:
        raise UsageError("manifest has no test records")

    from . import plotting

    out = Path(cfg.output_dir) / "evaluation"
    size = manifest.output_size
    pairs, matched, num_gt = [], [], 0
    for record in records:
        try:
            dets = load_sidecar(sidecar_path(pred_dir, record), record.id)
        except PredictionError as exc:
            raise UsageError(str(exc)) from exc
        if mode in ("stage", "both"):
            pairs.append((record.stage, extract_stage(dets).stage))
        if mode in ("detection", "both"):
            gts = ground_truth_masks(record, size, size, cfg.images_dir)
            matched.extend(match_detections(dets, gts, cfg.iou_threshold))
            num_gt += len(gts)

    summary = _provenance(cfg)
    if pairs:
        rep = report(confusion_matrix(pairs))
        text = format_report(rep, "Stage classification")
        (out / "stage_report.txt").parent.mkdir(parents=True, exist_ok=True)
        (out / "stage_report.txt").write_text(text)
        _dump_json(out / "stage_report.json", {**summary, **rep.to_json()})
        plotting.plot_confusion(rep.matrix, out / "confusion.png", "Stage classification")
        print(text, end="")
    if mode in ("detection", "both"):
        curve = pr_curve(matched, num_gt)
        ap = average_precision(curve, cfg.ap_method)
        (out / "pr_curve.csv").write_text(pr_csv(curve))
        _dump_json(out / "detection_report.json", {
            **summary, "average_precision": ap, "ap_method": cfg.ap_method, "num_ground_truth": num_gt,
            "num_detections": len(matched), "true_positives": sum(h for _, h in matched),
            "pr_points": [vars(p) for p in curve.points],
        })
        plotting.plot_pr_curve(curve, out / "pr_curve.png", ap)
        print(f"AP ({cfg.ap_method}) = {ap:.4f} over {len(matched)} detection(s), {num_gt} ground truth(s)")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig, matrices: list[str], pr_csv_path: str | None = None) -> int:
    from . import plotting

    out = Path(cfg.output_dir) / "report"
    rows = []
    for path in matrices:
        try:
            cm = ConfusionMatrix.from_json(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read confusion matrix {path}: {exc}") from exc
        name = Path(path).stem
        rep = report(cm)
        text = format_report(rep, name)
        print(text)
        (out / f"{name}.txt").parent.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.txt").write_text(text)
        _dump_json(out / f"{name}.json", rep.to_json())
        plotting.plot_confusion(cm, out / f"{name}.png", name)
        rows.append((name, rep))
    if rows:
        (out / "summary.csv").write_text(_summary_csv(rows))
    if pr_csv_path:
        points = read_pr_csv(Path(pr_csv_path).read_text())
        plotting.plot_pr_curve(points, out / "pr_curve.png")
    return EXIT_OK


def _summary_csv(rows) -> str:
    lines = ["source,class,precision,recall,f1,support"]
    for name, rep in rows:
        for s, c in rep.per_class.items():
            lines.append(f"{name},{s.value},{c.precision:.6f},{c.recall:.6f},{c.f1:.6f},{c.support}")
        lines.append(f"{name},accuracy,,,{rep.accuracy:.6f},{int(rep.matrix.counts.sum())}")
    return "\n".join(lines) + "\n"


def cmd_fixtures(out_dir: str, per_stage, width: int, height: int, seed: int, stage_key: str) -> int:
    from .fixtures import make_synthetic_dataset

    path = make_synthetic_dataset(out_dir, per_stage, width, height, seed, stage_key)
    print(f"wrote {sum(per_stage)} image(s) and {path}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON config file (default: $ROPSTAGE_CONFIG)")
    p.add_argument("--seed", type=int)
    p.add_argument("--images-dir", dest="images_dir")
    p.add_argument("--via-json", dest="via_json")
    p.add_argument("--manifest")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--tiles-x", dest="tiles_x", type=int)
    p.add_argument("--tiles-y", dest="tiles_y", type=int)
    p.add_argument("--clip-limit", dest="clip_limit", type=float)
    p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "TEST", "VAL"))
    p.add_argument("--augment-factor", dest="augment_factor", type=int)
    p.add_argument("--augment-stage", dest="augment_stage", type=int, choices=(1, 2, 3))
    p.add_argument("--output-size", dest="output_size", type=int)
    p.add_argument("--stage-key", dest="stage_key")
    p.add_argument("--backend", choices=("oracle", "null", "file"))
    p.add_argument("--confidence-threshold", dest="confidence_threshold", type=float)
    p.add_argument("--file-dir", dest="file_dir", help="sidecar directory for the file backend")
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float)
    p.add_argument("--ap-method", dest="ap_method", choices=("envelope", "trapezoid"))


_OVERRIDES = ("seed", "images_dir", "via_json", "manifest", "output_dir", "workers", "tiles_x", "tiles_y",
              "clip_limit", "ratios", "augment_factor", "augment_stage", "output_size", "stage_key", "backend",
              "confidence_threshold", "file_dir", "iou_threshold", "ap_method")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ropstage", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ropstage {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("build", "parse annotations, split and augment; write the manifest"),
        ("preprocess", "materialize every manifest record as a PNG"),
        ("predict", "run a detection backend on the test split; write fused samples"),
        ("evaluate", "score predictions (stage classification and/or detection AP)"),
        ("report", "statistics and figures from confusion-matrix files"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "evaluate":
            p.add_argument("--mode", choices=("stage", "detection", "both"), default="both")
            p.add_argument("--predictions", help="sidecar directory (default: OUTPUT_DIR/predictions)")
        if name == "report":
            p.add_argument("matrices", nargs="*", help="confusion-matrix JSON files")
            p.add_argument("--pr-csv", dest="pr_csv", help="PR curve CSV to plot")
    p = sub.add_parser("fixtures", help="generate a synthetic image set with VIA annotations")
    p.add_argument("out_dir")
    p.add_argument("--per-stage", type=int, nargs=3, default=(6, 6, 6), metavar=("S1", "S2", "S3"))
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=72)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stage-key", dest="stage_key", default="stage")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixtures":
            return cmd_fixtures(args.out_dir, tuple(args.per_stage), args.width, args.height, args.seed,
                                args.stage_key)
        cfg = with_overrides(load_config(args.config), **{k: getattr(args, k) for k in _OVERRIDES})
        if args.command == "build":
            return cmd_build(cfg)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.mode, args.predictions)
        return cmd_report(cfg, args.matrices, args.pr_csv)
    except (ConfigError, UsageError, ViaParseError, ViaRegionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
