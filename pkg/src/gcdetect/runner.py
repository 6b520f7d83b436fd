"""File-level orchestration shared by the CLI subcommands.

Every run writes a run_metadata.json capturing the resolved configuration;
feeding that file back through --config reproduces the outputs byte for
byte (timings live only in the metadata, never in the outputs).
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

from . import __version__
from .classifier import load_model_backend, stub_backend
from .dataset import LabelThresholds, export_dataset, label_proposals, make_examples
from .detector import (
    DetectConfig,
    collect_proposals,
    covered_fraction,
    detect_slide,
    detections_to_annotation,
)
from .errors import InputValidationError
from .evaluate import (
    aggregate_report,
    match_report,
    render_discrepancy_table,
    render_mode_table,
    render_report_json,
)
from .overlay import default_factor, render_overlay
from .selective_search import dump_proposals, to_slide_coords
from .slide_io import (
    load_annotation,
    load_manifest,
    load_slide,
    save_annotation,
    write_image,
)
from .synth import SynthConfig, generate_slide_set
from .tiler import tile_grid


def write_run_metadata(out_dir: Path, command: str, config: dict, timings: dict) -> None:
    payload = {
        "command": command,
        "config": config,
        "package_version": __version__,
        "timings": timings,
    }
    (out_dir / "run_metadata.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def make_backend(stub: bool, model: str | None):
    if stub and model:
        raise InputValidationError("choose either --stub or --model, not both")
    if stub:
        return stub_backend()
    if model:
        return load_model_backend(model)
    raise InputValidationError("detection needs --stub or --model <manifest.json>")


def _load_slides(manifest_path: str | Path):
    for entry in load_manifest(manifest_path):
        yield load_slide(entry.path, entry)


def run_synth(out: str, seed: int, count: int, size: int) -> dict:
    t0 = time.monotonic()
    out_dir = Path(out)
    config = SynthConfig(seed=seed, count=count, size=size)
    manifest = generate_slide_set(out_dir, config)
    timings = {"total_s": time.monotonic() - t0}
    write_run_metadata(
        out_dir, "synth", {"out": out, "seed": seed, "count": count, "size": size}, timings
    )
    return {"manifest": str(manifest), "count": count}


def run_tile(manifest: str, out: str, tile_size: int, pad_edges: bool) -> dict:
    t0 = time.monotonic()
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    with open(out_dir / "tiles.jsonl", "w") as fh:
        for slide in _load_slides(manifest):
            for fp in tile_grid(slide, tile_size, pad_edges=pad_edges):
                rec = {
                    "slide_id": fp.slide_id,
                    "grid_row": fp.grid_row,
                    "grid_col": fp.grid_col,
                    "box": list(fp.box.as_tuple()),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                total += 1
    write_run_metadata(
        out_dir,
        "tile",
        {"manifest": manifest, "out": out, "tile_size": tile_size, "pad_edges": pad_edges},
        {"total_s": time.monotonic() - t0},
    )
    return {"tiles": total}


def _detect_config(flags: dict) -> DetectConfig:
    from .selective_search import SearchConfig

    return DetectConfig(
        mode=flags["mode"],
        tile_size=flags["tile_size"],
        center_size=flags["center_size"],
        input_size=flags["input_size"],
        pad_edges=flags["pad_edges"],
        decision_threshold=flags["decision_threshold"],
        merge_iou=flags["merge_iou"],
        workers=flags["workers"],
        search=SearchConfig(
            k=flags["search_k"],
            min_size=flags["search_min_size"],
            max_proposals=flags["max_proposals"],
        ),
    )


def run_propose(flags: dict) -> dict:
    t0 = time.monotonic()
    out_dir = Path(flags["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _detect_config(flags)
    total = 0
    for slide in _load_slides(flags["manifest"]):
        proposals = collect_proposals(slide, config)
        dump_proposals(out_dir / f"{slide.id}_proposals.jsonl", proposals)
        total += len(proposals)
    write_run_metadata(out_dir, "propose", flags, {"total_s": time.monotonic() - t0})
    return {"proposals": total}


def run_build_dataset(flags: dict) -> dict:
    t0 = time.monotonic()
    out_dir = Path(flags["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _detect_config(flags)
    thresholds = LabelThresholds(positive=flags["pos_iou"], negative=flags["neg_iou"])
    examples = []
    annotations_dir = Path(flags["annotations"])
    for slide in _load_slides(flags["manifest"]):
        gt = load_annotation(
            annotations_dir / f"{slide.id}.json", slide_size=(slide.width, slide.height)
        )
        labeled = label_proposals(collect_proposals(slide, config), gt, thresholds)
        examples.extend(make_examples(labeled, slide, input_size=flags["input_size"]))
    index = export_dataset(
        examples, out_dir, balance_ratio=flags["balance"], seed=flags["seed"]
    )
    write_run_metadata(out_dir, "build-dataset", flags, {"total_s": time.monotonic() - t0})
    with open(index) as fh:
        rows = sum(1 for _ in fh) - 1
    return {"index": str(index), "examples": rows}


def run_detect(flags: dict) -> dict:
    t0 = time.monotonic()
    out_dir = Path(flags["out"])
    det_dir = out_dir / "detections"
    det_dir.mkdir(parents=True, exist_ok=True)
    backend = make_backend(flags["stub"], flags["model"])
    config = _detect_config(flags)
    counts = {}
    for slide in _load_slides(flags["manifest"]):
        detections = detect_slide(slide, backend, config)
        save_annotation(
            det_dir / f"{slide.id}.json", detections_to_annotation(slide.id, detections)
        )
        counts[slide.id] = len(detections)
    write_run_metadata(out_dir, "detect", flags, {"total_s": time.monotonic() - t0})
    return {"detections": counts}


def update_mode_table(path: Path, mode: str, mean_iou: float) -> None:
    rows: dict[str, float] = {}
    if path.is_file():
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            for row in reader:
                if len(row) == 2:
                    rows[row[0]] = float(row[1])
    rows[mode] = mean_iou
    path.write_text(render_mode_table(rows))


def run_eval(flags: dict, covered: dict[str, float] | None = None) -> dict:
    t0 = time.monotonic()
    out_dir = Path(flags["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_dir = Path(flags["pred"])
    ref_dir = Path(flags["ref"])
    reports = []
    for entry in load_manifest(flags["manifest"]):
        size = (entry.width, entry.height)
        pred = load_annotation(pred_dir / f"{entry.id}.json", slide_size=size)
        ref = load_annotation(ref_dir / f"{entry.id}.json", slide_size=size)
        report = match_report(pred, ref, size, match_iou=flags["match_iou"])
        if covered is not None:
            report.covered_fraction = covered.get(entry.id)
        reports.append(report)
    summary = aggregate_report(reports)
    mode_label = flags["mode_label"]
    (out_dir / "report.json").write_text(render_report_json(summary, mode=mode_label))
    (out_dir / "discrepancy.csv").write_text(render_discrepancy_table(summary))
    update_mode_table(out_dir / "report.csv", mode_label, summary.mean_slide_iou)
    write_run_metadata(out_dir, "eval", flags, {"total_s": time.monotonic() - t0})
    return {
        "mean_slide_iou": summary.mean_slide_iou,
        "recall": summary.recall,
        "discrepant": summary.discrepant_total,
    }


def run_overlay(flags: dict) -> dict:
    t0 = time.monotonic()
    out_dir = Path(flags["out"])
    ov_dir = out_dir / "overlays"
    ov_dir.mkdir(parents=True, exist_ok=True)
    source_dirs = [Path(p) for p in flags["sources"]]
    written = 0
    for slide in _load_slides(flags["manifest"]):
        annotations = []
        for d in source_dirs:
            path = d / f"{slide.id}.json"
            if path.is_file():
                annotations.append(
                    load_annotation(path, slide_size=(slide.width, slide.height))
                )
        factor = flags["factor"] or default_factor(slide)
        write_image(ov_dir / f"{slide.id}.png", render_overlay(slide, annotations, factor))
        written += 1
    write_run_metadata(out_dir, "overlay", flags, {"total_s": time.monotonic() - t0})
    return {"overlays": written}


def run_pipeline(flags: dict) -> dict:
    """detect + eval + overlay against ground truth, one mode per call.

    Stage outputs land under <out>/<mode>/ so base and center runs coexist;
    the cross-mode report.csv at <out>/report.csv gains or refreshes this
    mode's row.
    """
    t0 = time.monotonic()
    out_root = Path(flags["out"])
    mode_dir = out_root / flags["mode"]
    mode_dir.mkdir(parents=True, exist_ok=True)
    config = _detect_config(flags)

    detect_flags = dict(flags, out=str(mode_dir))
    result = run_detect(detect_flags)

    covered = {}
    for entry in load_manifest(flags["manifest"]):
        slide = load_slide(entry.path, entry)
        covered[entry.id] = covered_fraction(slide, config)

    eval_flags = dict(
        manifest=flags["manifest"],
        out=str(mode_dir),
        pred=str(mode_dir / "detections"),
        ref=flags["annotations"],
        match_iou=flags["match_iou"],
        mode_label=flags["mode"],
    )
    metrics = run_eval(eval_flags, covered=covered)

    overlay_flags = dict(
        manifest=flags["manifest"],
        out=str(mode_dir),
        sources=[flags["annotations"], str(mode_dir / "detections")],
        factor=flags["overlay_factor"],
    )
    run_overlay(overlay_flags)

    update_mode_table(out_root / "report.csv", flags["mode"], metrics["mean_slide_iou"])
    write_run_metadata(mode_dir, "pipeline", flags, {"total_s": time.monotonic() - t0})
    return {**result, **metrics}
