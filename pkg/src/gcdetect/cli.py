"""Command-line entry point.

Subcommands: synth, tile, propose, build-dataset, detect, eval, overlay,
pipeline. A JSON config file (--config) can supply any flag; flags given on
the command line win. run_metadata.json files written by previous runs are
valid config files, which is how reruns reproduce outputs exactly.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .errors import DataIOError, InputValidationError, PipelineError

log = logging.getLogger("gcdetect")

DETECT_DEFAULTS = {
    "mode": "center",
    "tile_size": 244,
    "center_size": 199,
    "input_size": 224,
    "pad_edges": False,
    "decision_threshold": 0.5,
    "merge_iou": 0.2,
    "search_k": 150.0,
    "search_min_size": 20,
    "max_proposals": 64,
    "workers": 1,
    "seed": 0,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on bad usage, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_detect_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["base", "center"])
    p.add_argument("--tile-size", type=int, dest="tile_size")
    p.add_argument("--center-size", type=int, dest="center_size")
    p.add_argument("--input-size", type=int, dest="input_size")
    p.add_argument("--pad-edges", action=argparse.BooleanOptionalAction, dest="pad_edges")
    p.add_argument("--decision-threshold", type=float, dest="decision_threshold")
    p.add_argument("--merge-iou", type=float, dest="merge_iou")
    p.add_argument("--search-k", type=float, dest="search_k")
    p.add_argument("--search-min-size", type=int, dest="search_min_size")
    p.add_argument("--max-proposals", type=int, dest="max_proposals")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stub", action=argparse.BooleanOptionalAction)
    p.add_argument("--model", help="model manifest JSON exported by the trainer")


def build_parser() -> _Parser:
    parser = _Parser(prog="gcdetect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="JSON file supplying flag defaults")
        return p

    p = add("synth", help="generate a synthetic slide set with ground truth")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)

    p = add("tile", help="write the tile grid of every slide")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--tile-size", type=int, dest="tile_size")
    p.add_argument("--pad-edges", action=argparse.BooleanOptionalAction, dest="pad_edges")

    p = add("propose", help="dump selective-search proposals per slide")
    p.add_argument("--manifest")
    p.add_argument("--out")
    _add_detect_flags(p)

    p = add("build-dataset", help="label proposals against ground truth and export crops")
    p.add_argument("--manifest")
    p.add_argument("--annotations", help="directory of ground-truth annotation JSONs")
    p.add_argument("--out")
    p.add_argument("--pos-iou", type=float, dest="pos_iou")
    p.add_argument("--neg-iou", type=float, dest="neg_iou")
    p.add_argument("--balance", type=float)
    _add_detect_flags(p)

    p = add("detect", help="run detection and write annotation JSONs")
    p.add_argument("--manifest")
    p.add_argument("--out")
    _add_backend_flags(p)
    _add_detect_flags(p)

    p = add("eval", help="score predicted annotations against references")
    p.add_argument("--manifest")
    p.add_argument("--pred", help="directory of predicted annotation JSONs")
    p.add_argument("--ref", help="directory of reference annotation JSONs")
    p.add_argument("--out")
    p.add_argument("--match-iou", type=float, dest="match_iou")
    p.add_argument("--mode-label", dest="mode_label")

    p = add("overlay", help="render annotation overlays on downsampled slides")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--sources", nargs="+", help="annotation directories, drawn in order")
    p.add_argument("--overlay-factor", type=int, dest="factor")

    p = add("pipeline", help="detect + eval + overlay against ground truth")
    p.add_argument("--manifest")
    p.add_argument("--annotations", help="directory of ground-truth annotation JSONs")
    p.add_argument("--out")
    p.add_argument("--match-iou", type=float, dest="match_iou")
    p.add_argument("--overlay-factor", type=int, dest="overlay_factor")
    _add_backend_flags(p)
    _add_detect_flags(p)

    return parser


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise DataIOError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputValidationError(f"config file {p} is not valid JSON: {exc}")
    if isinstance(payload, dict) and isinstance(payload.get("config"), dict):
        return payload["config"]  # run_metadata.json files work as configs
    if not isinstance(payload, dict):
        raise InputValidationError(f"config file {p} must hold a JSON object")
    return payload


def _resolve(args: argparse.Namespace, defaults: dict, required: tuple[str, ...] = ()) -> dict:
    config = _load_config(getattr(args, "config", None))
    flags = {}
    for key, fallback in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, fallback)
        flags[key] = value
    missing = [k for k in required if flags.get(k) in (None, [])]
    if missing:
        raise InputValidationError(
            f"missing required flags: {', '.join('--' + m.replace('_', '-') for m in missing)}"
        )
    return flags


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = _dispatch(args)
    except InputValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


def _dispatch(args: argparse.Namespace) -> dict:
    cmd = args.command
    if cmd == "synth":
        flags = _resolve(
            args, {"out": None, "seed": 0, "count": 10, "size": 1024}, required=("out",)
        )
        return runner.run_synth(**flags)

    if cmd == "tile":
        flags = _resolve(
            args,
            {"manifest": None, "out": None, "tile_size": 244, "pad_edges": False},
            required=("manifest", "out"),
        )
        return runner.run_tile(**flags)

    if cmd == "propose":
        flags = _resolve(
            args, {"manifest": None, "out": None, **DETECT_DEFAULTS},
            required=("manifest", "out"),
        )
        return runner.run_propose(flags)

    if cmd == "build-dataset":
        flags = _resolve(
            args,
            {
                "manifest": None, "annotations": None, "out": None,
                "pos_iou": 0.5, "neg_iou": 0.3, "balance": 3.0, **DETECT_DEFAULTS,
            },
            required=("manifest", "annotations", "out"),
        )
        return runner.run_build_dataset(flags)

    if cmd == "detect":
        flags = _resolve(
            args,
            {"manifest": None, "out": None, "stub": False, "model": None, **DETECT_DEFAULTS},
            required=("manifest", "out"),
        )
        return runner.run_detect(flags)

    if cmd == "eval":
        flags = _resolve(
            args,
            {
                "manifest": None, "pred": None, "ref": None, "out": None,
                "match_iou": 0.5, "mode_label": "model",
            },
            required=("manifest", "pred", "ref", "out"),
        )
        return runner.run_eval(flags)

    if cmd == "overlay":
        flags = _resolve(
            args,
            {"manifest": None, "out": None, "sources": None, "factor": None},
            required=("manifest", "out", "sources"),
        )
        return runner.run_overlay(flags)

    if cmd == "pipeline":
        flags = _resolve(
            args,
            {
                "manifest": None, "annotations": None, "out": None,
                "stub": False, "model": None, "match_iou": 0.5,
                "overlay_factor": None, **DETECT_DEFAULTS,
            },
            required=("manifest", "annotations", "out"),
        )
        return runner.run_pipeline(flags)

    raise InputValidationError(f"unknown command {cmd!r}")


if __name__ == "__main__":
    sys.exit(main())
