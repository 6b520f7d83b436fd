"""Trainer command line: gctrain train --index ... --out ..."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .data import DatasetError, load_dataset
from .export import ExportError, export_model
from .model import ModelBuildError, PretrainedWeightsUnavailable, build_model
from .train import TrainConfig, TrainingError, save_history, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gctrain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="fine-tune the classifier and export it")
    p.add_argument("--index", required=True, help="dataset index.csv from the detector export")
    p.add_argument("--out", required=True, help="output directory for model + manifest")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--learning-rate", type=float, default=0.0001, dest="learning_rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop-accuracy", type=float, default=None, dest="stop_accuracy")
    p.add_argument(
        "--pretrained", action=argparse.BooleanOptionalAction, default=True,
        help="start from ImageNet weights (requires download or cache)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dataset = load_dataset(args.index)
        model, counts = build_model(pretrained=args.pretrained)
        config = TrainConfig(
            index=args.index,
            learning_rate=args.learning_rate,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
            stop_accuracy=args.stop_accuracy,
        )
        history = train(model, dataset, config)

        roi_indices = np.nonzero(dataset.labels == 1)[0]
        sample = dataset.images[int(roi_indices[0])]
        metadata = {
            "epochs_run": len(history.epochs),
            "final_accuracy": history.final_accuracy(),
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "pretrained": bool(args.pretrained),
            "trainable_parameters": counts[0],
            "non_trainable_parameters": counts[1],
        }
        manifest = export_model(model, args.out, sample, metadata=metadata)
        save_history(f"{args.out}/history.json", history)
    except (DatasetError, ModelBuildError, TrainingError, ExportError,
            PretrainedWeightsUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"manifest": str(manifest), **metadata}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
