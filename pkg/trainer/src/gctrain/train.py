"""Fine-tuning loop: Adam at 1e-4 on categorical cross-entropy."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset
from .model import preprocess


@dataclass
class TrainConfig:
    index: str
    learning_rate: float = 0.0001
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    stop_accuracy: float | None = None  # stop early once training accuracy reaches this


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class History:
    epochs: list[EpochStats] = field(default_factory=list)

    def final_accuracy(self) -> float:
        return self.epochs[-1].accuracy if self.epochs else 0.0

    def to_json(self) -> str:
        return json.dumps([asdict(e) for e in self.epochs], indent=2) + "\n"


class TrainingError(RuntimeError):
    pass


def train(model: torch.nn.Module, dataset: Dataset, config: TrainConfig) -> History:
    """Train in place; returns per-epoch loss/accuracy measured on the
    training batches themselves."""
    if len(np.unique(dataset.labels)) < 2:
        raise TrainingError("single-label dataset: training needs both classes")
    torch.manual_seed(config.seed)

    images = torch.from_numpy(dataset.images)
    labels = torch.from_numpy(dataset.labels)
    n = len(dataset)

    criterion = torch.nn.CrossEntropyLoss()
    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=config.learning_rate
    )
    generator = torch.Generator().manual_seed(config.seed)

    history = History()
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = torch.randperm(n, generator=generator)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = preprocess(images[idx])
            target = labels[idx]
            optimizer.zero_grad()
            logits = model(batch)
            loss = criterion(logits, target)
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * len(idx)
            correct += int((logits.detach().argmax(dim=1) == target).sum())
        stats = EpochStats(epoch=epoch, loss=loss_sum / n, accuracy=correct / n)
        if not math.isfinite(stats.loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}: {stats.loss}")
        history.epochs.append(stats)
        if config.stop_accuracy is not None and stats.accuracy >= config.stop_accuracy:
            break
    model.eval()
    return history


def save_history(path: str | Path, history: History) -> None:
    Path(path).write_text(history.to_json())
