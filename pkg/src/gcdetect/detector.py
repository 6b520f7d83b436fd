"""Per-slide detection flow: tile, crop per mode, propose, score, threshold,
map to slide coordinates, and merge surviving boxes into final ROIs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import score_batch
from .errors import InputValidationError, PipelineError
from .geometry import Box, merge_connected_groups
from .selective_search import RegionProposal, SearchConfig, propose, to_slide_coords
from .slide_io import Slide, SlideAnnotation
from .tiler import (
    PipelineMode,
    TileFootprint,
    center_crop,
    load_tile,
    resize_to_input,
    tile_grid,
)


@dataclass(frozen=True)
class Detection:
    slide_box: Box
    confidence: float
    contributor_count: int

    def __post_init__(self) -> None:
        if self.contributor_count < 1:
            raise InputValidationError("detection needs at least one contributor")


@dataclass(frozen=True)
class DetectConfig:
    mode: str = "center"
    tile_size: int = 244
    center_size: int = 199
    input_size: int = 224
    pad_edges: bool = False
    decision_threshold: float = 0.5
    merge_iou: float = 0.2
    workers: int = 1
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self) -> None:
        PipelineMode(self.mode, self.center_size)  # validates mode/crop pairing
        if self.tile_size < 2:
            raise InputValidationError(f"tile_size must be >= 2, got {self.tile_size}")
        if not 0.0 < self.merge_iou <= 1.0:
            raise InputValidationError(f"merge_iou must be in (0, 1], got {self.merge_iou}")
        if self.workers < 1:
            raise InputValidationError(f"workers must be >= 1, got {self.workers}")

    def pipeline_mode(self) -> PipelineMode:
        return PipelineMode(self.mode, self.center_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "DetectConfig":
        payload = dict(payload)
        search = payload.pop("search", {})
        return cls(**payload, search=SearchConfig(**search))


def _tile_patch(slide: Slide, fp: TileFootprint, config: DetectConfig):
    """Extract the patch this mode classifies plus its offset inside the tile."""
    tile = load_tile(slide, fp, pad_edges=config.pad_edges)
    if config.mode == "center":
        patch, crop_box = center_crop(tile, config.center_size)
        return tile, patch, crop_box.x0 - tile.box.x0
    return tile, tile.pixels, 0


def _map_tiles(slide: Slide, config: DetectConfig, worker):
    footprints = tile_grid(slide, config.tile_size, pad_edges=config.pad_edges)
    if not footprints:
        return []

    def run(fp: TileFootprint):
        try:
            return worker(fp)
        except PipelineError as exc:
            raise type(exc)(
                f"slide {slide.id!r} tile (row={fp.grid_row}, col={fp.grid_col}): {exc}"
            ) from exc

    if config.workers <= 1:
        per_tile = [run(fp) for fp in footprints]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            per_tile = list(pool.map(run, footprints))
    return [item for tile_items in per_tile for item in tile_items]


def collect_proposals(slide: Slide, config: DetectConfig = DetectConfig()) -> list[RegionProposal]:
    """Slide-coordinate proposals for every tile, unscored, in tile order."""

    def worker(fp: TileFootprint):
        tile, patch, offset = _tile_patch(slide, fp, config)
        proposals = propose(
            patch, config.search,
            slide_id=tile.slide_id, grid_row=tile.grid_row, grid_col=tile.grid_col,
        )
        return [
            to_slide_coords(
                p, (tile.box.x0, tile.box.y0), (offset, offset),
                bounds=None if config.pad_edges else (slide.width, slide.height),
            )
            for p in proposals
        ]

    return _map_tiles(slide, config, worker)


def collect_scored_proposals(
    slide: Slide, backend, config: DetectConfig = DetectConfig()
) -> list[tuple[RegionProposal, float]]:
    """Every proposal with its roi probability; independent of worker count."""

    def worker(fp: TileFootprint):
        tile, patch, offset = _tile_patch(slide, fp, config)
        proposals = propose(
            patch, config.search,
            slide_id=tile.slide_id, grid_row=tile.grid_row, grid_col=tile.grid_col,
        )
        if not proposals:
            return []
        crops = [
            resize_to_input(patch[p.local_box.y0 : p.local_box.y1,
                                  p.local_box.x0 : p.local_box.x1], config.input_size)
            for p in proposals
        ]
        scores = score_batch(backend, crops)
        placed = [
            to_slide_coords(
                p, (tile.box.x0, tile.box.y0), (offset, offset),
                bounds=None if config.pad_edges else (slide.width, slide.height),
            )
            for p in proposals
        ]
        return [(p, s.p_roi) for p, s in zip(placed, scores)]

    return _map_tiles(slide, config, worker)


def detect_slide(
    slide: Slide, backend, config: DetectConfig = DetectConfig()
) -> list[Detection]:
    """Final merged detections for one slide, sorted by (y0, x0)."""
    scored = collect_scored_proposals(slide, backend, config)
    kept = [(p.slide_box, score) for p, score in scored if score >= config.decision_threshold]
    if not kept:
        return []
    merged = merge_connected_groups([box for box, _ in kept], config.merge_iou)
    detections = [
        Detection(
            slide_box=box,
            confidence=max(kept[i][1] for i in members),
            contributor_count=len(members),
        )
        for box, members in merged
    ]
    detections.sort(key=lambda d: (d.slide_box.y0, d.slide_box.x0))
    return detections


def detections_to_annotation(slide_id: str, detections: list[Detection]) -> SlideAnnotation:
    return SlideAnnotation(slide_id, "model", [d.slide_box for d in detections])


def covered_fraction(slide: Slide, config: DetectConfig) -> float:
    """Fraction of slide area the classified patches actually see.

    Center mode leaves unclassified gutters between crops; reports carry
    this number so those blind spots stay visible.
    """
    footprints = tile_grid(slide, config.tile_size, pad_edges=config.pad_edges)
    if not footprints:
        return 0.0
    mode = config.pipeline_mode()
    off = mode.crop_offset(config.tile_size)
    patch = mode.patch_size(config.tile_size)
    total = 0
    for fp in footprints:
        x0, y0 = fp.box.x0 + off, fp.box.y0 + off
        x1 = min(x0 + patch, slide.width)
        y1 = min(y0 + patch, slide.height)
        total += max(0, x1 - x0) * max(0, y1 - y0)
    return total / (slide.width * slide.height)
