"""Per-patch region proposals: graph-based over-segmentation followed by
greedy similarity merging, recording a bounding box for every region ever
created.

The initial segmentation builds a 4-connected pixel graph with Euclidean
RGB edge weights and merges components under the adaptive threshold
internal + k/|C| (ascending edge sweep over a union-find, see _kernels).
Merging then repeatedly joins the most similar neighboring pair, where
similarity averages color-histogram intersection, a size term favoring
small regions, and a fill term favoring regions that tile their joint
bounding box.
"""

from __future__ import annotations

import heapq
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InputValidationError
from .geometry import Box

# ---------------------------------------------------------------------------
# configuration and data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    k: float = 150.0
    min_size: int = 20
    max_proposals: int = 64
    hist_bins: int = 25

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise InputValidationError(f"k must be > 0, got {self.k}")
        if self.min_size < 1:
            raise InputValidationError(f"min_size must be >= 1, got {self.min_size}")
        if self.max_proposals < 1:
            raise InputValidationError(f"max_proposals must be >= 1, got {self.max_proposals}")
        if self.hist_bins < 1:
            raise InputValidationError(f"hist_bins must be >= 1, got {self.hist_bins}")


@dataclass(frozen=True, eq=False)
class Segment:
    """A connected region of the initial over-segmentation."""

    id: int
    size: int
    bbox: Box
    histogram: np.ndarray  # (3, hist_bins) float64, each channel row sums to 1


@dataclass(frozen=True)
class RegionProposal:
    """Candidate region box; birth_step 0 marks initial segments."""

    local_box: Box
    birth_step: int
    slide_id: str | None = None
    grid_row: int | None = None
    grid_col: int | None = None
    slide_box: Box | None = None


# ---------------------------------------------------------------------------
# initial segmentation
# ---------------------------------------------------------------------------


def _pixel_edges(patch: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """4-connectivity edges (horizontal block first, then vertical, row-major)."""
    h, w = patch.shape[:2]
    img = patch.astype(np.int64)
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)

    dh = img[:, 1:, :] - img[:, :-1, :]
    wh = np.sqrt(np.einsum("ijk,ijk->ij", dh, dh).astype(np.float64))
    dv = img[1:, :, :] - img[:-1, :, :]
    wv = np.sqrt(np.einsum("ijk,ijk->ij", dv, dv).astype(np.float64))

    eu = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    ev = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    weights = np.concatenate([wh.ravel(), wv.ravel()])
    return eu, ev, weights


def _canonical_labels(parent: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel union-find roots to 0..n-1 in order of first pixel occurrence."""
    uniq, first, inverse = np.unique(parent, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    return rank[inverse], len(uniq)


def segment_labels(patch: np.ndarray, k: float, min_size: int) -> tuple[np.ndarray, int]:
    """Segmentation label map (H, W) with canonical ids, plus segment count."""
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise InputValidationError(f"expected (H, W, 3) patch, got {patch.shape}")
    h, w = patch.shape[:2]
    if h < 2 or w < 2:
        raise InputValidationError(f"patch must be at least 2x2, got {w}x{h}")
    if k <= 0 or min_size < 1:
        raise InputValidationError(f"need k > 0 and min_size >= 1, got k={k} min_size={min_size}")
    eu, ev, weights = _pixel_edges(patch)
    order = np.argsort(weights, kind="stable")
    parent = _kernels.segment_components(eu, ev, weights, order, h * w, float(k), int(min_size))
    labels, count = _canonical_labels(parent)
    return labels.reshape(h, w), count


def _segment_stats(
    patch: np.ndarray, labels: np.ndarray, n: int, bins: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-segment sizes, tight bboxes (n, 4), and L1-normalized histograms."""
    h, w = labels.shape
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n)

    ys, xs = np.divmod(np.arange(h * w, dtype=np.int64), w)
    order = np.argsort(flat, kind="stable")
    starts = np.searchsorted(flat[order], np.arange(n))
    bboxes = np.empty((n, 4), dtype=np.int64)
    bboxes[:, 0] = np.minimum.reduceat(xs[order], starts)
    bboxes[:, 1] = np.minimum.reduceat(ys[order], starts)
    bboxes[:, 2] = np.maximum.reduceat(xs[order], starts) + 1
    bboxes[:, 3] = np.maximum.reduceat(ys[order], starts) + 1

    chan_bins = (patch.astype(np.int64) * bins) // 256  # (h, w, 3) in [0, bins)
    offsets = flat[:, None] * (3 * bins) + np.arange(3)[None, :] * bins
    hist = np.bincount(
        (offsets + chan_bins.reshape(-1, 3)).ravel(), minlength=n * 3 * bins
    ).reshape(n, 3, bins)
    hists = hist.astype(np.float64) / sizes[:, None, None]
    return sizes, bboxes, hists


def segment_initial(patch: np.ndarray, k: float, min_size: int, hist_bins: int = 25) -> list[Segment]:
    """Initial sub-segmentation as Segment records sorted by (bbox.y0, bbox.x0, id)."""
    labels, n = segment_labels(patch, k, min_size)
    sizes, bboxes, hists = _segment_stats(patch, labels, n, hist_bins)
    segments = [
        Segment(
            id=i,
            size=int(sizes[i]),
            bbox=Box(*(int(v) for v in bboxes[i])),
            histogram=hists[i],
        )
        for i in range(n)
    ]
    segments.sort(key=lambda s: (s.bbox.y0, s.bbox.x0, s.id))
    return segments


# ---------------------------------------------------------------------------
# similarity and greedy merging
# ---------------------------------------------------------------------------


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def _similarity(
    size_a: int,
    size_b: int,
    hist_a: np.ndarray,
    hist_b: np.ndarray,
    bbox_a: tuple[int, int, int, int],
    bbox_b: tuple[int, int, int, int],
    patch_area: int,
) -> float:
    s_color = _clamp01(float(np.minimum(hist_a, hist_b).sum()) / 3.0)
    s_size = _clamp01(1.0 - (size_a + size_b) / patch_area)
    ux0 = min(bbox_a[0], bbox_b[0])
    uy0 = min(bbox_a[1], bbox_b[1])
    ux1 = max(bbox_a[2], bbox_b[2])
    uy1 = max(bbox_a[3], bbox_b[3])
    hull = (ux1 - ux0) * (uy1 - uy0)
    s_fill = _clamp01(1.0 - (hull - size_a - size_b) / patch_area)
    return (s_color + s_size + s_fill) / 3.0


def similarity(a: Segment, b: Segment, patch_area: int) -> float:
    """Score in [0, 1]: mean of color, size, and fill components."""
    if a.id == b.id:
        raise InputValidationError("similarity needs two distinct segments")
    return _similarity(
        a.size, b.size, a.histogram, b.histogram,
        a.bbox.as_tuple(), b.bbox.as_tuple(), patch_area,
    )


def _neighbor_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    """Unordered pairs of segment ids sharing a 4-adjacent pixel border."""
    a = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    b = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    diff = a != b
    lo = np.minimum(a[diff], b[diff])
    hi = np.maximum(a[diff], b[diff])
    base = np.int64(labels.max() + 1)
    pairs = np.unique(lo * base + hi)
    return {(int(p // base), int(p % base)) for p in pairs}


def _merge_tree(
    sizes: np.ndarray,
    bboxes: np.ndarray,
    hists: np.ndarray,
    pairs: set[tuple[int, int]],
    patch_area: int,
) -> list[tuple[int, tuple[int, int, int, int]]]:
    """Greedy highest-similarity merging to a single region.

    Returns (birth_step, bbox) for every merged region, birth_step counting
    from 1 in merge order. Ties on similarity break toward the smaller
    (id, id) pair.
    """
    n = len(sizes)
    size = {i: int(sizes[i]) for i in range(n)}
    bbox = {i: tuple(int(v) for v in bboxes[i]) for i in range(n)}
    hist = {i: hists[i] for i in range(n)}
    neighbors: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in pairs:
        neighbors[a].add(b)
        neighbors[b].add(a)

    heap: list[tuple[float, int, int]] = []
    for a, b in pairs:
        heap.append((-_similarity(size[a], size[b], hist[a], hist[b], bbox[a], bbox[b], patch_area), a, b))
    heapq.heapify(heap)

    created: list[tuple[int, tuple[int, int, int, int]]] = []
    next_id = n
    alive = n
    step = 0
    while alive > 1 and heap:
        _, a, b = heapq.heappop(heap)
        if a not in neighbors or b not in neighbors or b not in neighbors[a]:
            continue  # stale entry for a merged-away region
        step += 1
        new_id = next_id
        next_id += 1
        sa, sb = size.pop(a), size.pop(b)
        ha, hb = hist.pop(a), hist.pop(b)
        ba, bb = bbox.pop(a), bbox.pop(b)
        new_size = sa + sb
        new_hist = (sa * ha + sb * hb) / new_size
        new_bbox = (
            min(ba[0], bb[0]), min(ba[1], bb[1]), max(ba[2], bb[2]), max(ba[3], bb[3])
        )
        new_neigh = (neighbors.pop(a) | neighbors.pop(b)) - {a, b}
        size[new_id] = new_size
        hist[new_id] = new_hist
        bbox[new_id] = new_bbox
        neighbors[new_id] = new_neigh
        for m in new_neigh:
            neighbors[m].discard(a)
            neighbors[m].discard(b)
            neighbors[m].add(new_id)
            heapq.heappush(
                heap,
                (
                    -_similarity(size[m], new_size, hist[m], new_hist, bbox[m], new_bbox, patch_area),
                    m,
                    new_id,
                ),
            )
        created.append((step, new_bbox))
        alive -= 1
    return created


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------


def propose(
    patch: np.ndarray,
    config: SearchConfig = SearchConfig(),
    slide_id: str | None = None,
    grid_row: int | None = None,
    grid_col: int | None = None,
) -> list[RegionProposal]:
    """All candidate region boxes for one patch, in tile-local coordinates.

    The list holds the bbox of every initial segment plus every region the
    greedy merging ever created, deduplicated by exact box equality keeping
    the earliest birth step, sorted by (birth_step, y0, x0), and truncated
    to config.max_proposals.
    """
    h, w = patch.shape[:2]
    labels, n = segment_labels(patch, config.k, config.min_size)
    sizes, bboxes, hists = _segment_stats(patch, labels, n, config.hist_bins)

    records: list[tuple[int, tuple[int, int, int, int]]] = [
        (0, tuple(int(v) for v in bboxes[i])) for i in range(n)
    ]
    # merged regions can never displace birth-0 entries in the final ordering,
    # so the merge tree only matters while initial boxes alone cannot fill the quota
    if len({r[1] for r in records}) < config.max_proposals and n > 1:
        records.extend(_merge_tree(sizes, bboxes, hists, _neighbor_pairs(labels), h * w))

    earliest: dict[tuple[int, int, int, int], int] = {}
    for birth, box in records:
        if box not in earliest:
            earliest[box] = birth
    ordered = sorted(earliest.items(), key=lambda kv: (kv[1], kv[0][1], kv[0][0], kv[0][2], kv[0][3]))
    ordered = ordered[: config.max_proposals]

    return [
        RegionProposal(
            local_box=Box(*box),
            birth_step=birth,
            slide_id=slide_id,
            grid_row=grid_row,
            grid_col=grid_col,
        )
        for box, birth in ordered
    ]


def to_slide_coords(
    proposal: RegionProposal,
    tile_origin: tuple[int, int],
    crop_offset: tuple[int, int] = (0, 0),
    bounds: tuple[int, int] | None = None,
) -> RegionProposal:
    """Translate a tile-local proposal into slide coordinates."""
    dx = tile_origin[0] + crop_offset[0]
    dy = tile_origin[1] + crop_offset[1]
    slide_box = proposal.local_box.translate(dx, dy)
    if bounds is not None:
        width, height = bounds
        if not Box(0, 0, width, height).contains(slide_box):
            raise InputValidationError(
                f"proposal {slide_box.as_tuple()} overflows slide bounds {width}x{height}"
            )
    return replace(proposal, slide_box=slide_box)


def propose_patches(
    patches: list[np.ndarray], config: SearchConfig = SearchConfig(), workers: int = 1
) -> list[list[RegionProposal]]:
    """propose() over many patches; output order follows input regardless of workers."""
    if workers <= 1:
        return [propose(p, config) for p in patches]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: propose(p, config), patches))


def proposal_record(p: RegionProposal) -> dict:
    rec = {
        "slide_id": p.slide_id,
        "grid_row": p.grid_row,
        "grid_col": p.grid_col,
        "local_box": list(p.local_box.as_tuple()),
        "slide_box": list(p.slide_box.as_tuple()) if p.slide_box else None,
        "birth_step": p.birth_step,
    }
    return rec


def dump_proposals(path: str | Path, proposals: list[RegionProposal]) -> None:
    """Debug dump: one JSON record per proposal per line."""
    with open(path, "w") as fh:
        for p in proposals:
            fh.write(json.dumps(proposal_record(p), sort_keys=True) + "\n")


def dumps_proposals(proposals: list[RegionProposal]) -> str:
    return "".join(json.dumps(proposal_record(p), sort_keys=True) + "\n" for p in proposals)
