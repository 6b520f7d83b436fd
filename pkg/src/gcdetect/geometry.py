"""Exact integer rectangle arithmetic.

Boxes are half-open pixel intervals [x0, x1) x [y0, y1), so the area
formula agrees exactly with counting lattice pixels and IoU values are
exact rationals evaluated in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputValidationError


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned rectangle in level-0 slide pixels, half-open."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if not all(isinstance(v, int) for v in (self.x0, self.y0, self.x1, self.y1)):
            raise InputValidationError(f"box coordinates must be integers: {self!r}")
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InputValidationError(
                f"empty box: need x0 < x1 and y0 < y1, got ({self.x0},{self.y0},{self.x1},{self.y1})"
            )

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.y0, self.x0, self.x1, self.y1)

    def translate(self, dx: int, dy: int) -> "Box":
        return Box(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def contains(self, other: "Box") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and other.x1 <= self.x1
            and other.y1 <= self.y1
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


def intersection_area(a: Box, b: Box) -> int:
    """Pixel count of a's overlap with b; 0 when disjoint."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def union_bbox(boxes: list[Box]) -> Box:
    """Smallest box enclosing every input box."""
    if not boxes:
        raise InputValidationError("union_bbox needs at least one box")
    return Box(
        min(b.x0 for b in boxes),
        min(b.y0 for b in boxes),
        max(b.x1 for b in boxes),
        max(b.y1 for b in boxes),
    )


def _merge_pass(boxes: list[Box], groups: list[list[int]], threshold: float):
    """One connected-component pass. Returns (boxes, groups, changed)."""
    n = len(boxes)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    changed = False
    for i in range(n):
        for j in range(i + 1, n):
            if iou(boxes[i], boxes[j]) >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
                    changed = True
    if not changed:
        return boxes, groups, False

    members: dict[int, list[int]] = {}
    for i in range(n):
        members.setdefault(find(i), []).append(i)
    out_boxes: list[Box] = []
    out_groups: list[list[int]] = []
    for root in sorted(members):
        idxs = members[root]
        out_boxes.append(union_bbox([boxes[i] for i in idxs]))
        out_groups.append(sorted(g for i in idxs for g in groups[i]))
    return out_boxes, out_groups, True


def merge_connected_groups(
    boxes: list[Box], iou_threshold: float
) -> list[tuple[Box, list[int]]]:
    """Merge transitively-overlapping boxes, keeping member indices.

    Boxes whose pairwise IoU meets the threshold belong to one group; each
    group collapses to its union bounding box. Merging repeats until the
    result is stable, so the operation is idempotent. Returns
    (union box, sorted original indices) pairs sorted by box position.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise InputValidationError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not boxes:
        return []
    cur_boxes = list(boxes)
    cur_groups: list[list[int]] = [[i] for i in range(len(boxes))]
    while True:
        cur_boxes, cur_groups, changed = _merge_pass(cur_boxes, cur_groups, iou_threshold)
        if not changed:
            break
    order = sorted(range(len(cur_boxes)), key=lambda i: cur_boxes[i].sort_key())
    return [(cur_boxes[i], cur_groups[i]) for i in order]


def merge_connected(boxes: list[Box], iou_threshold: float) -> list[Box]:
    """Union bounding boxes of IoU-connected components, sorted by position."""
    return [box for box, _ in merge_connected_groups(boxes, iou_threshold)]
