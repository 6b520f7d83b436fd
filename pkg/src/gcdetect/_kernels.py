"""Union-find sweeps for graph-based segmentation.

These inner loops dominate pipeline runtime, so they are numba-compiled by
default. Setting GCDETECT_NO_NUMBA=1 (or a failed numba import) selects the
interpreted fallback, which runs the exact same function body and therefore
produces bit-identical results. benchmarks/bench_kernels.py compares the two.
"""

from __future__ import annotations

import os

import numpy as np


def _segment_components(eu, ev, weights, order, n_px, k, min_size):
    """Felzenszwalb-style component sweep over presorted edges.

    eu/ev: edge endpoints (pixel indices), weights: edge weights, order:
    edge indices in ascending weight order. Components merge when the edge
    weight is within both sides' adaptive thresholds internal + k/size; a
    second ascending sweep then folds components smaller than min_size into
    their most-similar neighbor. Returns the fully flattened parent array.
    """
    parent = np.arange(n_px, dtype=np.int64)
    comp_size = np.ones(n_px, dtype=np.int64)
    threshold = np.full(n_px, k, dtype=np.float64)

    for t in range(order.shape[0]):
        idx = order[t]
        a = eu[idx]
        ra = a
        while parent[ra] != ra:
            ra = parent[ra]
        while parent[a] != ra:
            nxt = parent[a]
            parent[a] = ra
            a = nxt
        b = ev[idx]
        rb = b
        while parent[rb] != rb:
            rb = parent[rb]
        while parent[b] != rb:
            nxt = parent[b]
            parent[b] = rb
            b = nxt
        if ra != rb:
            w = weights[idx]
            if w <= threshold[ra] and w <= threshold[rb]:
                parent[rb] = ra
                comp_size[ra] += comp_size[rb]
                threshold[ra] = w + k / comp_size[ra]

    if min_size > 1:
        for t in range(order.shape[0]):
            idx = order[t]
            a = eu[idx]
            ra = a
            while parent[ra] != ra:
                ra = parent[ra]
            while parent[a] != ra:
                nxt = parent[a]
                parent[a] = ra
                a = nxt
            b = ev[idx]
            rb = b
            while parent[rb] != rb:
                rb = parent[rb]
            while parent[b] != rb:
                nxt = parent[b]
                parent[b] = rb
                b = nxt
            if ra != rb and (comp_size[ra] < min_size or comp_size[rb] < min_size):
                parent[rb] = ra
                comp_size[ra] += comp_size[rb]

    for i in range(n_px):
        r = i
        while parent[r] != r:
            r = parent[r]
        parent[i] = r
    return parent


segment_components_py = _segment_components

_DISABLED = os.environ.get("GCDETECT_NO_NUMBA", "") not in ("", "0")
segment_components_njit = None
if not _DISABLED:
    try:
        from numba import njit

        segment_components_njit = njit(cache=True, nogil=True)(_segment_components)
    except ImportError:
        segment_components_njit = None

segment_components = (
    segment_components_njit if segment_components_njit is not None else segment_components_py
)


def active_backend() -> str:
    return "numba" if segment_components is segment_components_njit else "python"
