"""Pareto dominance, non-dominated filtering, and exact hypervolume (2-D/3-D).

All objectives are minimized.  Hypervolume of a point set w.r.t. a reference
point ``ref`` is the Lebesgue measure of the union of boxes [p, ref]; it is
computed by a staircase sweep in 2-D and by z-slicing in 3-D.  A disjoint box
decomposition of the dominated region is exposed for fast vectorized
single-point improvement queries.
"""

from __future__ import annotations

import numpy as np

from .records import EvaluationRecord, ObjectiveVector, normalize_subset


def dominates(a: ObjectiveVector, b: ObjectiveVector, subset=None) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere on the subset and differs."""
    va = a.values(subset)
    vb = b.values(subset)
    return all(x <= y for x, y in zip(va, vb)) and va != vb


def non_dominated_mask(values: np.ndarray) -> np.ndarray:
    """Boolean mask of rows not dominated by any other row (duplicates all kept).

    Iterative pruning: each surviving row eliminates every row it strictly
    dominates, so the loop body runs once per eventual survivor.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        better_somewhere = np.any(values[keep] < values[i], axis=1)
        equal = np.all(values[keep] == values[i], axis=1)
        keep[keep] = better_somewhere | equal
        keep[i] = True
    return keep


def pareto_filter(records: list[EvaluationRecord], subset=None) -> list[EvaluationRecord]:
    """Records not dominated by any other record on the subset, original order kept."""
    if not records:
        return []
    sel = normalize_subset(subset)
    values = np.array([r.objectives.values(sel) for r in records], dtype=float)
    mask = non_dominated_mask(values)
    return [r for r, m in zip(records, mask) if m]


def _filter_interior(values: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Keep only points strictly better than ref on every axis; others add no volume."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values.reshape(0, ref.shape[0])
    return values[np.all(values < ref, axis=1)]


def _staircase_2d(values: np.ndarray) -> np.ndarray:
    """Strictly improving staircase (x ascending, y descending) of a 2-D point set."""
    order = np.lexsort((values[:, 1], values[:, 0]))
    pts = values[order]
    stairs: list[np.ndarray] = []
    best_y = np.inf
    for p in pts:
        if p[1] < best_y:
            stairs.append(p)
            best_y = p[1]
    return np.array(stairs)


def _hv2d(values: np.ndarray, ref: np.ndarray) -> float:
    pts = _filter_interior(values, ref)
    if pts.shape[0] == 0:
        return 0.0
    stairs = _staircase_2d(pts)
    xs = np.append(stairs[:, 0], ref[0])
    return float(np.sum((xs[1:] - xs[:-1]) * (ref[1] - stairs[:, 1])))


def _hv3d(values: np.ndarray, ref: np.ndarray) -> float:
    pts = _filter_interior(values, ref)
    if pts.shape[0] == 0:
        return 0.0
    z_levels = np.unique(pts[:, 2])
    hv = 0.0
    for i, z in enumerate(z_levels):
        z_next = z_levels[i + 1] if i + 1 < len(z_levels) else ref[2]
        active = pts[pts[:, 2] <= z]
        hv += _hv2d(active[:, :2], ref[:2]) * (z_next - z)
    return hv


def hypervolume_values(values: np.ndarray, ref: np.ndarray) -> float:
    """Hypervolume of raw value rows w.r.t. ``ref`` (1-D trivial, 2-D sweep, 3-D slices)."""
    values = np.asarray(values, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if values.ndim != 2 or values.shape[1] != ref.shape[0]:
        raise ValueError("values must be (n, d) matching the reference dimension")
    d = ref.shape[0]
    if d == 1:
        pts = _filter_interior(values, ref)
        return float(ref[0] - pts.min()) if pts.size else 0.0
    if d == 2:
        return _hv2d(values, ref)
    if d == 3:
        return _hv3d(values, ref)
    raise ValueError(f"hypervolume supports 1-3 objectives, got {d}")


def hypervolume(points: list[ObjectiveVector], ref: ObjectiveVector, subset=None) -> float:
    """Hypervolume of objective vectors over the chosen subset (size 2 or 3).

    Points that do not strictly dominate the reference are excluded, not errors.
    """
    sel = normalize_subset(subset)
    ref_v = np.asarray(ref.values(sel), dtype=float)
    vals = np.array([p.values(sel) for p in points], dtype=float).reshape(len(points), len(sel))
    return hypervolume_values(vals, ref_v)


def _staircase_rects(pts2: np.ndarray, ref2: np.ndarray) -> set[tuple[float, float, float]]:
    """Disjoint x-slabs (x_lo, y_lo, x_hi) covering the 2-D dominated region."""
    stairs = _staircase_2d(pts2)
    xs = np.append(stairs[:, 0], ref2[0])
    return {(float(x), float(y), float(xs[i + 1])) for i, (x, y) in enumerate(stairs)}


def dominated_boxes(values: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Disjoint boxes (m, 2, d) whose union is the region dominated by ``values``.

    Each box is [lower, upper] with upper <= ref componentwise.  2-D uses the
    staircase directly.  3-D sweeps z-levels and extends each staircase slab
    across consecutive levels while it survives unchanged, so the box count
    stays near-linear in the number of points.
    """
    values = np.asarray(values, dtype=float)
    ref = np.asarray(ref, dtype=float)
    d = ref.shape[0]
    pts = _filter_interior(values, ref)
    if pts.shape[0] == 0:
        return np.empty((0, 2, d))
    if d == 1:
        return np.array([[[pts.min()], [ref[0]]]])
    if d == 2:
        return np.array([[[x, y], [x_hi, ref[1]]] for x, y, x_hi in _staircase_rects(pts, ref)])
    if d == 3:
        order = np.argsort(pts[:, 2], kind="stable")
        pts = pts[order]
        z_levels = np.unique(pts[:, 2])
        open_rects: dict[tuple[float, float, float], float] = {}
        boxes: list[list[list[float]]] = []

        def close(rect, z_end):
            z_start = open_rects.pop(rect)
            x, y, x_hi = rect
            boxes.append([[x, y, z_start], [x_hi, ref[1], z_end]])

        for z in z_levels:
            rects = _staircase_rects(pts[pts[:, 2] <= z, :2], ref[:2])
            for rect in [r for r in open_rects if r not in rects]:
                close(rect, z)
            for rect in rects:
                open_rects.setdefault(rect, z)
        for rect in list(open_rects):
            close(rect, float(ref[2]))
        return np.array(boxes)
    raise ValueError(f"dominated_boxes supports 1-3 objectives, got {d}")


def hypervolume_improvements(
    front_values: np.ndarray, ref: np.ndarray, samples: np.ndarray
) -> np.ndarray:
    """Per-sample hypervolume gain of adding one point to a fixed front.

    For sample s,  HVI(s) = vol([s, ref]) - vol([s, ref] ∩ dominated(front)),
    and each intersection with a decomposition box [l, u] has volume
    prod_j max(0, u_j - max(l_j, s_j)).  Vectorized over samples.
    """
    ref = np.asarray(ref, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    own = np.prod(np.maximum(ref[None, :] - samples, 0.0), axis=1)
    boxes = dominated_boxes(front_values, ref)
    if boxes.shape[0] == 0:
        return own
    lower = boxes[:, 0, :]  # (m, d)
    upper = boxes[:, 1, :]
    out = np.empty(samples.shape[0])
    # Chunk to bound the (chunk, m, d) intermediate.
    chunk = max(1, int(32_000_000 // max(boxes.shape[0] * ref.shape[0], 1)))
    for start in range(0, samples.shape[0], chunk):
        s = samples[start : start + chunk]
        clipped_lo = np.maximum(lower[None, :, :], s[:, None, :])
        edge = np.maximum(upper[None, :, :] - clipped_lo, 0.0)
        out[start : start + chunk] = np.prod(edge, axis=2).sum(axis=1)
    return np.maximum(own - out, 0.0)
