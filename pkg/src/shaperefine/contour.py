"""Closed-boundary extraction from binary slices.

Pipeline: keep the largest 8-connected foreground component, walk its outer
boundary with Moore-neighbor tracing (clockwise in image coordinates, y
down), then resample the closed polygon uniformly by arc length so that
descriptors computed downstream compare like against like.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateShapeError, EmptyShapeError
from .volume import MaskSlice

# Moore neighbourhood in clockwise order (x right, y down), starting west.
_DIRS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}


@dataclass(frozen=True)
class Contour:
    """Ordered closed curve; the last point connects back to the first."""

    points: np.ndarray = field(repr=False)  # (N, 2) float64, columns (x, y)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must be (N, 2), got {pts.shape}")
        n = pts.shape[0]
        if n < 3:
            raise DegenerateShapeError(f"contour needs at least 3 points, got {n}")
        nxt = np.roll(pts, -1, axis=0)
        if (np.abs(pts - nxt).max(axis=1) == 0.0).any():
            raise DegenerateShapeError("consecutive contour points must be distinct")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def perimeter(self) -> float:
        seg = np.roll(self.points, -1, axis=0) - self.points
        return float(np.sqrt((seg ** 2).sum(axis=1)).sum())

    def translated(self, dx: float, dy: float) -> "Contour":
        return Contour(self.points + np.array([dx, dy]))

    def scaled(self, factor: float) -> "Contour":
        return Contour(self.points * float(factor))

    def rotated(self, radians: float) -> "Contour":
        c, s = np.cos(radians), np.sin(radians)
        rot = np.array([[c, -s], [s, c]])
        return Contour(self.points @ rot.T)

    def rolled(self, offset: int) -> "Contour":
        """Same curve with a different starting point."""
        return Contour(np.roll(self.points, -offset, axis=0))


def largest_component(s: MaskSlice) -> MaskSlice:
    """Keep only the largest 8-connected foreground component.

    Ties break toward the component whose first pixel comes earliest in
    row-major order; BFS over raster-order seeds makes that deterministic.
    """
    mask = s.array
    if mask.sum() == 0:
        raise EmptyShapeError("slice has no foreground pixels")
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    sizes = []
    for y0 in range(h):
        for x0 in range(w):
            if mask[y0, x0] == 0 or labels[y0, x0] != 0:
                continue
            label = len(sizes) + 1
            labels[y0, x0] = label
            queue = deque([(x0, y0)])
            size = 0
            while queue:
                x, y = queue.popleft()
                size += 1
                for dx, dy in _DIRS:
                    nx, ny = x + dx, y + dy
                    if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] == 1 and labels[ny, nx] == 0:
                        labels[ny, nx] = label
                        queue.append((nx, ny))
            sizes.append(size)
    best = int(np.argmax(sizes)) + 1  # argmax keeps the earliest label on ties
    return MaskSlice.from_array((labels == best).astype(np.uint8))


def trace_boundary(s: MaskSlice) -> Contour:
    """Moore-neighbor trace of the outer boundary, clockwise, origin at start.

    The walk starts at the top-left-most foreground pixel and stops when the
    (pixel, backtrack) tracer state repeats (Jacob's stopping criterion in
    state form), which guarantees termination and one full boundary cycle.
    Output coordinates are translated so the start pixel sits at (0, 0).
    """
    mask = s.array
    fg = np.argwhere(mask == 1)  # rows (y, x) in raster order
    if fg.size == 0:
        raise EmptyShapeError("slice has no foreground pixels")
    h, w = mask.shape
    y0, x0 = (int(v) for v in fg[0])

    def is_fg(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and mask[y, x] == 1

    p = (x0, y0)
    b = (x0 - 1, y0)  # west neighbour, background by start choice
    visited = {(p, b)}
    trace = [p]
    while True:
        bi = _DIR_INDEX[(b[0] - p[0], b[1] - p[1])]
        nxt = None
        prev = b
        for k in range(1, 9):
            dx, dy = _DIRS[(bi + k) % 8]
            cand = (p[0] + dx, p[1] + dy)
            if is_fg(*cand):
                nxt = cand
                break
            prev = cand
        if nxt is None:
            break  # isolated pixel
        state = (nxt, prev)
        if state in visited:
            break
        visited.add(state)
        trace.append(nxt)
        p, b = nxt, prev
    if len(trace) > 1 and trace[-1] == trace[0]:
        trace.pop()
    if len(set(trace)) < 3:
        raise DegenerateShapeError(
            f"component too small to form a closed contour ({len(set(trace))} distinct pixels)"
        )
    pts = np.array(trace, dtype=np.float64)
    pts -= np.array([x0, y0], dtype=np.float64)
    return Contour(pts)


def resample_contour(c: Contour, m: int) -> Contour:
    """m points uniformly spaced by arc length along the closed polygon of c.

    Sampling starts at c's first point; every output point lies exactly on
    the input polygon.
    """
    if m < 8:
        raise ValueError(f"resample count must be >= 8, got {m}")
    pts = c.points
    closed = np.vstack([pts, pts[:1]])
    seg = np.diff(closed, axis=0)
    seg_len = np.sqrt((seg ** 2).sum(axis=1))
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    perimeter = arc[-1]
    if not np.isfinite(perimeter) or perimeter <= 0.0:
        raise DegenerateShapeError("contour has zero perimeter")
    t = np.arange(m) * (perimeter / m)
    x = np.interp(t, arc, closed[:, 0])
    y = np.interp(t, arc, closed[:, 1])
    return Contour(np.column_stack([x, y]))
