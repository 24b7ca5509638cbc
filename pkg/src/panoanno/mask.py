"""Run-length masks on equirectangular grids.

A mask is a set of pixels on a fixed grid, stored as sorted maximal runs.
Grids may wrap horizontally (an equirectangular frame: column 0 and column
W-1 are neighbours).  Storage is always linear: a run never crosses the
seam, so a seam-spanning component is at least two runs.  The wrap flag
changes connectivity, column rotation and centroid geometry, never the
pixel-set semantics of union/intersection/difference.

Text serialization (the exchange format used by the wire protocol and the
annotation store):

    dims W H wrap{0|1}
    row start length
    ...

one line per run, canonical run order, '\\n' line endings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimsMismatchError, MaskFormatError

__all__ = [
    "GridDims",
    "Mask",
    "BlankRegion",
    "encode",
    "decode",
    "union",
    "union_all",
    "intersection",
    "difference",
    "intersection_area",
    "iou",
    "matches",
    "coverage_rate",
    "blank_regions",
    "shift_mask",
    "rotate_columns",
    "crop_columns",
    "centroid",
    "column_arc",
    "mask_to_text",
    "mask_from_text",
    "mask_digest",
]


@dataclass(frozen=True)
class GridDims:
    """Grid geometry: width, height, and whether columns wrap."""

    width: int
    height: int
    wrap_horizontal: bool = True

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise MaskFormatError(f"degenerate grid {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Mask:
    """Pixel set as maximal runs, sorted by (row, start).

    Invariants (checked on construction): every run in bounds, length >= 1,
    runs strictly ordered, same-row runs separated by at least one blank
    column.  Adjacency through the seam (a run ending at W next to a run
    starting at 0) is legal storage; the wrap-aware ops treat it as
    connected.
    """

    dims: GridDims
    runs: tuple[tuple[int, int, int], ...]
    area: int = field(init=False, compare=False)

    def __post_init__(self) -> None:
        w, h = self.dims.width, self.dims.height
        prev_row, prev_end = -1, 0
        total = 0
        for row, start, length in self.runs:
            if not (0 <= row < h):
                raise MaskFormatError(f"run row {row} outside grid height {h}")
            if length < 1:
                raise MaskFormatError(f"empty run at row {row}")
            if start < 0 or start + length > w:
                raise MaskFormatError(
                    f"run {start}+{length} outside grid width {w} (row {row})"
                )
            if row < prev_row:
                raise MaskFormatError("runs out of row order")
            if row == prev_row and start <= prev_end:
                raise MaskFormatError(
                    f"runs overlap or touch at row {row} (col {start}); "
                    "runs must be maximal"
                )
            prev_row, prev_end = row, start + length
            total += length
        object.__setattr__(self, "area", total)

    @classmethod
    def empty(cls, dims: GridDims) -> "Mask":
        return cls(dims, ())

    @classmethod
    def full(cls, dims: GridDims) -> "Mask":
        return cls(dims, tuple((r, 0, dims.width) for r in range(dims.height)))

    @classmethod
    def from_row_intervals(cls, dims, items) -> "Mask":
        """Build from (row, start, end) triples in any order; merges overlap
        and adjacency into maximal runs."""
        triples = sorted((r, s, e) for r, s, e in items if e > s)
        runs: list[tuple[int, int, int]] = []
        cur = None  # (row, start, end)
        for r, s, e in triples:
            if cur is not None and r == cur[0] and s <= cur[2]:
                cur = (r, cur[1], max(cur[2], e))
            else:
                if cur is not None:
                    runs.append((cur[0], cur[1], cur[2] - cur[1]))
                cur = (r, s, e)
        if cur is not None:
            runs.append((cur[0], cur[1], cur[2] - cur[1]))
        return cls(dims, tuple(runs))

    def is_empty(self) -> bool:
        return not self.runs

    def first_pixel(self) -> tuple[int, int] | None:
        """Smallest (row, col) pixel; the deterministic sort key for masks."""
        if not self.runs:
            return None
        r, s, _ = self.runs[0]
        return (r, s)

    def row_intervals(self) -> dict[int, list[tuple[int, int]]]:
        """runs grouped by row as half-open (start, end) intervals."""
        rows: dict[int, list[tuple[int, int]]] = {}
        for r, s, length in self.runs:
            rows.setdefault(r, []).append((s, s + length))
        return rows


def _require_same_dims(a: Mask, b: Mask) -> None:
    if a.dims != b.dims:
        raise DimsMismatchError(f"grid mismatch: {a.dims} vs {b.dims}")


# ---------------------------------------------------------------------------
# bitmap conversion


def encode(bitmap, dims: GridDims) -> Mask:
    """Run-length encode a boolean (H, W) array."""
    arr = np.asarray(bitmap)
    if arr.ndim != 2:
        raise MaskFormatError(f"bitmap must be 2-D, got shape {arr.shape}")
    if arr.shape != (dims.height, dims.width):
        raise DimsMismatchError(
            f"bitmap shape {arr.shape} does not match grid "
            f"{dims.height}x{dims.width}"
        )
    arr = arr.astype(bool)
    padded = np.zeros((dims.height, dims.width + 2), dtype=np.int8)
    padded[:, 1:-1] = arr
    d = np.diff(padded, axis=1)
    starts = np.argwhere(d == 1)
    ends = np.argwhere(d == -1)
    # argwhere is row-major, so starts/ends pair up in order
    runs = tuple(
        (int(r), int(s), int(e - s)) for (r, s), (_, e) in zip(starts, ends)
    )
    return Mask(dims, runs)


def decode(mask: Mask) -> np.ndarray:
    """Expand to a boolean (H, W) array."""
    out = np.zeros((mask.dims.height, mask.dims.width), dtype=bool)
    for r, s, length in mask.runs:
        out[r, s : s + length] = True
    return out


# ---------------------------------------------------------------------------
# set algebra (pure interval sweeps; the tests check these against bitmap
# oracles, so keep this code path numpy-free)


def union(a: Mask, b: Mask) -> Mask:
    _require_same_dims(a, b)
    return Mask.from_row_intervals(
        a.dims,
        [(r, s, s + n) for r, s, n in a.runs] + [(r, s, s + n) for r, s, n in b.runs],
    )


def union_all(masks, dims: GridDims) -> Mask:
    items = []
    for m in masks:
        if m.dims != dims:
            raise DimsMismatchError(f"grid mismatch: {m.dims} vs {dims}")
        items.extend((r, s, s + n) for r, s, n in m.runs)
    return Mask.from_row_intervals(dims, items)


def intersection(a: Mask, b: Mask) -> Mask:
    _require_same_dims(a, b)
    rows_b = b.row_intervals()
    items: list[tuple[int, int, int]] = []
    for r, ivals_a in a.row_intervals().items():
        ivals_b = rows_b.get(r)
        if not ivals_b:
            continue
        i = j = 0
        while i < len(ivals_a) and j < len(ivals_b):
            s = max(ivals_a[i][0], ivals_b[j][0])
            e = min(ivals_a[i][1], ivals_b[j][1])
            if e > s:
                items.append((r, s, e))
            if ivals_a[i][1] < ivals_b[j][1]:
                i += 1
            else:
                j += 1
    return Mask.from_row_intervals(a.dims, items)


def difference(a: Mask, b: Mask) -> Mask:
    """Pixels of a not in b."""
    _require_same_dims(a, b)
    rows_b = b.row_intervals()
    items: list[tuple[int, int, int]] = []
    for r, ivals_a in a.row_intervals().items():
        cuts = rows_b.get(r, [])
        for s, e in ivals_a:
            cur = s
            for cs, ce in cuts:
                if ce <= cur:
                    continue
                if cs >= e:
                    break
                if cs > cur:
                    items.append((r, cur, min(cs, e)))
                cur = max(cur, ce)
                if cur >= e:
                    break
            if cur < e:
                items.append((r, cur, e))
    return Mask.from_row_intervals(a.dims, items)


def intersection_area(a: Mask, b: Mask) -> int:
    _require_same_dims(a, b)
    rows_b = b.row_intervals()
    total = 0
    for r, ivals_a in a.row_intervals().items():
        ivals_b = rows_b.get(r)
        if not ivals_b:
            continue
        i = j = 0
        while i < len(ivals_a) and j < len(ivals_b):
            lo = max(ivals_a[i][0], ivals_b[j][0])
            hi = min(ivals_a[i][1], ivals_b[j][1])
            if hi > lo:
                total += hi - lo
            if ivals_a[i][1] < ivals_b[j][1]:
                i += 1
            else:
                j += 1
    return total


def iou(a: Mask, b: Mask) -> float:
    """Intersection over union; 0.0 when both masks are empty."""
    _require_same_dims(a, b)
    inter = intersection_area(a, b)
    denom = a.area + b.area - inter
    if denom == 0:
        return 0.0
    return inter / denom


def matches(a: Mask, b: Mask, tau: float) -> bool:
    """Strict merge predicate: IoU(a, b) > tau."""
    return iou(a, b) > tau


# ---------------------------------------------------------------------------
# coverage and blank regions


def coverage_rate(masks, dims: GridDims) -> float:
    """Fraction of the frame covered by the union of the given masks."""
    return union_all(masks, dims).area / dims.area


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def merge(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller index as root so grouping is deterministic
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass(frozen=True)
class BlankRegion:
    """One connected unannotated region of a frame."""

    mask: Mask
    area: int
    centroid_row: float
    centroid_col: float
    touches_left_border: bool
    touches_right_border: bool


def complement(mask: Mask) -> Mask:
    """All grid pixels not in the mask."""
    w = mask.dims.width
    rows = mask.row_intervals()
    items: list[tuple[int, int, int]] = []
    for r in range(mask.dims.height):
        cur = 0
        for s, e in rows.get(r, []):
            if s > cur:
                items.append((r, cur, s))
            cur = e
        if cur < w:
            items.append((r, cur, w))
    return Mask.from_row_intervals(mask.dims, items)


def connected_components(mask: Mask) -> list[Mask]:
    """4-connected components; columns additionally connect through the
    seam on wrap grids.  Sorted by area descending, ties by first pixel."""
    runs = mask.runs
    if not runs:
        return []
    uf = _UnionFind(len(runs))
    # index runs by row for the row-to-row sweep
    by_row: dict[int, list[int]] = {}
    for idx, (r, _, _) in enumerate(runs):
        by_row.setdefault(r, []).append(idx)
    w = mask.dims.width
    for r, idxs in by_row.items():
        # seam adjacency within a row
        if mask.dims.wrap_horizontal and len(idxs) >= 2:
            first, last = runs[idxs[0]], runs[idxs[-1]]
            if first[1] == 0 and last[1] + last[2] == w:
                uf.merge(idxs[0], idxs[-1])
        below = by_row.get(r + 1)
        if not below:
            continue
        i = j = 0
        while i < len(idxs) and j < len(below):
            _, s1, n1 = runs[idxs[i]]
            _, s2, n2 = runs[below[j]]
            if s1 < s2 + n2 and s2 < s1 + n1:
                uf.merge(idxs[i], below[j])
            if s1 + n1 < s2 + n2:
                i += 1
            else:
                j += 1
    groups: dict[int, list[tuple[int, int, int]]] = {}
    for idx, run in enumerate(runs):
        groups.setdefault(uf.find(idx), []).append(run)
    parts = [Mask(mask.dims, tuple(g)) for g in groups.values()]
    parts.sort(key=lambda m: (-m.area, m.first_pixel()))
    return parts


def blank_regions(masks, dims: GridDims, min_area_fraction: float = 0.0005) -> list[BlankRegion]:
    """Connected unannotated regions, largest first.

    Regions smaller than min_area_fraction of the frame are dropped.
    """
    blank = complement(union_all(masks, dims))
    threshold = min_area_fraction * dims.area
    out = []
    for part in connected_components(blank):
        if part.area < threshold:
            continue
        c_row, c_col = centroid(part)
        out.append(
            BlankRegion(
                mask=part,
                area=part.area,
                centroid_row=c_row,
                centroid_col=c_col,
                touches_left_border=any(s == 0 for _, s, _ in part.runs),
                touches_right_border=any(
                    s + n == dims.width for _, s, n in part.runs
                ),
            )
        )
    return out


# ---------------------------------------------------------------------------
# geometry helpers


def centroid(mask: Mask) -> tuple[float, float]:
    """Pixel centroid (row, col).

    Rows average plainly.  On wrap grids the column mean is taken in arc
    coordinates: a 4-connected region projects to a circular arc of
    columns, so we unwrap past the largest empty gap of the projection and
    reduce the mean mod W.  A full-circle projection unwraps from column 0.
    """
    if mask.is_empty():
        raise MaskFormatError("centroid of an empty mask")
    row_sum = sum(r * n for r, _, n in mask.runs)
    c_row = row_sum / mask.area
    w = mask.dims.width
    weights = np.zeros(w, dtype=np.int64)
    for _, s, n in mask.runs:
        weights[s : s + n] += 1
    if not mask.dims.wrap_horizontal:
        c_col = float(np.dot(weights, np.arange(w)) / mask.area)
        return (c_row, c_col)
    occupied = np.flatnonzero(weights)
    if len(occupied) == w:
        arc_start = 0
    else:
        gaps = np.diff(occupied, append=occupied[0] + w) - 1
        arc_start = int(occupied[(int(np.argmax(gaps)) + 1) % len(occupied)])
    x = (occupied - arc_start) % w
    mean_x = float(np.dot(weights[occupied], x) / mask.area)
    return (c_row, (arc_start + mean_x) % w)


def column_arc(mask: Mask) -> tuple[int, int]:
    """Column extent as (arc_start, arc_length).

    On wrap grids the extent of a seam-spanning mask is the circular arc
    past the largest empty gap; on flat grids it is (min_col, span).
    """
    if mask.is_empty():
        raise MaskFormatError("column arc of an empty mask")
    w = mask.dims.width
    weights = np.zeros(w, dtype=np.int64)
    for _, s, n in mask.runs:
        weights[s : s + n] += 1
    occupied = np.flatnonzero(weights)
    if not mask.dims.wrap_horizontal:
        return (int(occupied[0]), int(occupied[-1] - occupied[0] + 1))
    if len(occupied) == w:
        return (0, w)
    gaps = np.diff(occupied, append=occupied[0] + w) - 1
    biggest = int(np.argmax(gaps))
    arc_start = int(occupied[(biggest + 1) % len(occupied)])
    arc_len = w - int(gaps[biggest])
    return (arc_start, arc_len)


def shift_mask(mask: Mask, d_row: int, d_col: int) -> Mask:
    """Translate by (d_row, d_col).  Rows clip at the poles (pixels shifted
    off the top or bottom are dropped); columns wrap on wrap grids and clip
    otherwise."""
    w, h = mask.dims.width, mask.dims.height
    items: list[tuple[int, int, int]] = []
    for r, s, n in mask.runs:
        nr = r + d_row
        if nr < 0 or nr >= h:
            continue
        if mask.dims.wrap_horizontal:
            ns = (s + d_col) % w
            if ns + n <= w:
                items.append((nr, ns, ns + n))
            else:
                items.append((nr, ns, w))
                items.append((nr, 0, ns + n - w))
        else:
            ns, ne = s + d_col, s + n + d_col
            ns, ne = max(ns, 0), min(ne, w)
            if ne > ns:
                items.append((nr, ns, ne))
    return Mask.from_row_intervals(mask.dims, items)


def rotate_columns(mask: Mask, k: int) -> Mask:
    """Rotate every column by k (mod W).  Wrap grids only."""
    if not mask.dims.wrap_horizontal:
        raise DimsMismatchError("column rotation needs a wrap grid")
    return shift_mask(mask, 0, k % mask.dims.width)


def crop_columns(mask: Mask, start: int, width: int) -> Mask:
    """Keep only pixels in the linear column window [start, start+width).

    The window never wraps; callers express wrap windows through a seam
    plan upstream."""
    if start < 0 or width < 1 or start + width > mask.dims.width:
        raise MaskFormatError(
            f"window {start}+{width} outside grid width {mask.dims.width}"
        )
    items = []
    for r, s, n in mask.runs:
        lo, hi = max(s, start), min(s + n, start + width)
        if hi > lo:
            items.append((r, lo, hi))
    return Mask.from_row_intervals(mask.dims, items)


# ---------------------------------------------------------------------------
# text form


def mask_to_text(mask: Mask) -> str:
    lines = [
        f"dims {mask.dims.width} {mask.dims.height} "
        f"wrap{1 if mask.dims.wrap_horizontal else 0}"
    ]
    lines.extend(f"{r} {s} {n}" for r, s, n in mask.runs)
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> Mask:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MaskFormatError("empty mask text")
    head = lines[0].split(" ")
    if len(head) != 4 or head[0] != "dims" or head[3] not in ("wrap0", "wrap1"):
        raise MaskFormatError(f"bad mask header: {lines[0]!r}")
    try:
        dims = GridDims(int(head[1]), int(head[2]), head[3] == "wrap1")
    except ValueError as exc:
        raise MaskFormatError(f"bad mask header: {lines[0]!r}") from exc
    runs = []
    for ln in lines[1:]:
        parts = ln.split(" ")
        if len(parts) != 3:
            raise MaskFormatError(f"bad run line: {ln!r}")
        try:
            runs.append((int(parts[0]), int(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise MaskFormatError(f"bad run line: {ln!r}") from exc
    return Mask(dims, tuple(runs))


def mask_digest(mask: Mask) -> str:
    return hashlib.sha256(mask_to_text(mask).encode("ascii")).hexdigest()
