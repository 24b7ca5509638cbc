"""View geometry for equirectangular frames.

Three reversible view transforms feed the segmentation front end:

* horizontal padding: the frame is extended by P columns on each side,
  each pad column showing the wrapped-around content, so objects at the
  seam appear whole somewhere on the flat padded canvas;
* sliding patch windows over the padded canvas, with enough overlap that
  every object is interior to at least one window;
* seam recentering: rotating all columns so a chosen region sits at the
  view centre, diametrically opposite the seam.

Masks produced on a padded view are folded back by OR over the pad
preimages; masks produced on a recentered view are rotated back.  The
stitcher merges per-window masks whose overlap-band IoU exceeds tau,
transitively, which reassembles objects cut by window edges.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import GeometryError
from .mask import (
    GridDims,
    Mask,
    crop_columns,
    iou,
    rotate_columns,
    union_all,
)

__all__ = [
    "PadPlan",
    "make_pad_plan",
    "pad_mask",
    "fold_padded_mask",
    "PatchPlan",
    "make_patch_plan",
    "stitch_groups",
    "stitch_patch_masks",
    "SeamPlan",
    "make_seam_plan",
    "recenter_mask",
    "unrecenter_mask",
    "to_view",
    "from_view",
    "view_pad",
]


# ---------------------------------------------------------------------------
# padding


@dataclass(frozen=True)
class PadPlan:
    """Symmetric horizontal wrap padding of a wrap grid.

    Padded column c shows source column (c - pad_cols) mod W.  The padded
    canvas is flat (no wrap): the duplication has already materialized the
    wrap neighbourhood.
    """

    source: GridDims
    pad_cols: int
    padded: GridDims


def make_pad_plan(source: GridDims, pad_fraction: float = 0.25) -> PadPlan:
    if not source.wrap_horizontal:
        raise GeometryError("padding is defined for wrap grids only")
    if pad_fraction < 0:
        raise GeometryError(f"negative pad fraction {pad_fraction}")
    pad = int(round(pad_fraction * source.width))
    if pad > source.width:
        raise GeometryError(
            f"pad of {pad} columns exceeds the source width {source.width}; "
            "each side may duplicate at most one full revolution"
        )
    padded = GridDims(source.width + 2 * pad, source.height, False)
    return PadPlan(source=source, pad_cols=pad, padded=padded)


def source_col(plan: PadPlan, padded_col: int) -> int:
    if not (0 <= padded_col < plan.padded.width):
        raise GeometryError(f"column {padded_col} outside padded canvas")
    return (padded_col - plan.pad_cols) % plan.source.width


def pad_mask(mask: Mask, plan: PadPlan) -> Mask:
    """Embed a source mask into the padded canvas, duplicating into the
    pads wherever a preimage exists."""
    if mask.dims != plan.source:
        raise GeometryError(f"mask dims {mask.dims} are not the plan source")
    w = plan.source.width
    pw = plan.padded.width
    items = []
    for r, s, n in mask.runs:
        for k in (-1, 0, 1):
            ns = s + plan.pad_cols + k * w
            ne = ns + n
            ns, ne = max(ns, 0), min(ne, pw)
            if ne > ns:
                items.append((r, ns, ne))
    return Mask.from_row_intervals(plan.padded, items)


def fold_padded_mask(padded_mask: Mask, plan: PadPlan) -> Mask:
    """OR-fold a padded-canvas mask back onto the source grid."""
    if padded_mask.dims != plan.padded:
        raise GeometryError(
            f"mask dims {padded_mask.dims} are not the plan's padded canvas"
        )
    w = plan.source.width
    items = []
    for r, s, n in padded_mask.runs:
        cur, end = s, s + n
        while cur < end:
            src = (cur - plan.pad_cols) % w
            seg = min(end - cur, w - src)
            items.append((r, src, src + seg))
            cur += seg
    return Mask.from_row_intervals(plan.source, items)


# ---------------------------------------------------------------------------
# patch windows


@dataclass(frozen=True)
class PatchPlan:
    """Sliding column windows over a canvas (usually a padded one).

    Windows are (start, width) with equal widths; consecutive windows
    overlap by at least one column, and the last window is clamped to end
    at the canvas edge.
    """

    canvas: GridDims
    patch_width: int
    stride: int
    windows: tuple[tuple[int, int], ...]


def make_patch_plan(
    canvas: GridDims, patch_width: int | None = None, stride: int | None = None
) -> PatchPlan:
    pw = canvas.height if patch_width is None else patch_width
    st = pw // 2 if stride is None else stride
    if pw < 1 or pw > canvas.width:
        raise GeometryError(f"patch width {pw} does not fit canvas {canvas.width}")
    if st < 1:
        raise GeometryError(f"stride {st} must be positive")
    if st > pw - 1 and canvas.width > pw:
        raise GeometryError(
            f"stride {st} leaves no overlap between consecutive {pw}-wide windows"
        )
    starts = [0]
    while starts[-1] + st + pw <= canvas.width:
        starts.append(starts[-1] + st)
    if starts[-1] + pw < canvas.width:
        starts.append(canvas.width - pw)
    return PatchPlan(
        canvas=canvas,
        patch_width=pw,
        stride=st,
        windows=tuple((s, pw) for s in starts),
    )


def _window_of(plan: PatchPlan, index: int) -> tuple[int, int]:
    try:
        return plan.windows[index]
    except IndexError:
        raise GeometryError(f"no window {index} in plan") from None


def stitch_groups(
    per_window_masks: list[list[Mask]], plan: PatchPlan, tau: float
) -> list[list[tuple[int, int]]]:
    """Partition per-window masks into cross-window identity groups.

    Masks of consecutive windows merge when their restrictions to the
    shared overlap band have IoU strictly greater than tau; merging is
    transitive across the whole window chain.  Returns groups of
    (window_index, mask_index) pairs, each group sorted, groups ordered by
    their smallest member.
    """
    if len(per_window_masks) != len(plan.windows):
        raise GeometryError(
            f"got masks for {len(per_window_masks)} windows, plan has "
            f"{len(plan.windows)}"
        )
    flat: list[tuple[int, int, Mask]] = []
    for w_idx, masks in enumerate(per_window_masks):
        start, width = plan.windows[w_idx]
        for m_idx, m in enumerate(masks):
            if m.dims != plan.canvas:
                raise GeometryError(
                    f"window {w_idx} mask {m_idx} is on {m.dims}, not the canvas"
                )
            if m.is_empty():
                raise GeometryError(f"window {w_idx} mask {m_idx} is empty")
            for r, s, n in m.runs:
                if s < start or s + n > start + width:
                    raise GeometryError(
                        f"window {w_idx} mask {m_idx} leaks outside its window"
                    )
            flat.append((w_idx, m_idx, m))
    index_of = {(w, m): i for i, (w, m, _) in enumerate(flat)}
    parent = list(range(len(flat)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def merge(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for w_idx in range(len(plan.windows) - 1):
        s0, width0 = plan.windows[w_idx]
        s1, _ = plan.windows[w_idx + 1]
        band_start = s1
        band_width = s0 + width0 - s1
        if band_width < 1:
            continue
        left = [
            (m_idx, crop_columns(m, band_start, band_width))
            for (w, m_idx, m) in flat
            if w == w_idx
        ]
        right = [
            (m_idx, crop_columns(m, band_start, band_width))
            for (w, m_idx, m) in flat
            if w == w_idx + 1
        ]
        for lm, lcrop in left:
            for rm, rcrop in right:
                if iou(lcrop, rcrop) > tau:
                    merge(index_of[(w_idx, lm)], index_of[(w_idx + 1, rm)])

    groups: dict[int, list[tuple[int, int]]] = {}
    for i, (w, m, _) in enumerate(flat):
        groups.setdefault(find(i), []).append((w, m))
    return [groups[k] for k in sorted(groups)]


def stitch_patch_masks(
    per_window_masks: list[list[Mask]], plan: PatchPlan, tau: float
) -> list[Mask]:
    """Merge per-window masks into whole-canvas masks (union per identity
    group), ordered by smallest (row, col) pixel."""
    lookup = {
        (w, m): mask
        for w, masks in enumerate(per_window_masks)
        for m, mask in enumerate(masks)
    }
    merged = [
        union_all([lookup[key] for key in group], plan.canvas)
        for group in stitch_groups(per_window_masks, plan, tau)
    ]
    merged.sort(key=lambda m: m.first_pixel())
    return merged


# ---------------------------------------------------------------------------
# seam recentering


@dataclass(frozen=True)
class SeamPlan:
    """Column rotation placing a chosen region at the view centre.

    View column c shows source column (c + shift_cols) mod W; the seam of
    the view falls diametrically opposite the region it was built around.
    """

    source: GridDims
    shift_cols: int


def make_seam_plan(source: GridDims, region) -> SeamPlan:
    """Plan a recentering for a border-touching blank region.

    `region` is a BlankRegion (or anything with centroid_col and the two
    touches flags).  The region's centroid lands on the view centre column
    W // 2.
    """
    if not source.wrap_horizontal:
        raise GeometryError("seam recentering is defined for wrap grids only")
    if not (region.touches_left_border or region.touches_right_border):
        raise GeometryError("region does not touch the seam; nothing to recenter")
    shift = (int(round(region.centroid_col)) - source.width // 2) % source.width
    return SeamPlan(source=source, shift_cols=shift)


def recenter_mask(mask: Mask, plan: SeamPlan) -> Mask:
    """Source grid -> recentered view."""
    if mask.dims != plan.source:
        raise GeometryError(f"mask dims {mask.dims} are not the plan source")
    return rotate_columns(mask, -plan.shift_cols)


def unrecenter_mask(mask: Mask, plan: SeamPlan) -> Mask:
    """Recentered view -> source grid.  Exact inverse of recenter_mask."""
    if mask.dims != plan.source:
        raise GeometryError(f"mask dims {mask.dims} are not the plan source")
    return rotate_columns(mask, plan.shift_cols)


# ---------------------------------------------------------------------------
# request-view helpers (used by backends serving transformed views)


def view_pad(source: GridDims, view: GridDims) -> int:
    """Pad columns implied by a request view canvas; 0 for the plain view."""
    if view == source:
        return 0
    extra = view.width - source.width
    if (
        extra <= 0
        or extra % 2 != 0
        or view.height != source.height
        or view.wrap_horizontal
    ):
        raise GeometryError(f"view {view} is not a padded form of {source}")
    return extra // 2


def to_view(mask: Mask, source: GridDims, view: GridDims, shift_cols: int) -> Mask:
    """World mask (source grid) -> request view (recentered, then padded)."""
    if mask.dims != source:
        raise GeometryError(f"mask dims {mask.dims} are not the source grid")
    pad = view_pad(source, view)
    out = rotate_columns(mask, -shift_cols) if shift_cols else mask
    if pad:
        plan = PadPlan(source=source, pad_cols=pad, padded=view)
        out = pad_mask(out, plan)
    return out


def from_view(mask: Mask, source: GridDims, view: GridDims, shift_cols: int) -> Mask:
    """Request view -> world (source grid): fold the pads, undo the shift."""
    pad = view_pad(source, view)
    if mask.dims != view:
        raise GeometryError(f"mask dims {mask.dims} are not the view grid")
    out = mask
    if pad:
        plan = PadPlan(source=source, pad_cols=pad, padded=view)
        out = fold_padded_mask(out, plan)
    if shift_cols:
        out = rotate_columns(out, shift_cols)
    return out
