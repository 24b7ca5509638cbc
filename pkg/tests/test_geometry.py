"""Padding, patch windows, stitching, and seam recentering."""

import numpy as np
import pytest

from panoanno import geometry as G
from panoanno import mask as M
from panoanno.errors import GeometryError

import oracles


def grid(w=32, h=16, wrap=True):
    return M.GridDims(w, h, wrap)


# ---------------------------------------------------------------------------
# padding


def test_pad_plan_quarter_width():
    plan = G.make_pad_plan(M.GridDims(2048, 1024), pad_fraction=0.25)
    assert plan.pad_cols == 512
    assert plan.padded == M.GridDims(3072, 1024, False)


def test_pad_plan_rejects_flat_source_and_bad_fraction():
    with pytest.raises(GeometryError):
        G.make_pad_plan(M.GridDims(64, 32, False))
    with pytest.raises(GeometryError):
        G.make_pad_plan(grid(), pad_fraction=-0.1)
    with pytest.raises(GeometryError):
        G.make_pad_plan(grid(), pad_fraction=1.51)


def test_source_col_mapping():
    plan = G.make_pad_plan(M.GridDims(100, 10), pad_fraction=0.25)
    assert plan.pad_cols == 25
    assert G.source_col(plan, 25) == 0
    assert G.source_col(plan, 0) == 75
    assert G.source_col(plan, 24) == 99
    assert G.source_col(plan, 149) == 24
    with pytest.raises(GeometryError):
        G.source_col(plan, 150)


def test_pad_duplicates_visible_at_both_sides():
    d = M.GridDims(10, 2)
    plan = G.make_pad_plan(d, pad_fraction=0.3)  # 3 pad columns
    m = M.Mask(d, ((0, 0, 2),))  # cols 0..1 at the seam
    padded = G.pad_mask(m, plan)
    # main copy at 3..4, right pad copy at 13..14; left pad shows cols 7..9 only
    assert padded.runs == ((0, 3, 2), (0, 13, 2))
    m2 = M.Mask(d, ((0, 8, 2),))  # cols 8..9
    padded2 = G.pad_mask(m2, plan)
    # left pad shows source cols 7,8,9 at padded 0,1,2 -> copy at 1..2
    assert padded2.runs == ((0, 1, 2), (0, 11, 2))


def test_fold_is_left_inverse_of_pad():
    rng = np.random.default_rng(3)
    for _ in range(100):
        w = int(rng.integers(4, 40))
        h = int(rng.integers(1, 10))
        d = M.GridDims(w, h)
        plan = G.make_pad_plan(d, pad_fraction=float(rng.uniform(0, 1)))
        bm = oracles.random_bitmap(rng, w, h)
        m = M.encode(bm, d)
        assert G.fold_padded_mask(G.pad_mask(m, plan), plan) == m


def test_fold_maps_pad_only_mask_home():
    d = M.GridDims(10, 1)
    plan = G.make_pad_plan(d, pad_fraction=0.3)
    # a mask living entirely in the left pad: padded cols 0..2 = source 7..9
    pad_only = M.Mask(plan.padded, ((0, 0, 3),))
    assert G.fold_padded_mask(pad_only, plan).runs == ((0, 7, 3),)


def test_fold_rejects_wrong_canvas():
    d = M.GridDims(10, 2)
    plan = G.make_pad_plan(d)
    with pytest.raises(GeometryError):
        G.fold_padded_mask(M.Mask.full(d), plan)
    with pytest.raises(GeometryError):
        G.pad_mask(M.Mask.full(plan.padded), plan)


# ---------------------------------------------------------------------------
# patch windows


def test_patch_plan_default_full_resolution():
    canvas = M.GridDims(3072, 1024, False)
    plan = G.make_patch_plan(canvas)
    assert plan.patch_width == 1024
    assert plan.stride == 512
    assert plan.windows == tuple((s, 1024) for s in (0, 512, 1024, 1536, 2048))


def test_patch_plan_clamps_final_window():
    plan = G.make_patch_plan(M.GridDims(3000, 1024, False))
    starts = [s for s, _ in plan.windows]
    assert starts == [0, 512, 1024, 1536, 1976]
    assert starts[-1] + plan.patch_width == 3000


def test_patch_plan_covers_canvas_with_overlap():
    rng = np.random.default_rng(5)
    for _ in range(100):
        width = int(rng.integers(8, 400))
        pw = int(rng.integers(2, width + 1))
        st = int(rng.integers(1, pw))
        plan = G.make_patch_plan(M.GridDims(width, 8, False), pw, st)
        covered = np.zeros(width, dtype=bool)
        for s, n in plan.windows:
            assert 0 <= s and s + n <= width
            covered[s : s + n] = True
        assert covered.all()
        for (s0, n0), (s1, _) in zip(plan.windows, plan.windows[1:]):
            assert s1 > s0
            assert s0 + n0 - s1 >= 1  # consecutive overlap


def test_patch_plan_rejects_gap_stride():
    with pytest.raises(GeometryError):
        G.make_patch_plan(M.GridDims(100, 8, False), patch_width=10, stride=10)
    with pytest.raises(GeometryError):
        G.make_patch_plan(M.GridDims(100, 8, False), patch_width=101)
    # single window: stride irrelevant
    plan = G.make_patch_plan(M.GridDims(10, 8, False), patch_width=10, stride=99)
    assert plan.windows == ((0, 10),)


# ---------------------------------------------------------------------------
# stitching


def _win_mask(canvas, rows, lo, hi):
    return M.Mask.from_row_intervals(canvas, [(r, lo, hi) for r in rows])


def test_stitch_merges_object_cut_by_window_edge():
    canvas = M.GridDims(16, 4, False)
    plan = G.make_patch_plan(canvas, patch_width=10, stride=6)
    assert plan.windows == ((0, 10), (6, 10))
    # one rectangle spanning cols 4..12, seen partially by each window
    left = _win_mask(canvas, range(4), 4, 10)
    right = _win_mask(canvas, range(4), 6, 13)
    [merged] = G.stitch_patch_masks([[left], [right]], plan, tau=0.5)
    assert merged == _win_mask(canvas, range(4), 4, 13)


def test_stitch_tau_is_strict():
    canvas = M.GridDims(16, 1, False)
    plan = G.make_patch_plan(canvas, patch_width=10, stride=6)
    # band is cols 6..9 (4 wide); band IoU = 2/4 = 0.5 exactly
    left = _win_mask(canvas, [0], 6, 10)
    right = _win_mask(canvas, [0], 6, 8)
    out = G.stitch_patch_masks([[left], [right]], plan, tau=0.5)
    assert len(out) == 2  # no merge at exactly tau
    out = G.stitch_patch_masks([[left], [right]], plan, tau=0.49)
    assert len(out) == 1


def test_stitch_transitive_chain():
    canvas = M.GridDims(22, 2, False)
    plan = G.make_patch_plan(canvas, patch_width=10, stride=6)
    assert plan.windows == ((0, 10), (6, 10), (12, 10))
    a = _win_mask(canvas, range(2), 2, 10)
    b = _win_mask(canvas, range(2), 6, 16)
    c = _win_mask(canvas, range(2), 12, 20)
    [merged] = G.stitch_patch_masks([[a], [b], [c]], plan, tau=0.5)
    assert merged == _win_mask(canvas, range(2), 2, 20)


def test_stitch_keeps_distinct_objects_apart_and_orders_output():
    canvas = M.GridDims(16, 4, False)
    plan = G.make_patch_plan(canvas, patch_width=10, stride=6)
    top = _win_mask(canvas, [0, 1], 7, 10)
    top_r = _win_mask(canvas, [0, 1], 7, 12)
    bottom_r = _win_mask(canvas, [3], 6, 9)
    out = G.stitch_patch_masks([[top], [top_r, bottom_r]], plan, tau=0.5)
    assert len(out) == 2
    # ordered by smallest (row, col)
    assert out[0].first_pixel() == (0, 7)
    assert out[1].first_pixel() == (3, 6)


def test_stitch_validates_input():
    canvas = M.GridDims(16, 2, False)
    plan = G.make_patch_plan(canvas, patch_width=10, stride=6)
    with pytest.raises(GeometryError):
        G.stitch_patch_masks([[]], plan, 0.5)  # window count mismatch
    leaky = _win_mask(canvas, [0], 2, 12)  # crosses window 0's right edge
    with pytest.raises(GeometryError):
        G.stitch_patch_masks([[leaky], []], plan, 0.5)
    with pytest.raises(GeometryError):
        G.stitch_patch_masks([[M.Mask.empty(canvas)], []], plan, 0.5)


# ---------------------------------------------------------------------------
# seam recentering


def test_seam_plan_centers_blank_at_view_centre():
    d = M.GridDims(2048, 1024)
    covered = M.Mask.from_row_intervals(
        d, [(r, 40, 2008) for r in range(1024)]
    )
    [blank] = M.blank_regions([covered], d, min_area_fraction=0.0)
    assert blank.touches_left_border and blank.touches_right_border
    assert blank.centroid_col == pytest.approx(2047.5)
    plan = G.make_seam_plan(d, blank)
    assert plan.shift_cols == 1024
    # the blank is contiguous and centred after recentering
    view = G.recenter_mask(blank.mask, plan)
    assert len(M.connected_components(view)) >= 1
    arc_start, arc_len = M.column_arc(view)
    assert (arc_start, arc_len) == (984, 80)


def test_seam_plan_worked_shift_value():
    d = M.GridDims(2048, 1024)

    class Region:
        centroid_col = 0.0
        touches_left_border = True
        touches_right_border = False

    plan = G.make_seam_plan(d, Region())
    assert plan.shift_cols == 1024


def test_seam_plan_rejects_interior_region():
    d = M.GridDims(64, 8)

    class Region:
        centroid_col = 30.0
        touches_left_border = False
        touches_right_border = False

    with pytest.raises(GeometryError):
        G.make_seam_plan(d, Region())


def test_recenter_round_trip():
    rng = np.random.default_rng(9)
    d = M.GridDims(48, 12)
    for shift in [0, 1, 24, 47]:
        plan = G.SeamPlan(source=d, shift_cols=shift)
        for _ in range(20):
            m = M.encode(oracles.random_bitmap(rng, 48, 12), d)
            assert G.unrecenter_mask(G.recenter_mask(m, plan), plan) == m


def test_view_transforms_round_trip():
    rng = np.random.default_rng(13)
    src = M.GridDims(40, 10)
    for pad in [0, 5, 10]:
        view = (
            src if pad == 0 else M.GridDims(40 + 2 * pad, 10, False)
        )
        for shift in [0, 7, 39]:
            for _ in range(10):
                m = M.encode(oracles.random_bitmap(rng, 40, 10), src)
                v = G.to_view(m, src, view, shift)
                assert v.dims == view
                assert G.from_view(v, src, view, shift) == m


def test_view_validation():
    src = M.GridDims(40, 10)
    with pytest.raises(GeometryError):
        G.to_view(M.Mask.full(src), src, M.GridDims(47, 10, False), 0)  # odd pad
    with pytest.raises(GeometryError):
        G.to_view(M.Mask.full(src), src, M.GridDims(50, 10, True), 0)  # wrap pad
    with pytest.raises(GeometryError):
        G.to_view(M.Mask.full(src), src, M.GridDims(50, 12, False), 0)  # height
