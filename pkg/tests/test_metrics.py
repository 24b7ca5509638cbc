"""Region and boundary quality measures against brute-force oracles."""

import math

import numpy as np
import pytest

import panoanno.metrics as M
from panoanno.mask import GridDims, Mask, decode, encode, rotate_columns

from oracles import boundary_f_exhaustive, boundary_pixels, random_bitmap

D = GridDims(64, 32)


def rect(dims, r0, r1, c0, c1):
    return Mask.from_row_intervals(dims, [(r, c0, c1 + 1) for r in range(r0, r1 + 1)])


def test_tolerance_radius_follows_the_diagonal():
    assert M.tolerance_radius(GridDims(2048, 1024)) == round(
        0.008 * math.hypot(2048, 1024)
    )
    assert M.tolerance_radius(GridDims(2048, 1024)) == 18
    assert M.tolerance_radius(GridDims(16, 8)) == 0


def test_boundary_matches_bruteforce_oracle():
    rng = np.random.default_rng(411)
    for trial in range(300):
        wrap = bool(trial % 2)
        dims = GridDims(24, 12, wrap)
        bitmap = random_bitmap(rng, dims.width, dims.height)
        got = M.boundary_mask(encode(bitmap, dims))
        assert np.array_equal(decode(got), boundary_pixels(bitmap, wrap)), trial


def test_boundary_of_seam_strip():
    dims = GridDims(64, 8)
    strip = Mask.from_row_intervals(
        dims, [(r, 62, 64) for r in range(2, 6)] + [(r, 0, 2) for r in range(2, 6)]
    )
    boundary = M.boundary_mask(strip)
    # Interior pixels are the middle rows of the middle columns, which
    # straddle the seam: columns 63 and 0.
    interior = Mask.from_row_intervals(
        dims, [(r, 63, 64) for r in (3, 4)] + [(r, 0, 1) for r in (3, 4)]
    )
    assert decode(boundary).sum() == strip.area - interior.area
    assert not np.any(decode(boundary) & decode(interior))
    # On a flat grid the same pixels all touch an edge or the gap.
    flat = GridDims(64, 8, False)
    flat_strip = Mask(flat, strip.runs)
    assert M.boundary_mask(flat_strip) == flat_strip


def test_f_measure_matches_bruteforce_oracle():
    rng = np.random.default_rng(907)
    for trial in range(150):
        wrap = bool(trial % 2)
        dims = GridDims(20, 10, wrap)
        radius = int(rng.integers(0, 4))
        a = random_bitmap(rng, dims.width, dims.height)
        b = random_bitmap(rng, dims.width, dims.height)
        got = M.f_measure(encode(a, dims), encode(b, dims), radius)
        want = boundary_f_exhaustive(a, b, wrap, radius)
        assert got == pytest.approx(want, abs=1e-12), (trial, radius)


def test_f_measure_counts_wrap_distance():
    dims = GridDims(32, 8)
    a = rect(dims, 2, 5, 0, 2)  # touches the left border
    b = rect(dims, 2, 5, 30, 31)  # touches the right border
    # Boundaries meet across the seam within radius 2 but not radius 0.
    near = M.f_measure(a, b, 2)
    flat_dims = GridDims(32, 8, False)
    far = M.f_measure(Mask(flat_dims, a.runs), Mask(flat_dims, b.runs), 2)
    assert near > far


def test_identity_is_perfect():
    rng = np.random.default_rng(5)
    for _ in range(20):
        bitmap = random_bitmap(rng, D.width, D.height)
        m = encode(bitmap, D)
        if m.is_empty():
            continue
        assert M.j_measure(m, m) == 1.0
        assert M.f_measure(m, m) == 1.0
        assert M.jf_measure(m, m) == 1.0


def test_empty_mask_conventions():
    e = Mask.empty(D)
    m = rect(D, 2, 4, 3, 8)
    assert M.j_measure(e, e) == 1.0
    assert M.f_measure(e, e) == 1.0
    assert M.j_measure(m, e) == 0.0
    assert M.f_measure(m, e) == 0.0
    assert M.jf_measure(e, e) == 1.0


def test_scores_are_rotation_invariant():
    rng = np.random.default_rng(99)
    for k in (1, 7, 32, 63):
        a = encode(random_bitmap(rng, D.width, D.height), D)
        b = encode(random_bitmap(rng, D.width, D.height), D)
        ra, rb = rotate_columns(a, k), rotate_columns(b, k)
        assert M.j_measure(ra, rb) == M.j_measure(a, b)
        assert M.f_measure(ra, rb) == M.f_measure(a, b)


def test_dims_mismatch_rejected():
    with pytest.raises(ValueError):
        M.f_measure(Mask.empty(D), Mask.empty(GridDims(8, 4)))


def test_score_video_averages_per_instance_then_overall():
    f0_ref = {1: rect(D, 0, 3, 0, 9), 2: rect(D, 10, 13, 0, 9)}
    f1_ref = {1: rect(D, 0, 3, 2, 11)}
    f0_pred = {1: rect(D, 0, 3, 0, 9), 2: rect(D, 10, 13, 5, 14)}
    f1_pred = {1: rect(D, 0, 3, 2, 11), 3: rect(D, 20, 21, 0, 1)}
    scores = M.score_video([f0_pred, f1_pred], [f0_ref, f1_ref], D, radius=0)
    # Instance 1 is perfect in both frames; instance 2 appears once with
    # IoU 5/15.  Instance 3 exists only in the prediction and is ignored.
    by_id = {row[0]: row for row in scores.per_instance}
    assert set(by_id) == {1, 2}
    assert by_id[1][1] == 1.0 and by_id[1][2] == 1.0
    assert by_id[2][1] == 5 / 15
    expected_j = (1.0 + 5 / 15) / 2
    assert scores.j == expected_j
    assert scores.jf == (scores.j + scores.f) / 2


def test_score_video_counts_misses_and_false_alarms():
    ref = [{1: rect(D, 0, 3, 0, 9)}, {1: rect(D, 0, 3, 0, 9)}]
    pred = [{1: rect(D, 0, 3, 0, 9)}, {}]
    scores = M.score_video(pred, ref, D, radius=0)
    # Frame 1 scores zero for the missing prediction.
    assert scores.per_instance[0][1] == 0.5
    # A prediction where the reference is empty also scores zero.
    pred2 = [{1: rect(D, 0, 3, 0, 9)}, {1: rect(D, 20, 23, 0, 9)}]
    ref2 = [{1: rect(D, 0, 3, 0, 9)}, {}]
    scores2 = M.score_video(pred2, ref2, D, radius=0)
    assert scores2.per_instance[0][1] == 0.5


def test_score_video_validation():
    with pytest.raises(ValueError):
        M.score_video([{}], [{}, {}], D)
    with pytest.raises(ValueError):
        M.score_video([{}], [{}], D)


class TestStoreScoring:
    def test_store_against_itself_is_perfect(self, tmp_path):
        from scenelib import build_clip

        _, store = build_clip(tmp_path)
        assert M.j_and_f(store, store) == (1.0, 1.0, 1.0)
        scores = M.score_store_video(store, store, "clip")
        assert (scores.j, scores.f, scores.jf) == (1.0, 1.0, 1.0)

    def test_store_scoring_equals_direct_frame_scoring(self, tmp_path):
        from scenelib import build_clip

        _, ref = build_clip(tmp_path / "ref")
        _, pred = build_clip(tmp_path / "pred", col0=11)
        dims = ref.manifest("clip").dims
        frames = lambda store: [
            {e.instance_id: e.mask for e in store.read_frame("clip", i)}
            for i in range(store.manifest("clip").frame_count)
        ]
        direct = M.score_video(frames(pred), frames(ref), dims)
        via_store = M.score_store_video(pred, ref, "clip")
        assert via_store == direct
        j, f, jf = M.j_and_f(pred, ref)
        assert (j, f) == (direct.j, direct.f)
        assert jf == (j + f) / 2

    def test_mismatched_grids_are_rejected(self, tmp_path):
        from scenelib import build_clip, mini_config, mini_video
        from panoanno.pipeline import ingest_video
        from panoanno.store import Store

        _, ref = build_clip(tmp_path / "ref")
        wide = tmp_path / "wide"
        wide.mkdir()
        config = mini_config(wide, width=128, height=32)
        mini_video(wide / "clips" / "clip", 10, width=128)
        pred = Store(config.store_root)
        ingest_video(config, wide / "clips" / "clip", pred)
        with pytest.raises(ValueError, match="grid"):
            M.score_store_video(pred, ref, "clip")

    def test_no_videos_is_rejected(self, tmp_path):
        from panoanno.store import Store

        empty = Store(tmp_path / "empty")
        with pytest.raises(ValueError, match="no videos"):
            M.j_and_f(empty, empty)
