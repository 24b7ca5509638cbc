"""Segmentation quality measures for panoramic video annotation.

Region similarity J is plain intersection-over-union.  Contour accuracy
F compares mask boundaries: a boundary pixel counts as matched when the
other mask's boundary passes within a tolerance radius proportional to
the frame diagonal, measuring column distance around the horizontal
wrap.  J&F is their mean, averaged per instance and then across
instances for whole videos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .mask import GridDims, Mask, decode, encode, iou

__all__ = [
    "VideoScores",
    "boundary_mask",
    "f_measure",
    "j_and_f",
    "j_measure",
    "jf_measure",
    "score_store_video",
    "score_video",
    "tolerance_radius",
]

#: Tolerance radius as a fraction of the frame diagonal.
TOLERANCE_FRACTION = 0.008


def tolerance_radius(dims: GridDims) -> int:
    return round(TOLERANCE_FRACTION * math.hypot(dims.width, dims.height))


def boundary_mask(mask: Mask) -> Mask:
    """Pixels of the mask with at least one 4-neighbour outside it.

    Above the top row and below the bottom row counts as outside; the
    side edges wrap into each other on wrapped grids and count as
    outside otherwise.
    """

    bitmap = decode(mask)
    h, w = bitmap.shape
    inside_up = np.zeros_like(bitmap)
    inside_up[1:, :] = bitmap[:-1, :]
    inside_down = np.zeros_like(bitmap)
    inside_down[:-1, :] = bitmap[1:, :]
    if mask.dims.wrap_horizontal:
        inside_left = np.roll(bitmap, 1, axis=1)
        inside_right = np.roll(bitmap, -1, axis=1)
    else:
        inside_left = np.zeros_like(bitmap)
        inside_left[:, 1:] = bitmap[:, :-1]
        inside_right = np.zeros_like(bitmap)
        inside_right[:, :-1] = bitmap[:, 1:]
    interior = bitmap & inside_up & inside_down & inside_left & inside_right
    return encode(bitmap & ~interior, mask.dims)


def _disk(radius: int) -> np.ndarray:
    side = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(side, side, indexing="ij")
    return dr * dr + dc * dc <= radius * radius


def _within(boundary: np.ndarray, radius: int, wrap: bool) -> np.ndarray:
    """All pixels within Euclidean ``radius`` of a boundary pixel."""

    if radius == 0:
        return boundary
    if wrap:
        padded = np.concatenate(
            [boundary[:, -radius:], boundary, boundary[:, :radius]], axis=1
        )
        grown = ndimage.binary_dilation(padded, structure=_disk(radius))
        return grown[:, radius:-radius]
    return ndimage.binary_dilation(boundary, structure=_disk(radius))


def j_measure(pred: Mask, ref: Mask) -> float:
    """Region similarity; two empty masks agree perfectly."""

    if pred.is_empty() and ref.is_empty():
        return 1.0
    return iou(pred, ref)


def f_measure(pred: Mask, ref: Mask, radius: int | None = None) -> float:
    """Boundary alignment under the tolerance radius."""

    if pred.dims != ref.dims:
        raise ValueError("masks live on different grids")
    r = tolerance_radius(pred.dims) if radius is None else radius
    if r < 0:
        raise ValueError("tolerance radius must be non-negative")
    pred_b = decode(boundary_mask(pred))
    ref_b = decode(boundary_mask(ref))
    n_pred = int(pred_b.sum())
    n_ref = int(ref_b.sum())
    if n_pred == 0 and n_ref == 0:
        return 1.0
    if n_pred == 0 or n_ref == 0:
        return 0.0
    wrap = pred.dims.wrap_horizontal
    precision = int((pred_b & _within(ref_b, r, wrap)).sum()) / n_pred
    recall = int((ref_b & _within(pred_b, r, wrap)).sum()) / n_ref
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def jf_measure(pred: Mask, ref: Mask, radius: int | None = None) -> float:
    return (j_measure(pred, ref) + f_measure(pred, ref, radius)) / 2


@dataclass(frozen=True)
class VideoScores:
    j: float
    f: float
    jf: float
    per_instance: tuple[tuple[int, float, float], ...]  # (id, J, F)


def score_video(
    pred_frames: Sequence[Mapping[int, Mask]],
    ref_frames: Sequence[Mapping[int, Mask]],
    dims: GridDims,
    radius: int | None = None,
) -> VideoScores:
    """Average J and F per reference instance, then across instances.

    Each element of the frame sequences maps instance id to mask.  The
    reference defines the instance set; a frame counts toward an
    instance when either side has a mask for it there, with the missing
    side scored as empty.
    """

    if len(pred_frames) != len(ref_frames):
        raise ValueError(
            f"prediction has {len(pred_frames)} frames, reference "
            f"{len(ref_frames)}"
        )
    ids = sorted({i for frame in ref_frames for i in frame})
    if not ids:
        raise ValueError("reference annotation has no instances")
    empty = Mask.empty(dims)
    per_instance = []
    for instance_id in ids:
        j_values = []
        f_values = []
        for pred, ref in zip(pred_frames, ref_frames):
            p = pred.get(instance_id, empty)
            r = ref.get(instance_id, empty)
            if p.is_empty() and r.is_empty():
                continue
            j_values.append(j_measure(p, r))
            f_values.append(f_measure(p, r, radius))
        if not j_values:
            continue
        per_instance.append(
            (
                instance_id,
                sum(j_values) / len(j_values),
                sum(f_values) / len(f_values),
            )
        )
    if not per_instance:
        raise ValueError("no instance appears in any frame")
    j = sum(row[1] for row in per_instance) / len(per_instance)
    f = sum(row[2] for row in per_instance) / len(per_instance)
    return VideoScores(j=j, f=f, jf=(j + f) / 2, per_instance=tuple(per_instance))


def _store_frames(store, video_id: str):
    manifest = store.manifest(video_id)
    frames = []
    for index in range(manifest.frame_count):
        entries = store.read_frame(video_id, index)
        frames.append({entry.instance_id: entry.mask for entry in entries})
    return manifest, frames


def score_store_video(
    pred_store, ref_store, video_id: str, radius: int | None = None
) -> VideoScores:
    """Score one video's stored annotations against a reference store."""

    pred_dims = pred_store.manifest(video_id).dims
    ref_dims = ref_store.manifest(video_id).dims
    if pred_dims != ref_dims:
        raise ValueError(
            f"{video_id}: prediction grid {pred_dims} does not match "
            f"reference {ref_dims}"
        )
    _, pred_frames = _store_frames(pred_store, video_id)
    _, ref_frames = _store_frames(ref_store, video_id)
    return score_video(pred_frames, ref_frames, ref_dims, radius)


def j_and_f(
    pred_store,
    ref_store,
    video_ids: Sequence[str] | None = None,
    radius: int | None = None,
) -> tuple[float, float, float]:
    """Mean (J, F, J&F) across videos, each video weighted equally."""

    ids = list(video_ids) if video_ids else ref_store.video_ids()
    if not ids:
        raise ValueError("no videos to score")
    scores = [
        score_store_video(pred_store, ref_store, vid, radius) for vid in ids
    ]
    j = sum(s.j for s in scores) / len(scores)
    f = sum(s.f for s in scores) / len(scores)
    return (j, f, (j + f) / 2)
