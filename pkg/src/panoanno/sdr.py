"""First-frame segmentation: window, stitch, deduplicate, label, refine.

Produces the initial instance set for a panoramic frame.  The frame is
horizontally padded so the seam appears in a window interior, segmented
window by window by every registered proposal backend, stitched back
into whole-canvas masks, folded onto the source frame, and deduplicated.
Each surviving region is then named through the semantic-label agent
and, when a tracker is available, refined by prompt-shift consensus:
the tracker is re-prompted with the mask nudged in nine directions and
the returned segmentations vote on the most stable one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .agents import AgentSuite, build_label_query
from .backends import Gateway
from .errors import ConfigError
from .geometry import (
    PadPlan,
    PatchPlan,
    fold_padded_mask,
    make_pad_plan,
    make_patch_plan,
    stitch_groups,
)
from .mask import (
    GridDims,
    Mask,
    _UnionFind,
    intersection_area,
    iou,
    shift_mask,
    union_all,
)
from .protocol import FrameRef, TrackRequest

__all__ = [
    "ConsensusRecord",
    "SdrConfig",
    "SdrEntry",
    "SdrResult",
    "ShiftConfig",
    "consensus_refine",
    "duplicate_groups",
    "make_shift_config",
    "run_sdr",
]


# ---------------------------------------------------------------------------
# Duplicate folding


def duplicate_groups(masks: Sequence[Mask], tau: float) -> list[list[int]]:
    """Group mask indices whose pairwise IoU exceeds ``tau``, transitively.

    Groups are ordered by their smallest member; members are sorted.
    """

    uf = _UnionFind(len(masks))
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            if iou(masks[i], masks[j]) > tau:
                uf.merge(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(len(masks)):
        groups.setdefault(uf.find(i), []).append(i)
    return [sorted(groups[k]) for k in sorted(groups)]


def _majority_label(labels: Sequence[str]) -> str:
    """Most frequent label; ties go to the earliest occurrence."""

    counts: dict[str, int] = {}
    first: dict[str, int] = {}
    for idx, label in enumerate(labels):
        counts[label] = counts.get(label, 0) + 1
        first.setdefault(label, idx)
    return max(counts, key=lambda lab: (counts[lab], -first[lab]))


# ---------------------------------------------------------------------------
# Prompt-shift consensus


@dataclass(frozen=True)
class ShiftConfig:
    """Nine prompt nudges: identity then the compass clockwise from north."""

    magnitude: int
    tau: float = 0.5

    def __post_init__(self) -> None:
        if self.magnitude < 1:
            raise ConfigError("shift magnitude must be at least one pixel")

    @property
    def directions(self) -> tuple[tuple[int, int], ...]:
        m = self.magnitude
        return (
            (0, 0),
            (-m, 0),
            (-m, m),
            (0, m),
            (m, m),
            (m, 0),
            (m, -m),
            (0, -m),
            (-m, -m),
        )


def make_shift_config(dims: GridDims, fraction: float = 0.01, tau: float = 0.5) -> ShiftConfig:
    """Shift magnitude is ``fraction`` of the frame width, at least one."""

    return ShiftConfig(magnitude=max(1, round(fraction * dims.width)), tau=tau)


@dataclass(frozen=True)
class ConsensusRecord:
    """What the prompt-shift vote saw and decided for one mask."""

    directions: tuple[tuple[int, int], ...]  # produced a candidate, in order
    skipped_prompts: tuple[tuple[int, int], ...]  # shift emptied the prompt
    empty_returns: tuple[tuple[int, int], ...]  # tracker returned nothing
    votes: tuple[int, ...]
    chosen: int | None  # index into ``directions``; None keeps the prompt

    def describe(self) -> str:
        if self.chosen is None:
            outcome = "kept-prompt"
        else:
            d = self.directions[self.chosen]
            outcome = f"chose=({d[0]},{d[1]}) votes={self.votes[self.chosen]}"
        return (
            f"consensus candidates={len(self.directions)} "
            f"skipped={len(self.skipped_prompts)} empty={len(self.empty_returns)} "
            f"{outcome}"
        )


def consensus_refine(
    gateway: Gateway,
    tracker_id: str,
    video_id: str,
    frame_index: int,
    mask: Mask,
    config: ShiftConfig,
) -> tuple[Mask, ConsensusRecord]:
    """Re-prompt the tracker under nine nudges and keep the stable mask.

    Every non-empty returned mask is a candidate; a candidate's vote
    count is the number of returned masks (itself included) agreeing
    with it above the IoU threshold.  The winner has the most votes,
    then the largest IoU sum, then the earliest direction.  When no
    direction returns anything the original mask is kept unchanged.
    """

    candidates: list[tuple[tuple[int, int], Mask]] = []
    skipped: list[tuple[int, int]] = []
    empties: list[tuple[int, int]] = []
    for d_row, d_col in config.directions:
        prompt = mask if (d_row, d_col) == (0, 0) else shift_mask(mask, d_row, d_col)
        if prompt.is_empty():
            skipped.append((d_row, d_col))
            continue
        frames = gateway.track(
            TrackRequest(video_id, frame_index, prompt, horizon=1), tracker_id
        )
        returned = frames[0][1]
        if returned.is_empty():
            empties.append((d_row, d_col))
            continue
        candidates.append(((d_row, d_col), returned))

    if not candidates:
        record = ConsensusRecord((), tuple(skipped), tuple(empties), (), None)
        return mask, record

    masks = [m for _d, m in candidates]
    pairwise = [[iou(a, b) for b in masks] for a in masks]
    votes = tuple(sum(1 for v in row if v > config.tau) for row in pairwise)
    totals = [sum(row) for row in pairwise]
    best = max(range(len(masks)), key=lambda i: (votes[i], totals[i], -i))
    record = ConsensusRecord(
        directions=tuple(d for d, _m in candidates),
        skipped_prompts=tuple(skipped),
        empty_returns=tuple(empties),
        votes=votes,
        chosen=best,
    )
    return masks[best], record


# ---------------------------------------------------------------------------
# The full first-frame pass


@dataclass(frozen=True)
class SdrConfig:
    tau: float = 0.5
    pad_fraction: float = 0.25
    patch_width: int | None = None
    stride: int | None = None
    shift_fraction: float = 0.01
    refine: bool = True
    label_overlap: float = 0.5


@dataclass(frozen=True)
class SdrEntry:
    instance_id: int
    label: str
    mask: Mask
    provenance: str = "sdr"


@dataclass
class SdrResult:
    entries: list[SdrEntry]
    records: list[str]
    consensus: list[ConsensusRecord] = field(default_factory=list)


def _segment_windows(
    gateway: Gateway,
    backend_id: str,
    role: str,
    video_id: str,
    frame_index: int,
    pad: PadPlan,
    plan: PatchPlan,
):
    """Collect per-window proposals on the padded canvas."""

    per_window = []
    for start, width in plan.windows:
        ref = FrameRef(video_id, frame_index, pad.padded, crop=(start, width))
        if role == "entity":
            per_window.append(list(gateway.segment_entities(ref, backend_id)))
        else:
            per_window.append(list(gateway.segment_panoptic(ref, backend_id)))
    return per_window


def _stitch_labeled(
    per_window, plan: PatchPlan, pad: PadPlan, tau: float
) -> list[tuple[Mask, str, str]]:
    """Stitch panoptic proposals, carrying labels by group majority."""

    masks_only = [[p.mask for p in props] for props in per_window]
    groups = stitch_groups(masks_only, plan, tau)
    out: list[tuple[Mask, str, str]] = []
    for group in groups:
        members = [per_window[w][m] for w, m in group]
        merged = union_all([p.mask for p in members], plan.canvas)
        label = _majority_label([p.label for p in members])
        out.append((fold_padded_mask(merged, pad), label, members[0].source_taxonomy))
    return out


def _dedup_labeled(
    entries: list[tuple[Mask, str, str]], dims: GridDims, tau: float
) -> list[tuple[Mask, str, str]]:
    """Fold duplicate labeled masks (padding copies) into one entry each."""

    groups = duplicate_groups([m for m, _l, _t in entries], tau)
    out = []
    for group in groups:
        merged = union_all([entries[i][0] for i in group], dims)
        label = _majority_label([entries[i][1] for i in group])
        out.append((merged, label, entries[group[0]][2]))
    return out


def run_sdr(
    gateway: Gateway,
    suite: AgentSuite,
    video_id: str,
    frame_index: int,
    dims: GridDims,
    config: SdrConfig | None = None,
    id_start: int = 1,
) -> SdrResult:
    """Segment one frame from scratch and return labeled instances.

    Instance ids are assigned in first-pixel order starting at
    ``id_start``.  ``records`` holds one human-readable provenance line
    per stage and per instance.
    """

    cfg = config if config is not None else SdrConfig()
    entity_ids = gateway.ids("entity")
    panoptic_ids = gateway.ids("panoptic")
    tracker_ids = gateway.ids("tracker")
    if not entity_ids:
        raise ConfigError("segmentation needs at least one entity backend")

    pad = make_pad_plan(dims, cfg.pad_fraction)
    plan = make_patch_plan(pad.padded, cfg.patch_width, cfg.stride)
    records: list[str] = []

    # Entity proposals: stitch per backend, fold, then pool and dedup.
    pool: list[Mask] = []
    for backend_id in entity_ids:
        per_window = _segment_windows(
            gateway, backend_id, "entity", video_id, frame_index, pad, plan
        )
        masks_only = [[p.mask for p in props] for props in per_window]
        groups = stitch_groups(masks_only, plan, cfg.tau)
        folded = []
        for group in groups:
            merged = union_all([masks_only[w][m] for w, m in group], plan.canvas)
            folded.append(fold_padded_mask(merged, pad))
        n_props = sum(len(props) for props in per_window)
        records.append(
            f"frame {frame_index} entity {backend_id}: {n_props} proposals in "
            f"{len(plan.windows)} windows -> {len(folded)} stitched"
        )
        pool.extend(folded)

    groups = duplicate_groups(pool, cfg.tau)
    merged_masks = [union_all([pool[i] for i in group], dims) for group in groups]
    # An object straddling the pad boundary comes back once whole and once
    # as the cut-off leftover; the leftover folds to a strict subset of the
    # whole mask and is the same object, not a second instance.
    merged_masks.sort(key=lambda m: (-m.area, m.first_pixel()))
    absorbed: list[Mask] = []
    for mask in merged_masks:
        if any(
            intersection_area(mask, larger) == mask.area for larger in absorbed
        ):
            continue
        absorbed.append(mask)
    merged_masks = absorbed
    records.append(
        f"frame {frame_index}: {len(pool)} stitched masks -> "
        f"{len(merged_masks)} after duplicate folding"
    )

    # Panoptic proposals feed label candidates, not instances of their own.
    labeled: list[tuple[Mask, str, str]] = []
    for backend_id in panoptic_ids:
        per_window = _segment_windows(
            gateway, backend_id, "panoptic", video_id, frame_index, pad, plan
        )
        stitched = _stitch_labeled(per_window, plan, pad, cfg.tau)
        deduped = _dedup_labeled(stitched, dims, cfg.tau)
        records.append(
            f"frame {frame_index} panoptic {backend_id}: "
            f"{sum(len(p) for p in per_window)} proposals -> {len(deduped)} regions"
        )
        labeled.extend(deduped)

    # Name every instance through the semantic-label agent.
    named: list[tuple[Mask, str]] = []
    for mask in merged_masks:
        query = build_label_query(mask, labeled, cfg.label_overlap)
        named.append((mask, suite.check_semantic_label(query)))

    # Stabilize each mask by prompt-shift consensus when a tracker exists.
    consensus: list[ConsensusRecord] = []
    if cfg.refine and tracker_ids:
        shift_cfg = make_shift_config(dims, cfg.shift_fraction, cfg.tau)
        refined: list[tuple[Mask, str]] = []
        for mask, label in named:
            new_mask, record = consensus_refine(
                gateway, tracker_ids[0], video_id, frame_index, mask, shift_cfg
            )
            consensus.append(record)
            records.append(f"frame {frame_index} {label}: {record.describe()}")
            refined.append((new_mask, label))
        named = refined

    named.sort(key=lambda pair: pair[0].first_pixel())
    entries = [
        SdrEntry(instance_id=id_start + i, label=label, mask=mask)
        for i, (mask, label) in enumerate(named)
    ]
    for entry in entries:
        records.append(
            f"frame {frame_index} instance {entry.instance_id}: "
            f"label={entry.label} area={entry.mask.area}"
        )
    return SdrResult(entries=entries, records=records, consensus=consensus)
