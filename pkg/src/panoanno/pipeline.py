"""Video annotation pipeline.

Orchestrates one video through its whole life: ingestion gates, the
initial segment-and-propagate pass, the per-frame coverage check with
missed-content repair, the automatic quality check, and review bundle
export / import.  Every phase commits through the store so a killed run
resumes at the first frame whose log line is missing.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .agents import (
    BLANK_BORDER,
    BLANK_EXISTING,
    AgentSuite,
    FrameStat,
    InstanceSummary,
    build_label_query,
)
from .backends import Gateway
from .config import Config, config_digest, make_gateway, make_suite, sdr_config
from .errors import ConfigError, IngestError, StoreError
from .frames import list_frames, read_meta_fps, read_ppm_dims, write_meta
from .geometry import make_seam_plan
from .mask import (
    BlankRegion,
    GridDims,
    Mask,
    blank_regions,
    column_arc,
    coverage_rate,
    intersection,
    intersection_area,
    matches,
    rotate_columns,
    union,
    union_all,
)
from .protocol import FrameRef, TrackRequest, valid_id
from .sdr import consensus_refine, duplicate_groups, make_shift_config, run_sdr
from .store import (
    Entry,
    IssueRecord,
    Manifest,
    Report,
    Store,
    parse_revision,
    serialize_revision,
)

__all__ = [
    "CRASH_ENV",
    "RunLine",
    "annotate_video",
    "export_review",
    "format_run_line",
    "import_revisions",
    "ingest_video",
    "parse_run_line",
    "refine_video",
]

# Test hook: exit hard right after the named frame's log line lands, so
# crash-recovery can be exercised at an exact commit boundary.
CRASH_ENV = "PANOANNO_CRASH_AFTER_FRAME"


# ---------------------------------------------------------------------------
# ingestion


def ingest_video(
    config: Config, source: str | Path, store: Store | None = None
) -> Manifest:
    """Admit one source directory of frames into the store.

    The directory name becomes the video id.  Clips shorter than the
    configured minimum are rejected; longer ones keep only the leading
    frames that fit the maximum; every frame header must match the
    expected dimensions.  Re-ingesting a known video is a no-op.
    """

    src = Path(source)
    video_id = src.name
    if not valid_id(video_id):
        raise IngestError(f"directory name {video_id!r} is not a usable video id")
    if store is None:
        store = Store(config.store_root)
    try:
        return store.manifest(video_id)
    except StoreError:
        pass

    files = list_frames(src.parent, video_id)
    if not files:
        raise IngestError(f"{src}: no frames found")
    fps = read_meta_fps(src, config.ingest.default_fps)
    duration = len(files) / fps
    if duration < config.ingest.min_seconds:
        raise IngestError(
            f"{video_id}: {duration:g} s is shorter than the "
            f"{config.ingest.min_seconds:g} s minimum"
        )
    max_frames = int(config.ingest.max_seconds * fps)
    if len(files) > max_frames:
        files = files[:max_frames]

    expected = (config.ingest.width, config.ingest.height)
    for path in files:
        got = read_ppm_dims(path)
        if got != expected:
            raise IngestError(
                f"{video_id}: frame {path.name} is {got[0]}x{got[1]}, "
                f"expected {expected[0]}x{expected[1]}"
            )

    dest = Path(config.frames_root) / video_id
    if dest.resolve() != src.resolve():
        dest.mkdir(parents=True, exist_ok=True)
        for index, path in enumerate(files):
            shutil.copyfile(path, dest / f"{index:06d}.ppm")
        write_meta(dest, fps)

    manifest = Manifest(
        video_id=video_id,
        dims=GridDims(config.ingest.width, config.ingest.height, True),
        frame_count=len(files),
        fps=fps,
        image_format="ppm",
        config_digest=config_digest(config),
        status="ingested",
    )
    store.create_video(manifest)
    return manifest


# ---------------------------------------------------------------------------
# run log lines


@dataclass(frozen=True)
class RunLine:
    """One frame's decision record from run.log."""

    frame_index: int
    coverage: float
    gate_passed: bool
    actions: tuple[str, ...]
    post_coverage: float


def format_run_line(
    frame_index: int,
    coverage: float,
    gate_passed: bool,
    actions: Sequence[str],
    post_coverage: float,
) -> str:
    tokens = "+".join(actions) if actions else "none"
    gate = "pass" if gate_passed else "fail"
    return (
        f"frame {frame_index:06d} coverage={coverage!r} "
        f"gate={gate} actions={tokens} post={post_coverage!r}"
    )


def parse_run_line(line: str) -> RunLine:
    parts = line.split(" ")
    if (
        len(parts) != 6
        or parts[0] != "frame"
        or not parts[2].startswith("coverage=")
        or not parts[3].startswith("gate=")
        or not parts[4].startswith("actions=")
        or not parts[5].startswith("post=")
    ):
        raise StoreError(f"bad run line {line!r}")
    gate = parts[3][5:]
    if gate not in ("pass", "fail"):
        raise StoreError(f"bad gate value in run line {line!r}")
    tokens = parts[4][8:]
    try:
        return RunLine(
            frame_index=int(parts[1]),
            coverage=float(parts[2][9:]),
            gate_passed=gate == "pass",
            actions=() if tokens == "none" else tuple(tokens.split("+")),
            post_coverage=float(parts[5][5:]),
        )
    except ValueError as exc:
        raise StoreError(f"bad run line {line!r}: {exc}") from exc


def _crash_hook(frame_index: int) -> None:
    value = os.environ.get(CRASH_ENV)
    if value is None:
        return
    try:
        wanted = int(value)
    except ValueError:
        return
    if wanted == frame_index:
        os._exit(137)


# ---------------------------------------------------------------------------
# annotation (initial pass + per-frame repair)


def annotate_video(
    config: Config,
    store: Store,
    video_id: str,
    gateway: Gateway | None = None,
    suite: AgentSuite | None = None,
) -> Report:
    """Run every outstanding phase for one ingested video.

    Safe to re-run: completed frames are skipped via the run log, and a
    video that already reached the checked state is returned as-is.
    """

    if gateway is None:
        gateway = make_gateway(config)
    if suite is None:
        suite = make_suite(config)
    with store.lock(video_id):
        manifest = store.manifest(video_id)
        if manifest.status in ("checked", "finalized"):
            return store.read_report(video_id)
        if manifest.status in ("ingested", "annotating"):
            _annotate_frames(config, store, gateway, suite, manifest)
            store.set_status(video_id, "annotated")
        return _check_video(store, suite, store.manifest(video_id))


def refine_video(
    config: Config, store: Store, video_id: str, suite: AgentSuite | None = None
) -> Report:
    """Re-run the automatic quality check on an annotated video."""

    if suite is None:
        suite = make_suite(config)
    with store.lock(video_id):
        manifest = store.manifest(video_id)
        if manifest.status in ("ingested", "annotating"):
            raise StoreError(f"{video_id} is not annotated yet")
        if manifest.status == "finalized":
            raise StoreError(f"{video_id} is already finalized")
        return _check_video(store, suite, manifest)


def _annotate_frames(
    config: Config,
    store: Store,
    gateway: Gateway,
    suite: AgentSuite,
    manifest: Manifest,
) -> None:
    video_id = manifest.video_id
    frame_count = manifest.frame_count
    trackers = gateway.ids("tracker")
    if frame_count > 1 and not trackers:
        raise ConfigError("annotating a multi-frame video needs a tracker backend")
    tracker = trackers[0] if trackers else None

    if manifest.status == "ingested":
        store.set_status(video_id, "annotating")
    done = len(store.run_lines(video_id))
    if done == 0:
        _initial_pass(config, store, gateway, suite, manifest, tracker)
        done = 1
    for frame_index in range(done, frame_count):
        _repair_frame(
            config, store, gateway, suite, manifest, tracker, frame_index
        )


def _initial_pass(
    config: Config,
    store: Store,
    gateway: Gateway,
    suite: AgentSuite,
    manifest: Manifest,
    tracker: str | None,
) -> None:
    """Segment the first frame from scratch, then propagate every
    instance across the whole clip."""

    video_id = manifest.video_id
    dims = manifest.dims
    frame_count = manifest.frame_count

    result = run_sdr(
        gateway, suite, video_id, 0, dims, sdr_config(config), id_start=1
    )
    labels = {e.instance_id: e.label for e in result.entries}
    store.write_instances(video_id, labels)
    store.write_frame(
        video_id,
        0,
        [Entry(e.instance_id, e.label, "sdr", e.mask) for e in result.entries],
    )

    future: dict[int, dict[int, Mask]] = {t: {} for t in range(1, frame_count)}
    if tracker is not None:
        for entry in result.entries:
            response = gateway.track(
                TrackRequest(video_id, 0, entry.mask, frame_count), tracker
            )
            for frame_index, mask in response[1:]:
                if not mask.is_empty():
                    future[frame_index][entry.instance_id] = mask
    for frame_index in range(1, frame_count):
        store.write_frame(
            video_id,
            frame_index,
            [
                Entry(instance_id, labels[instance_id], "tracked", mask)
                for instance_id, mask in sorted(future[frame_index].items())
            ],
        )

    store.append_provenance(video_id, result.records)
    _drain_escalations(store, suite, video_id, "frame 0")
    coverage = coverage_rate([e.mask for e in result.entries], dims)
    store.append_run_line(
        video_id,
        format_run_line(
            0,
            coverage,
            coverage > config.pipeline.coverage_threshold,
            (f"sdr={len(result.entries)}",),
            coverage,
        ),
    )
    _crash_hook(0)


def _repair_frame(
    config: Config,
    store: Store,
    gateway: Gateway,
    suite: AgentSuite,
    manifest: Manifest,
    tracker: str | None,
    frame_index: int,
) -> None:
    """Gate one frame on coverage; repair and re-propagate on failure."""

    video_id = manifest.video_id
    dims = manifest.dims
    entries = {e.instance_id: e for e in store.read_frame(video_id, frame_index)}
    coverage = coverage_rate([e.mask for e in entries.values()], dims)
    passed = coverage > config.pipeline.coverage_threshold

    actions: list[str] = []
    notes: list[str] = []
    repaired: set[int] = set()
    labels = store.instances(video_id)
    known_ids = set(labels)
    if not passed:
        previous = [
            InstanceSummary(e.instance_id, e.label, e.mask)
            for e in store.read_frame(video_id, frame_index - 1)
        ]
        regions = blank_regions(
            [e.mask for e in entries.values()],
            dims,
            config.pipeline.min_blank_fraction,
        )
        for region in regions:
            tokens = _repair_region(
                config,
                gateway,
                suite,
                video_id,
                dims,
                frame_index,
                region,
                previous,
                entries,
                labels,
                tracker,
                notes,
            )
            actions.extend(tokens)
            repaired.update(int(tok.split("=")[1]) for tok in tokens)

        if set(labels) != known_ids:
            store.write_instances(video_id, labels)
        store.write_frame(video_id, frame_index, list(entries.values()))

    post = coverage_rate([e.mask for e in entries.values()], dims)
    if not passed:
        residue = blank_regions(
            [e.mask for e in entries.values()],
            dims,
            config.pipeline.min_blank_fraction,
        )
        for region in residue:
            store.append_escalations(
                video_id,
                [
                    f"frame {frame_index}: unresolved blank of {region.area} px "
                    f"near ({region.centroid_row:.1f}, {region.centroid_col:.1f})"
                ],
            )
        if repaired and tracker is not None:
            _propagate_repairs(
                store,
                gateway,
                manifest,
                tracker,
                frame_index,
                {i: entries[i] for i in sorted(repaired)},
                labels,
            )
    if notes:
        store.append_provenance(video_id, notes)
    _drain_escalations(store, suite, video_id, f"frame {frame_index}")
    store.append_run_line(
        video_id,
        format_run_line(frame_index, coverage, passed, actions, post),
    )
    _crash_hook(frame_index)


def _repair_region(
    config: Config,
    gateway: Gateway,
    suite: AgentSuite,
    video_id: str,
    dims: GridDims,
    frame_index: int,
    region: BlankRegion,
    previous: Sequence[InstanceSummary],
    entries: dict[int, Entry],
    labels: dict[int, str],
    tracker: str | None,
    notes: list[str],
) -> list[str]:
    """Dispatch one blank region and return its action tokens."""

    kind = suite.classify_blank(region, previous, dims)
    where = (
        f"frame {frame_index} blank {region.area} px at "
        f"({region.centroid_row:.1f}, {region.centroid_col:.1f})"
    )
    if kind == BLANK_BORDER:
        token = _merge_across_border(
            config, gateway, video_id, dims, frame_index, region, entries
        )
        if token is not None:
            notes.append(f"{where}: {kind} -> {token}")
            return [token]
        notes.append(f"{where}: {kind} unmatched, treating as new content")
    elif kind == BLANK_EXISTING:
        token = _retrieve_lost_instance(
            suite, dims, region, previous, entries, labels
        )
        if token is not None:
            notes.append(f"{where}: {kind} -> {token}")
            return [token]
        notes.append(f"{where}: {kind} unretrieved, treating as new content")
    tokens = _register_new_content(
        config,
        gateway,
        suite,
        video_id,
        dims,
        frame_index,
        region,
        entries,
        labels,
        tracker,
    )
    notes.append(
        f"{where}: -> {' '.join(tokens) if tokens else 'no usable proposal'}"
    )
    return tokens


def _touches_edge(mask: Mask, *, left: bool) -> bool:
    width = mask.dims.width
    return any(
        (start == 0) if left else (start + length == width)
        for _row, start, length in mask.runs
    )


def _merge_across_border(
    config: Config,
    gateway: Gateway,
    video_id: str,
    dims: GridDims,
    frame_index: int,
    region: BlankRegion,
    entries: dict[int, Entry],
) -> str | None:
    """Rejoin a piece cut off at the frame edge with its other half.

    The view is rotated so the blank sits at the centre, the frame is
    re-segmented there, and candidates covering at least half the blank
    are matched against instances touching the opposite edge.  The match
    keeps the existing (elder) id.
    """

    plan = make_seam_plan(dims, region)
    ref = FrameRef(video_id, frame_index, dims, shift_cols=plan.shift_cols)
    candidates: list[Mask] = []
    for backend_id in gateway.ids("entity"):
        for proposal in gateway.segment_entities(ref, backend_id):
            mask = rotate_columns(proposal.mask, plan.shift_cols)
            if 2 * intersection_area(mask, region.mask) >= region.area:
                candidates.append(mask)
    candidates.sort(key=lambda m: (-m.area, m.first_pixel()))

    other_side_left = region.touches_right_border
    targets = sorted(
        (
            e
            for e in entries.values()
            if _touches_edge(e.mask, left=other_side_left)
        ),
        key=lambda e: e.instance_id,
    )
    for candidate in candidates:
        for target in targets:
            if matches(candidate, target.mask, config.pipeline.match_threshold):
                entries[target.instance_id] = Entry(
                    target.instance_id,
                    target.label,
                    "border-merged",
                    union(candidate, target.mask),
                )
                return f"border-merged={target.instance_id}"
    return None


def _retrieve_lost_instance(
    suite: AgentSuite,
    dims: GridDims,
    region: BlankRegion,
    previous: Sequence[InstanceSummary],
    entries: dict[int, Entry],
    labels: dict[int, str],
) -> str | None:
    """Give a dropped region back to the instance it belonged to."""

    instance_id = suite.retrieve_object(region, previous, dims)
    if instance_id is None or instance_id not in labels:
        return None
    current = entries.get(instance_id)
    mask = region.mask if current is None else union(current.mask, region.mask)
    entries[instance_id] = Entry(
        instance_id, labels[instance_id], "retrieved", mask
    )
    return f"retrieved={instance_id}"


def _register_new_content(
    config: Config,
    gateway: Gateway,
    suite: AgentSuite,
    video_id: str,
    dims: GridDims,
    frame_index: int,
    region: BlankRegion,
    entries: dict[int, Entry],
    labels: dict[int, str],
    tracker: str | None,
) -> list[str]:
    """Segment, name, and register fresh objects inside a blank region.

    Segmentation is restricted to a window three arcs wide around the
    blank; proposals mostly inside the blank are clipped to it, merged
    when duplicated, named from overlapping labeled proposals, and
    stabilised by prompt-shift consensus before getting fresh ids.
    """

    start, arc = column_arc(region.mask)
    window = min(dims.width, 3 * arc)
    if window < dims.width:
        shift = (start - arc) % dims.width
        ref = FrameRef(
            video_id, frame_index, dims, shift_cols=shift, crop=(0, window)
        )
    else:
        shift = 0
        ref = FrameRef(video_id, frame_index, dims)

    pieces: list[Mask] = []
    for backend_id in gateway.ids("entity"):
        for proposal in gateway.segment_entities(ref, backend_id):
            mask = rotate_columns(proposal.mask, shift)
            if 2 * intersection_area(mask, region.mask) >= mask.area:
                clipped = intersection(mask, region.mask)
                if not clipped.is_empty():
                    pieces.append(clipped)
    if not pieces:
        return []
    groups = duplicate_groups(pieces, config.pipeline.match_threshold)
    merged = [
        union_all([pieces[i] for i in group], dims) for group in groups
    ]
    merged.sort(key=lambda m: m.first_pixel())

    labeled: list[tuple[Mask, str, str]] = []
    for backend_id in gateway.ids("panoptic"):
        for proposal in gateway.segment_panoptic(ref, backend_id):
            labeled.append(
                (
                    rotate_columns(proposal.mask, shift),
                    proposal.label,
                    proposal.source_taxonomy,
                )
            )

    shift_cfg = None
    if config.pipeline.refine and tracker is not None:
        shift_cfg = make_shift_config(
            dims, config.pipeline.shift_fraction, config.pipeline.match_threshold
        )

    tokens: list[str] = []
    next_id = max(labels, default=0) + 1
    for mask in merged:
        label = suite.check_semantic_label(build_label_query(mask, labeled))
        if shift_cfg is not None:
            refined, _record = consensus_refine(
                gateway, tracker, video_id, frame_index, mask, shift_cfg
            )
            refined = intersection(refined, region.mask)
            if not refined.is_empty():
                mask = refined
        entries[next_id] = Entry(next_id, label, "new-object", mask)
        labels[next_id] = label
        tokens.append(f"new-object={next_id}")
        next_id += 1
    return tokens


def _propagate_repairs(
    store: Store,
    gateway: Gateway,
    manifest: Manifest,
    tracker: str,
    frame_index: int,
    repaired: dict[int, Entry],
    labels: dict[int, str],
) -> None:
    """Track repaired instances forward, replacing stale propagations.

    Only entries that are absent or still carry plain tracking provenance
    give way; anything a later repair or an editor produced stands.
    """

    video_id = manifest.video_id
    horizon = manifest.frame_count - frame_index
    if horizon < 2:
        return
    updates: dict[int, dict[int, Mask | None]] = {}
    for instance_id, entry in repaired.items():
        response = gateway.track(
            TrackRequest(video_id, frame_index, entry.mask, horizon), tracker
        )
        for future_index, mask in response[1:]:
            updates.setdefault(future_index, {})[instance_id] = (
                None if mask.is_empty() else mask
            )
    for future_index in sorted(updates):
        current = {
            e.instance_id: e for e in store.read_frame(video_id, future_index)
        }
        changed = False
        for instance_id, mask in sorted(updates[future_index].items()):
            existing = current.get(instance_id)
            if mask is None:
                if existing is not None and existing.provenance == "tracked":
                    del current[instance_id]
                    changed = True
            elif existing is None or existing.provenance == "tracked":
                current[instance_id] = Entry(
                    instance_id, labels[instance_id], "tracked", mask
                )
                changed = True
        if changed:
            store.write_frame(video_id, future_index, list(current.values()))


def _drain_escalations(
    store: Store, suite: AgentSuite, video_id: str, context: str
) -> None:
    if suite.escalations:
        store.append_escalations(
            video_id,
            [f"{context}: {line}" for line in suite.escalations],
        )
        suite.escalations.clear()


# ---------------------------------------------------------------------------
# automatic quality check


def _check_video(store: Store, suite: AgentSuite, manifest: Manifest) -> Report:
    video_id = manifest.video_id
    stats = []
    for frame_index in range(manifest.frame_count):
        entries = store.read_frame(video_id, frame_index)
        stats.append(
            FrameStat(
                frame_index,
                coverage_rate([e.mask for e in entries], manifest.dims),
                tuple(
                    (e.instance_id, e.label, e.mask.area) for e in entries
                ),
            )
        )
    reviewed = suite.check_annotation(stats, manifest.dims)
    report = Report(
        score=reviewed.score,
        issues=tuple(
            IssueRecord(i.frame_index, i.instance_id, i.kind, i.comment)
            for i in reviewed.issues
        ),
    )
    store.write_report(video_id, report)
    _drain_escalations(store, suite, video_id, "check")
    if not store.has_snapshot(video_id):
        store.snapshot_refined(video_id)
    if manifest.status != "checked":
        store.set_status(video_id, "checked")
    return report


# ---------------------------------------------------------------------------
# review bundles


def export_review(
    config: Config, store: Store, video_id: str, out_dir: str | Path
) -> Path:
    """Write a self-contained review bundle for human inspection.

    The bundle holds the manifest, the quality report, the instance
    registry, every frame image, and every annotation file.
    """

    manifest = store.manifest(video_id)
    if manifest.status not in ("checked", "finalized"):
        raise StoreError(
            f"{video_id} is {manifest.status}; review needs a checked video"
        )
    bundle = Path(out_dir)
    (bundle / "frames").mkdir(parents=True, exist_ok=True)
    (bundle / "annotations").mkdir(parents=True, exist_ok=True)
    vdir = store.video_dir(video_id)
    shutil.copyfile(vdir / "manifest", bundle / "manifest")
    shutil.copyfile(vdir / "report", bundle / "report")
    shutil.copyfile(vdir / "instances", bundle / "instances")
    for frame_index in range(manifest.frame_count):
        shutil.copyfile(
            vdir / "frames" / f"{frame_index:06d}.ann",
            bundle / "annotations" / f"{frame_index:06d}.ann",
        )
        image = Path(config.frames_root) / video_id / f"{frame_index:06d}.ppm"
        shutil.copyfile(image, bundle / "frames" / f"{frame_index:06d}.ppm")
    return bundle


def import_revisions(
    config: Config, store: Store, video_id: str, source: str | Path
) -> int:
    """Apply reviewer edits from a bundle (or bare log) and finalize.

    Records already in the store must match byte-for-byte (the import is
    idempotent); a record that disagrees at its sequence number is a
    conflict.  Returns how many new records were applied.
    """

    path = Path(source)
    if path.is_dir():
        path = path / "revisions.log"
    with store.lock(video_id):
        manifest = store.manifest(video_id)
        if manifest.status not in ("checked", "finalized"):
            raise StoreError(
                f"{video_id} is {manifest.status}; import needs a checked video"
            )
        applied = 0
        for record in _split_revision_records(path):
            rev = parse_revision(record)
            existing = store.revision_text(video_id, rev.seq)
            if existing is not None:
                if existing != serialize_revision(rev):
                    raise StoreError(
                        f"revision {rev.seq} conflicts with the stored record"
                    )
                continue
            store.append_revision(video_id, rev)
            applied += 1
        if manifest.status != "finalized":
            store.set_status(video_id, "finalized")
        return applied


def _split_revision_records(path: Path) -> list[str]:
    if not path.is_file():
        return []
    records: list[str] = []
    block: list[str] = []
    for line in path.read_text(encoding="ascii").splitlines():
        block.append(line)
        if line == "end rev":
            records.append("\n".join(block) + "\n")
            block = []
    if block:
        raise StoreError(f"{path} ends mid-record")
    return records
