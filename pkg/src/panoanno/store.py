"""Durable, human-readable annotation store.

One directory per video holds plain-text files: a manifest, an instance
registry, one annotation file per frame, an append-only revision log,
the pipeline's frame-by-frame run log, provenance notes, and the review
report.  Every file is written atomically (temp file, fsync, rename) so
a crash never leaves a half-written file, and the revision log carries
an end marker per record so a torn append is detectable and repairable.

Edits made after the automatic pass live only in the revision log; the
files on disk are caches of "refined snapshot + revisions".  ``replay``
rebuilds them from the snapshot, which both audits the log and repairs
any interrupted apply.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ProtocolError, RevisionError, StoreError
from .mask import GridDims, Mask, difference, union
from .protocol import _Lines, _read_mask_block, _write_mask_block, valid_id

__all__ = [
    "Entry",
    "IssueRecord",
    "Manifest",
    "PROVENANCES",
    "Report",
    "Revision",
    "STATUSES",
    "Store",
    "parse_revision",
    "serialize_revision",
]

STATUSES = ("ingested", "annotating", "annotated", "checked", "finalized")

PROVENANCES = (
    "sdr",
    "tracked",
    "border-merged",
    "retrieved",
    "new-object",
    "revised",
)

_REVISION_OPS = (
    "replace_mask",
    "relabel",
    "delete_instance",
    "add_instance",
    "merge_instances",
    "edit_mask",
)

_LABEL_RE = re.compile(r"^[\x20-\x7e]+$")  # printable ascii, no newline


def _check_label(label: str) -> str:
    if not _LABEL_RE.match(label) or label != label.strip():
        raise StoreError(f"bad label {label!r}")
    return label


def _check_instance_id(value: int) -> int:
    if value < 1:
        raise StoreError(f"instance id {value} must be positive")
    return value


@dataclass(frozen=True)
class Manifest:
    video_id: str
    dims: GridDims
    frame_count: int
    fps: float
    image_format: str
    config_digest: str
    status: str

    def __post_init__(self) -> None:
        if not valid_id(self.video_id):
            raise StoreError(f"bad video id {self.video_id!r}")
        if self.frame_count < 1:
            raise StoreError("a video needs at least one frame")
        if not self.fps > 0:
            raise StoreError("fps must be positive")
        if self.status not in STATUSES:
            raise StoreError(f"unknown status {self.status!r}")
        if not self.dims.wrap_horizontal:
            raise StoreError("stored videos are horizontally wrapped")


@dataclass(frozen=True)
class Entry:
    """One instance's mask in one frame."""

    instance_id: int
    label: str
    provenance: str
    mask: Mask

    def __post_init__(self) -> None:
        _check_instance_id(self.instance_id)
        _check_label(self.label)
        if self.provenance not in PROVENANCES:
            raise StoreError(f"unknown provenance {self.provenance!r}")
        if self.mask.is_empty():
            raise StoreError("frame entries never hold empty masks")


@dataclass(frozen=True)
class IssueRecord:
    frame_index: int
    instance_id: int
    kind: str
    comment: str
    status: str = "open"

    def __post_init__(self) -> None:
        if self.status not in ("open", "resolved"):
            raise StoreError(f"unknown issue status {self.status!r}")
        if "\n" in self.comment:
            raise StoreError("issue comments are single-line")


@dataclass(frozen=True)
class Report:
    score: float
    issues: tuple[IssueRecord, ...]


@dataclass(frozen=True)
class Revision:
    """One edit record.  ``masks`` is op-specific:

    - ``replace_mask``: the new mask (empty deletes the entry)
    - ``add_instance``: the new mask (non-empty)
    - ``edit_mask``: pixels to add, then pixels to remove
    - other ops carry no mask
    """

    seq: int
    op: str
    frame_index: int | None = None
    instance_id: int | None = None
    label: str | None = None
    provenance: str | None = None
    keep_id: int | None = None
    drop_id: int | None = None
    masks: tuple[Mask, ...] = ()

    def __post_init__(self) -> None:
        if self.seq < 1:
            raise RevisionError("revision sequence numbers start at 1")
        if self.op not in _REVISION_OPS:
            raise RevisionError(f"unknown revision op {self.op!r}")
        need = {
            "replace_mask": (True, True, False, 1),
            "relabel": (False, True, True, 0),
            "delete_instance": (False, True, False, 0),
            "add_instance": (True, True, True, 1),
            "merge_instances": (False, False, False, 0),
            "edit_mask": (True, True, False, 2),
        }[self.op]
        want_frame, want_instance, want_label, n_masks = need
        if (self.frame_index is not None) != want_frame:
            raise RevisionError(f"{self.op}: frame_index mismatch")
        if (self.instance_id is not None) != want_instance:
            raise RevisionError(f"{self.op}: instance_id mismatch")
        if (self.label is not None) != want_label:
            raise RevisionError(f"{self.op}: label mismatch")
        if len(self.masks) != n_masks:
            raise RevisionError(f"{self.op}: expected {n_masks} masks")
        if self.op == "merge_instances":
            if self.keep_id is None or self.drop_id is None:
                raise RevisionError("merge_instances needs keep and drop ids")
            if self.keep_id == self.drop_id:
                raise RevisionError("cannot merge an instance with itself")
        elif self.keep_id is not None or self.drop_id is not None:
            raise RevisionError(f"{self.op} takes no keep/drop ids")
        if self.op == "add_instance":
            if self.provenance not in PROVENANCES:
                raise RevisionError(f"unknown provenance {self.provenance!r}")
            if self.masks[0].is_empty():
                raise RevisionError("add_instance needs a non-empty mask")
        elif self.provenance is not None:
            raise RevisionError(f"{self.op} takes no provenance")
        if self.label is not None:
            _check_label(self.label)
        for value in (self.instance_id, self.keep_id, self.drop_id):
            if value is not None:
                _check_instance_id(value)


def serialize_revision(rev: Revision) -> str:
    head = f"rev {rev.seq} {rev.op}"
    if rev.op == "replace_mask" or rev.op == "edit_mask":
        head += f" frame={rev.frame_index} instance={rev.instance_id}"
    elif rev.op == "relabel":
        head += f" instance={rev.instance_id} label={rev.label}"
    elif rev.op == "delete_instance":
        head += f" instance={rev.instance_id}"
    elif rev.op == "add_instance":
        head += (
            f" frame={rev.frame_index} instance={rev.instance_id}"
            f" provenance={rev.provenance} label={rev.label}"
        )
    elif rev.op == "merge_instances":
        head += f" keep={rev.keep_id} drop={rev.drop_id}"
    out = [head]
    for mask in rev.masks:
        _write_mask_block(out, mask)
    out.append("end rev")
    return "\n".join(out) + "\n"


_REV_HEAD_RE = re.compile(r"^rev ([1-9][0-9]*) ([a-z_]+)(?: (.*))?$")
_KV_RE = re.compile(r"(\w+)=")


def _head_fields(rest: str, keys: Sequence[str]) -> dict[str, str]:
    """Split ``k1=v1 k2=v2 ... label=trailing text`` in declared order."""

    out: dict[str, str] = {}
    remaining = rest
    for i, key in enumerate(keys):
        prefix = f"{key}="
        if not remaining.startswith(prefix):
            raise RevisionError(f"expected {key}= in revision header {rest!r}")
        remaining = remaining[len(prefix) :]
        if i + 1 < len(keys):
            nxt = f" {keys[i + 1]}="
            cut = remaining.find(nxt)
            if cut < 0:
                raise RevisionError(f"expected {keys[i + 1]}= in header {rest!r}")
            out[key] = remaining[:cut]
            remaining = remaining[cut + 1 :]
        else:
            out[key] = remaining
    return out


def _parse_int(token: str, what: str) -> int:
    if not token.isdigit():
        raise RevisionError(f"bad {what} {token!r}")
    return int(token)


def parse_revision(text: str) -> Revision:
    try:
        return _parse_revision_lines(text)
    except ProtocolError as exc:
        raise RevisionError(f"malformed revision record: {exc}") from exc


def _parse_revision_lines(text: str) -> Revision:
    cur = _Lines(text)
    match = _REV_HEAD_RE.match(cur.take())
    if not match:
        raise RevisionError("malformed revision header")
    seq = int(match.group(1))
    op = match.group(2)
    rest = match.group(3) or ""
    frame_index = instance_id = keep_id = drop_id = None
    label = provenance = None
    masks: list[Mask] = []
    if op in ("replace_mask", "edit_mask"):
        fields = _head_fields(rest, ("frame", "instance"))
        frame_index = _parse_int(fields["frame"], "frame index")
        instance_id = _parse_int(fields["instance"], "instance id")
        masks.append(_read_mask_block(cur))
        if op == "edit_mask":
            masks.append(_read_mask_block(cur))
    elif op == "relabel":
        fields = _head_fields(rest, ("instance", "label"))
        instance_id = _parse_int(fields["instance"], "instance id")
        label = fields["label"]
    elif op == "delete_instance":
        fields = _head_fields(rest, ("instance",))
        instance_id = _parse_int(fields["instance"], "instance id")
    elif op == "add_instance":
        fields = _head_fields(rest, ("frame", "instance", "provenance", "label"))
        frame_index = _parse_int(fields["frame"], "frame index")
        instance_id = _parse_int(fields["instance"], "instance id")
        provenance = fields["provenance"]
        label = fields["label"]
        masks.append(_read_mask_block(cur))
    elif op == "merge_instances":
        fields = _head_fields(rest, ("keep", "drop"))
        keep_id = _parse_int(fields["keep"], "keep id")
        drop_id = _parse_int(fields["drop"], "drop id")
    else:
        raise RevisionError(f"unknown revision op {op!r}")
    if cur.take() != "end rev":
        raise RevisionError("revision record missing 'end rev'")
    if not cur.at_end():
        raise RevisionError("trailing data after revision record")
    return Revision(
        seq=seq,
        op=op,
        frame_index=frame_index,
        instance_id=instance_id,
        label=label,
        provenance=provenance,
        keep_id=keep_id,
        drop_id=drop_id,
        masks=tuple(masks),
    )


# ---------------------------------------------------------------------------
# Atomic file helpers


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.parent / f".tmp.{path.name}"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _append_line(path: Path, line: str) -> None:
    if "\n" in line:
        raise StoreError("log lines are single-line")
    with open(path, "a", encoding="ascii") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _dims_text(dims: GridDims) -> str:
    return f"{dims.width} {dims.height} wrap{1 if dims.wrap_horizontal else 0}"


def _parse_dims_text(text: str, where: str) -> GridDims:
    match = re.match(r"^([1-9][0-9]*) ([1-9][0-9]*) wrap([01])$", text)
    if not match:
        raise StoreError(f"{where}: bad dims {text!r}")
    return GridDims(int(match.group(1)), int(match.group(2)), match.group(3) == "1")


# ---------------------------------------------------------------------------
# The store


class Store:
    """Filesystem root holding one directory per video."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- paths -------------------------------------------------------------

    def video_dir(self, video_id: str) -> Path:
        if not valid_id(video_id):
            raise StoreError(f"bad video id {video_id!r}")
        return self.root / video_id

    def _frame_path(self, video_id: str, frame_index: int) -> Path:
        return self.video_dir(video_id) / "frames" / f"{frame_index:06d}.ann"

    def video_ids(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir() if (p / "manifest").is_file()
        )

    # -- locking -----------------------------------------------------------

    def lock(self, video_id: str) -> "_Lock":
        return _Lock(self.video_dir(video_id) / "lock")

    # -- manifest ----------------------------------------------------------

    def create_video(self, manifest: Manifest) -> None:
        vdir = self.video_dir(manifest.video_id)
        if (vdir / "manifest").exists():
            raise StoreError(f"video {manifest.video_id} already exists")
        (vdir / "frames").mkdir(parents=True, exist_ok=True)
        (vdir / "provenance").mkdir(exist_ok=True)
        self._write_manifest(manifest)
        self.write_instances(manifest.video_id, {})

    def _write_manifest(self, manifest: Manifest) -> None:
        text = (
            "manifest v1\n"
            f"video {manifest.video_id}\n"
            f"dims {_dims_text(manifest.dims)}\n"
            f"frames {manifest.frame_count}\n"
            f"fps {manifest.fps!r}\n"
            f"format {manifest.image_format}\n"
            f"config {manifest.config_digest}\n"
            f"status {manifest.status}\n"
        )
        _atomic_write(self.video_dir(manifest.video_id) / "manifest", text)

    def manifest(self, video_id: str) -> Manifest:
        path = self.video_dir(video_id) / "manifest"
        try:
            cur = _Lines(path.read_text(encoding="ascii"))
        except OSError as exc:
            raise StoreError(f"no manifest for video {video_id}: {exc}") from exc
        try:
            if cur.take() != "manifest v1":
                raise StoreError(f"{path}: bad header")
            fields = {}
            for key in ("video", "dims", "frames", "fps", "format", "config", "status"):
                line = cur.take()
                if not line.startswith(key + " "):
                    raise StoreError(f"{path}: expected {key!r} line, got {line!r}")
                fields[key] = line[len(key) + 1 :]
            if not cur.at_end():
                raise StoreError(f"{path}: trailing data")
        except StoreError:
            raise
        except Exception as exc:
            raise StoreError(f"{path}: {exc}") from exc
        if fields["video"] != video_id:
            raise StoreError(f"{path}: manifest names video {fields['video']!r}")
        return Manifest(
            video_id=video_id,
            dims=_parse_dims_text(fields["dims"], str(path)),
            frame_count=_parse_int_store(fields["frames"], "frame count"),
            fps=_parse_float_store(fields["fps"], "fps"),
            image_format=fields["format"],
            config_digest=fields["config"],
            status=fields["status"],
        )

    def set_status(self, video_id: str, status: str) -> None:
        self._write_manifest(replace(self.manifest(video_id), status=status))

    # -- instance registry ---------------------------------------------------

    def write_instances(self, video_id: str, labels: dict[int, str]) -> None:
        lines = ["instances v1", f"count {len(labels)}"]
        for instance_id in sorted(labels):
            lines.append(f"instance {instance_id} {_check_label(labels[instance_id])}")
        _atomic_write(self.video_dir(video_id) / "instances", "\n".join(lines) + "\n")

    def instances(self, video_id: str) -> dict[int, str]:
        path = self.video_dir(video_id) / "instances"
        try:
            text = path.read_text(encoding="ascii")
        except OSError as exc:
            raise StoreError(f"no instance registry for {video_id}: {exc}") from exc
        try:
            cur = _Lines(text)
            if cur.take() != "instances v1":
                raise StoreError(f"{path}: bad header")
            count_line = cur.take()
            if not count_line.startswith("count "):
                raise StoreError(f"{path}: missing count")
            count = _parse_int_store(count_line[6:], "instance count", minimum=0)
            labels: dict[int, str] = {}
            previous = 0
            for _ in range(count):
                line = cur.take()
                match = re.match(r"^instance ([1-9][0-9]*) (.+)$", line)
                if not match:
                    raise StoreError(f"{path}: bad instance line {line!r}")
                instance_id = int(match.group(1))
                if instance_id <= previous:
                    raise StoreError(f"{path}: instance ids out of order")
                previous = instance_id
                labels[instance_id] = match.group(2)
            if not cur.at_end():
                raise StoreError(f"{path}: trailing data")
        except ProtocolError as exc:
            raise StoreError(f"{path}: {exc}") from exc
        return labels

    # -- frame files ---------------------------------------------------------

    def write_frame(
        self, video_id: str, frame_index: int, entries: Sequence[Entry]
    ) -> None:
        manifest = self.manifest(video_id)
        if not 0 <= frame_index < manifest.frame_count:
            raise StoreError(
                f"frame {frame_index} outside 0..{manifest.frame_count - 1}"
            )
        ordered = sorted(entries, key=lambda e: e.instance_id)
        seen: set[int] = set()
        out = [
            "ann v1",
            f"frame {frame_index}",
            f"dims {_dims_text(manifest.dims)}",
            f"entries {len(ordered)}",
        ]
        for entry in ordered:
            if entry.instance_id in seen:
                raise StoreError(
                    f"duplicate instance {entry.instance_id} in frame {frame_index}"
                )
            seen.add(entry.instance_id)
            if entry.mask.dims != manifest.dims:
                raise StoreError("entry mask dims do not match the video")
            out.append(f"entry {entry.instance_id} {entry.provenance}")
            out.append(f"label {entry.label}")
            _write_mask_block(out, entry.mask)
            out.append("end entry")
        out.append("end")
        _atomic_write(self._frame_path(video_id, frame_index), "\n".join(out) + "\n")

    def read_frame(self, video_id: str, frame_index: int) -> list[Entry]:
        path = self._frame_path(video_id, frame_index)
        try:
            text = path.read_text(encoding="ascii")
        except OSError as exc:
            raise StoreError(f"no annotation for frame {frame_index}: {exc}") from exc
        try:
            return self._parse_frame(path, text, frame_index)
        except ProtocolError as exc:
            raise StoreError(f"{path}: {exc}") from exc

    def _parse_frame(self, path: Path, text: str, frame_index: int) -> list[Entry]:
        cur = _Lines(text)
        if cur.take() != "ann v1":
            raise StoreError(f"{path}: bad header")
        frame_line = cur.take()
        if frame_line != f"frame {frame_index}":
            raise StoreError(f"{path}: frame line {frame_line!r} mismatches file name")
        dims_line = cur.take()
        if not dims_line.startswith("dims "):
            raise StoreError(f"{path}: missing dims")
        dims = _parse_dims_text(dims_line[5:], str(path))
        entries_line = cur.take()
        if not entries_line.startswith("entries "):
            raise StoreError(f"{path}: missing entries count")
        count = _parse_int_store(entries_line[8:], "entry count", minimum=0)
        entries: list[Entry] = []
        previous = 0
        for _ in range(count):
            head = cur.take()
            match = re.match(r"^entry ([1-9][0-9]*) ([a-z-]+)$", head)
            if not match:
                raise StoreError(f"{path}: bad entry line {head!r}")
            instance_id = int(match.group(1))
            if instance_id <= previous:
                raise StoreError(f"{path}: entries out of order")
            previous = instance_id
            label_line = cur.take()
            if not label_line.startswith("label "):
                raise StoreError(f"{path}: missing label for instance {instance_id}")
            mask = _read_mask_block(cur)
            if mask.dims != dims:
                raise StoreError(f"{path}: mask dims mismatch")
            if cur.take() != "end entry":
                raise StoreError(f"{path}: missing 'end entry'")
            entries.append(
                Entry(
                    instance_id=instance_id,
                    label=label_line[6:],
                    provenance=match.group(2),
                    mask=mask,
                )
            )
        if cur.take() != "end":
            raise StoreError(f"{path}: missing final 'end'")
        if not cur.at_end():
            raise StoreError(f"{path}: trailing data")
        return entries

    def frame_indices(self, video_id: str) -> list[int]:
        frames_dir = self.video_dir(video_id) / "frames"
        out = []
        if frames_dir.is_dir():
            for p in sorted(frames_dir.iterdir()):
                match = re.match(r"^(\d{6})\.ann$", p.name)
                if match:
                    out.append(int(match.group(1)))
        return out

    # -- logs ----------------------------------------------------------------

    def append_run_line(self, video_id: str, line: str) -> None:
        _append_line(self.video_dir(video_id) / "run.log", line)

    def run_lines(self, video_id: str) -> list[str]:
        path = self.video_dir(video_id) / "run.log"
        if not path.exists():
            return []
        return path.read_text(encoding="ascii").splitlines()

    def append_provenance(self, video_id: str, lines: Iterable[str]) -> None:
        path = self.video_dir(video_id) / "provenance" / "records.log"
        for line in lines:
            _append_line(path, line)

    def provenance_lines(self, video_id: str) -> list[str]:
        path = self.video_dir(video_id) / "provenance" / "records.log"
        if not path.exists():
            return []
        return path.read_text(encoding="ascii").splitlines()

    def append_escalations(self, video_id: str, lines: Iterable[str]) -> None:
        path = self.video_dir(video_id) / "provenance" / "escalations.log"
        for line in lines:
            _append_line(path, line)

    def escalation_lines(self, video_id: str) -> list[str]:
        path = self.video_dir(video_id) / "provenance" / "escalations.log"
        if not path.exists():
            return []
        return path.read_text(encoding="ascii").splitlines()

    # -- report ---------------------------------------------------------------

    def write_report(self, video_id: str, report: Report) -> None:
        lines = ["report v1", f"score {report.score!r}", f"issues {len(report.issues)}"]
        for issue in report.issues:
            lines.append(
                f"issue frame={issue.frame_index} instance={issue.instance_id} "
                f"kind={issue.kind} status={issue.status} comment={issue.comment}"
            )
        _atomic_write(self.video_dir(video_id) / "report", "\n".join(lines) + "\n")

    def read_report(self, video_id: str) -> Report:
        path = self.video_dir(video_id) / "report"
        try:
            text = path.read_text(encoding="ascii")
        except OSError as exc:
            raise StoreError(f"no report for {video_id}: {exc}") from exc
        try:
            cur = _Lines(text)
            if cur.take() != "report v1":
                raise StoreError(f"{path}: bad header")
            score_line = cur.take()
            if not score_line.startswith("score "):
                raise StoreError(f"{path}: missing score")
            score = _parse_float_store(score_line[6:], "score")
            count_line = cur.take()
            if not count_line.startswith("issues "):
                raise StoreError(f"{path}: missing issue count")
            count = _parse_int_store(count_line[7:], "issue count", minimum=0)
            issues = []
            pattern = re.compile(
                r"^issue frame=(\d+) instance=(\d+) kind=(\w+) "
                r"status=(open|resolved) comment=(.*)$"
            )
            for _ in range(count):
                match = pattern.match(cur.take())
                if not match:
                    raise StoreError(f"{path}: bad issue line")
                issues.append(
                    IssueRecord(
                        frame_index=int(match.group(1)),
                        instance_id=int(match.group(2)),
                        kind=match.group(3),
                        comment=match.group(5),
                        status=match.group(4),
                    )
                )
            if not cur.at_end():
                raise StoreError(f"{path}: trailing data")
        except ProtocolError as exc:
            raise StoreError(f"{path}: {exc}") from exc
        return Report(score=score, issues=tuple(issues))

    def resolve_issue(self, video_id: str, index: int) -> Report:
        report = self.read_report(video_id)
        if not 0 <= index < len(report.issues):
            raise StoreError(f"no issue {index} in report")
        issues = list(report.issues)
        issues[index] = replace(issues[index], status="resolved")
        updated = Report(score=report.score, issues=tuple(issues))
        self.write_report(video_id, updated)
        return updated

    # -- revisions -------------------------------------------------------------

    def revisions(self, video_id: str) -> list[Revision]:
        return [rev for rev, _text in self._revision_records(video_id)]

    def _revision_records(self, video_id: str) -> list[tuple[Revision, str]]:
        path = self.video_dir(video_id) / "revisions.log"
        if not path.exists():
            return []
        text = path.read_text(encoding="ascii")
        records: list[tuple[Revision, str]] = []
        block: list[str] = []
        for line in text.splitlines():
            block.append(line)
            if line == "end rev":
                record = "\n".join(block) + "\n"
                records.append((parse_revision(record), record))
                block = []
        if block:
            raise RevisionError(
                f"revision log for {video_id} ends mid-record "
                f"(torn append of sequence after {len(records)} records)"
            )
        for i, (rev, _t) in enumerate(records, start=1):
            if rev.seq != i:
                raise RevisionError(
                    f"revision log for {video_id} has sequence {rev.seq} "
                    f"at position {i}"
                )
        return records

    def repair_revision_log(self, video_id: str) -> int:
        """Drop a torn trailing record, returning how many lines were cut."""

        path = self.video_dir(video_id) / "revisions.log"
        if not path.exists():
            return 0
        lines = path.read_text(encoding="ascii").splitlines()
        keep = len(lines)
        while keep > 0 and lines[keep - 1] != "end rev":
            keep -= 1
        if keep == len(lines):
            return 0
        _atomic_write(path, "".join(line + "\n" for line in lines[:keep]))
        return len(lines) - keep

    def append_revision(self, video_id: str, rev: Revision) -> None:
        """Validate, apply to the annotation files, then log the record."""

        existing = self._revision_records(video_id)
        if rev.seq != len(existing) + 1:
            raise RevisionError(
                f"revision sequence {rev.seq} does not follow {len(existing)}"
            )
        self._apply_revision(video_id, rev)
        path = self.video_dir(video_id) / "revisions.log"
        with open(path, "a", encoding="ascii") as fh:
            fh.write(serialize_revision(rev))
            fh.flush()
            os.fsync(fh.fileno())

    def revision_text(self, video_id: str, seq: int) -> str | None:
        for rev, text in self._revision_records(video_id):
            if rev.seq == seq:
                return text
        return None

    def _require_registered(self, labels: dict[int, str], instance_id: int) -> None:
        if instance_id not in labels:
            raise RevisionError(f"instance {instance_id} is not registered")

    def _apply_revision(self, video_id: str, rev: Revision) -> None:
        manifest = self.manifest(video_id)
        labels = self.instances(video_id)
        for mask in rev.masks:
            if mask.dims != manifest.dims:
                raise RevisionError("revision mask dims do not match the video")
        if rev.frame_index is not None and not (
            0 <= rev.frame_index < manifest.frame_count
        ):
            raise RevisionError(f"frame {rev.frame_index} outside the video")

        if rev.op in ("replace_mask", "edit_mask"):
            self._require_registered(labels, rev.instance_id)
            entries = self.read_frame(video_id, rev.frame_index)
            here = [e for e in entries if e.instance_id == rev.instance_id]
            if not here:
                raise RevisionError(
                    f"instance {rev.instance_id} has no entry in frame "
                    f"{rev.frame_index}"
                )
            entry = here[0]
            if rev.op == "replace_mask":
                new_mask = rev.masks[0]
            else:
                new_mask = difference(union(entry.mask, rev.masks[0]), rev.masks[1])
            rest = [e for e in entries if e.instance_id != rev.instance_id]
            if new_mask.is_empty():
                self.write_frame(video_id, rev.frame_index, rest)
            else:
                rest.append(
                    Entry(entry.instance_id, entry.label, "revised", new_mask)
                )
                self.write_frame(video_id, rev.frame_index, rest)
            self._drop_if_absent(video_id, labels, rev.instance_id)

        elif rev.op == "relabel":
            self._require_registered(labels, rev.instance_id)
            labels[rev.instance_id] = rev.label
            self.write_instances(video_id, labels)
            for frame_index in self.frame_indices(video_id):
                entries = self.read_frame(video_id, frame_index)
                if any(e.instance_id == rev.instance_id for e in entries):
                    updated = [
                        replace(e, label=rev.label)
                        if e.instance_id == rev.instance_id
                        else e
                        for e in entries
                    ]
                    self.write_frame(video_id, frame_index, updated)

        elif rev.op == "delete_instance":
            self._require_registered(labels, rev.instance_id)
            for frame_index in self.frame_indices(video_id):
                entries = self.read_frame(video_id, frame_index)
                kept = [e for e in entries if e.instance_id != rev.instance_id]
                if len(kept) != len(entries):
                    self.write_frame(video_id, frame_index, kept)
            del labels[rev.instance_id]
            self.write_instances(video_id, labels)

        elif rev.op == "add_instance":
            if rev.instance_id in labels and labels[rev.instance_id] != rev.label:
                raise RevisionError(
                    f"instance {rev.instance_id} is registered as "
                    f"{labels[rev.instance_id]!r}, not {rev.label!r}"
                )
            entries = self.read_frame(video_id, rev.frame_index)
            if any(e.instance_id == rev.instance_id for e in entries):
                raise RevisionError(
                    f"instance {rev.instance_id} already has an entry in frame "
                    f"{rev.frame_index}"
                )
            entries.append(
                Entry(rev.instance_id, rev.label, rev.provenance, rev.masks[0])
            )
            self.write_frame(video_id, rev.frame_index, entries)
            if rev.instance_id not in labels:
                labels[rev.instance_id] = rev.label
                self.write_instances(video_id, labels)

        elif rev.op == "merge_instances":
            self._require_registered(labels, rev.keep_id)
            self._require_registered(labels, rev.drop_id)
            for frame_index in self.frame_indices(video_id):
                entries = self.read_frame(video_id, frame_index)
                keep = [e for e in entries if e.instance_id == rev.keep_id]
                drop = [e for e in entries if e.instance_id == rev.drop_id]
                if not drop:
                    continue
                rest = [
                    e
                    for e in entries
                    if e.instance_id not in (rev.keep_id, rev.drop_id)
                ]
                if keep:
                    merged = Entry(
                        rev.keep_id,
                        labels[rev.keep_id],
                        keep[0].provenance,
                        union(keep[0].mask, drop[0].mask),
                    )
                else:
                    merged = Entry(
                        rev.keep_id,
                        labels[rev.keep_id],
                        drop[0].provenance,
                        drop[0].mask,
                    )
                rest.append(merged)
                self.write_frame(video_id, frame_index, rest)
            del labels[rev.drop_id]
            self.write_instances(video_id, labels)

    def _drop_if_absent(
        self, video_id: str, labels: dict[int, str], instance_id: int
    ) -> None:
        """Unregister an instance once no frame holds it any more."""

        for frame_index in self.frame_indices(video_id):
            for entry in self.read_frame(video_id, frame_index):
                if entry.instance_id == instance_id:
                    return
        if instance_id in labels:
            del labels[instance_id]
            self.write_instances(video_id, labels)

    # -- snapshot and replay ---------------------------------------------------

    def snapshot_refined(self, video_id: str) -> None:
        """Freeze the current annotation as the pre-review baseline."""

        vdir = self.video_dir(video_id)
        snap = vdir / "refined"
        if snap.exists():
            shutil.rmtree(snap)
        (snap / "frames").mkdir(parents=True)
        shutil.copy2(vdir / "instances", snap / "instances")
        for frame_index in self.frame_indices(video_id):
            shutil.copy2(
                self._frame_path(video_id, frame_index),
                snap / "frames" / f"{frame_index:06d}.ann",
            )

    def has_snapshot(self, video_id: str) -> bool:
        return (self.video_dir(video_id) / "refined" / "instances").is_file()

    def replay(self, video_id: str) -> int:
        """Rebuild annotation files from the snapshot plus the revision log.

        Returns the number of revisions applied.  This both audits the
        log and repairs files left behind by an interrupted apply.
        """

        vdir = self.video_dir(video_id)
        snap = vdir / "refined"
        if not self.has_snapshot(video_id):
            raise StoreError(f"video {video_id} has no refined snapshot")
        records = self._revision_records(video_id)
        shutil.copy2(snap / "instances", vdir / "instances")
        frames_dir = vdir / "frames"
        for p in frames_dir.glob("*.ann"):
            p.unlink()
        for p in sorted((snap / "frames").glob("*.ann")):
            shutil.copy2(p, frames_dir / p.name)
        for rev, _text in records:
            self._apply_revision(video_id, rev)
        return len(records)

    # -- integrity -------------------------------------------------------------

    _DIGEST_ORDER = ("manifest", "instances")

    def digest(self, video_id: str) -> str:
        """Content hash over the canonical files, in a fixed order."""

        vdir = self.video_dir(video_id)
        parts: list[str] = ["manifest", "instances"]
        parts.extend(
            f"frames/{frame_index:06d}.ann"
            for frame_index in self.frame_indices(video_id)
        )
        parts.extend(["run.log", "revisions.log"])
        h = hashlib.sha256()
        for rel in parts:
            path = vdir / rel
            if not path.is_file():
                continue
            h.update(rel.encode("ascii"))
            h.update(b"\n")
            h.update(path.read_bytes())
            h.update(b"\n")
        return h.hexdigest()

    def validate(self, video_id: str) -> list[str]:
        """Cross-file consistency problems, empty when the video is sound."""

        problems: list[str] = []
        try:
            manifest = self.manifest(video_id)
        except StoreError as exc:
            return [str(exc)]
        try:
            labels = self.instances(video_id)
        except StoreError as exc:
            return [str(exc)]
        seen: set[int] = set()
        indices = self.frame_indices(video_id)
        if indices != list(range(len(indices))):
            problems.append(f"frame files are not contiguous from zero: {indices}")
        for frame_index in indices:
            try:
                entries = self.read_frame(video_id, frame_index)
            except StoreError as exc:
                problems.append(str(exc))
                continue
            for entry in entries:
                seen.add(entry.instance_id)
                if entry.instance_id not in labels:
                    problems.append(
                        f"frame {frame_index}: instance {entry.instance_id} "
                        "is not registered"
                    )
                elif labels[entry.instance_id] != entry.label:
                    problems.append(
                        f"frame {frame_index}: instance {entry.instance_id} "
                        f"labeled {entry.label!r}, registry says "
                        f"{labels[entry.instance_id]!r}"
                    )
                if entry.mask.dims != manifest.dims:
                    problems.append(
                        f"frame {frame_index}: instance {entry.instance_id} "
                        "mask dims mismatch"
                    )
        for instance_id in labels:
            if instance_id not in seen:
                problems.append(f"instance {instance_id} appears in no frame")
        try:
            self._revision_records(video_id)
        except RevisionError as exc:
            problems.append(str(exc))
        return problems


def _parse_int_store(token: str, what: str, minimum: int = 1) -> int:
    if not token.isdigit():
        raise StoreError(f"bad {what} {token!r}")
    value = int(token)
    if value < minimum:
        raise StoreError(f"bad {what} {token!r}")
    return value


def _parse_float_store(token: str, what: str) -> float:
    try:
        return float(token)
    except ValueError as exc:
        raise StoreError(f"bad {what} {token!r}") from exc


class _Lock:
    """Exclusive advisory lock via an O_EXCL lock file.

    The file names the owning process; a lock whose owner died (a killed
    run, a machine reset) is stale and is broken on the next acquire so
    a crash never wedges its video.
    """

    def __init__(self, path: Path) -> None:
        self.path = path
        self._fd: int | None = None

    def __enter__(self) -> "_Lock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _attempt in range(2):
            try:
                self._fd = os.open(
                    self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY
                )
                break
            except FileExistsError:
                if not self._break_if_stale():
                    raise StoreError(
                        f"video is locked by another process "
                        f"({self.path} exists)"
                    ) from None
        else:
            raise StoreError(f"could not acquire lock {self.path}")
        os.write(self._fd, f"{os.getpid()}\n".encode("ascii"))
        return self

    def _break_if_stale(self) -> bool:
        try:
            owner = int(self.path.read_text(encoding="ascii").split()[0])
        except (OSError, ValueError, IndexError):
            return False
        if owner == os.getpid():
            return False
        try:
            os.kill(owner, 0)
        except ProcessLookupError:
            pass  # the owner is gone; the lock is stale
        except PermissionError:
            return False  # alive under another user
        else:
            return False  # alive
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return True

    def __exit__(self, *exc_info) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
