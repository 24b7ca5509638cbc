"""Wire protocol for segmentation and tracking backends.

Plain-text, line-oriented messages; the canonical grammar lives in
docs/protocol.md and the store/service reuse the same mask block format.
Every message starts with a magic+type line and ends with an `end` line;
'\\n' endings, one trailing newline, byte-deterministic serialization
(serialize(parse(text)) == text for every valid message).

Masks travel as a `mask <nruns>` introducer followed verbatim by the mask
text serialization (the `dims W H wrap{0|1}` header plus one `row start
length` line per run).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import MaskFormatError, ProtocolError
from .mask import GridDims, Mask, mask_from_text, mask_to_text

MAGIC = "panoanno.v1"

_ID_RE = re.compile(r"^[A-Za-z0-9._-]{1,128}$")
_INT_RE = re.compile(r"^(0|-?[1-9][0-9]*)$")

__all__ = [
    "MAGIC",
    "FrameRef",
    "EntityProposal",
    "PanopticProposal",
    "TrackRequest",
    "message_type",
    "serialize_entity_request",
    "serialize_panoptic_request",
    "parse_segment_request",
    "serialize_entity_response",
    "parse_entity_response",
    "serialize_panoptic_response",
    "parse_panoptic_response",
    "serialize_track_request",
    "parse_track_request",
    "serialize_track_response",
    "parse_track_response",
    "serialize_complete_request",
    "parse_complete_request",
    "serialize_complete_response",
    "parse_complete_response",
    "serialize_error",
    "parse_error",
    "valid_id",
]


# ---------------------------------------------------------------------------
# request / proposal types


@dataclass(frozen=True)
class FrameRef:
    """One frame of one video, as a backend should view it.

    canvas is the view grid the backend must answer on: either the source
    grid itself or a symmetric wrap-padded flat grid.  shift_cols rotates
    the view (view column c shows source column (c + shift_cols) mod W);
    crop restricts the answer to a linear column window of the view.  Wrap
    windows are never expressed here; a seam plan upstream turns them into
    a shift plus a linear crop.
    """

    video_id: str
    frame_index: int
    canvas: GridDims
    shift_cols: int = 0
    crop: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not _ID_RE.match(self.video_id):
            raise ProtocolError(f"bad video id {self.video_id!r}")
        if self.frame_index < 0:
            raise ProtocolError(f"negative frame index {self.frame_index}")
        if not (0 <= self.shift_cols < self.canvas.width):
            raise ProtocolError(f"shift {self.shift_cols} outside canvas")
        if self.crop is not None:
            start, width = self.crop
            if start < 0 or width < 1 or start + width > self.canvas.width:
                raise ProtocolError(f"crop {self.crop} outside canvas")


@dataclass(frozen=True)
class EntityProposal:
    """Class-agnostic region proposal."""

    mask: Mask
    confidence: float

    def __post_init__(self) -> None:
        if self.mask.is_empty():
            raise ProtocolError("proposal mask is empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ProtocolError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PanopticProposal:
    """Labelled region proposal from a panoptic segmentor."""

    mask: Mask
    label: str
    source_taxonomy: str
    confidence: float

    def __post_init__(self) -> None:
        if self.mask.is_empty():
            raise ProtocolError("proposal mask is empty")
        if not self.label or "\n" in self.label:
            raise ProtocolError(f"bad label {self.label!r}")
        if not _ID_RE.match(self.source_taxonomy):
            raise ProtocolError(f"bad taxonomy id {self.source_taxonomy!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ProtocolError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class TrackRequest:
    """Propagate one prompt mask forward.

    The response covers frames prompt_frame .. prompt_frame + horizon - 1
    in source coordinates (tracking never sees padded or recentered
    views).
    """

    video_id: str
    prompt_frame: int
    prompt_mask: Mask
    horizon: int

    def __post_init__(self) -> None:
        if not _ID_RE.match(self.video_id):
            raise ProtocolError(f"bad video id {self.video_id!r}")
        if self.prompt_frame < 0:
            raise ProtocolError(f"negative prompt frame {self.prompt_frame}")
        if self.horizon < 1:
            raise ProtocolError(f"horizon {self.horizon} must be >= 1")
        if self.prompt_mask.is_empty():
            raise ProtocolError("prompt mask is empty")


def valid_id(token: str) -> bool:
    return bool(_ID_RE.match(token))


# ---------------------------------------------------------------------------
# line cursor


class _Lines:
    def __init__(self, text: str) -> None:
        if not text or not text.endswith("\n"):
            raise ProtocolError("message must end with a newline")
        self.lines = text.split("\n")[:-1]
        self.pos = 0

    def take(self) -> str:
        if self.pos >= len(self.lines):
            raise ProtocolError("message truncated")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def peek(self) -> str | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def expect(self, literal: str) -> None:
        got = self.take()
        if got != literal:
            raise ProtocolError(f"expected {literal!r}, got {got!r} (line {self.pos})")

    def finish(self) -> None:
        self.expect("end")
        if self.pos != len(self.lines):
            raise ProtocolError("trailing data after end")

    def at_end(self) -> bool:
        return self.pos == len(self.lines)


def _int_field(cur: _Lines, key: str) -> int:
    line = cur.take()
    prefix = key + " "
    if not line.startswith(prefix) or not _INT_RE.match(line[len(prefix) :]):
        raise ProtocolError(f"expected '{key} <int>', got {line!r}")
    return int(line[len(prefix) :])


def _str_field(cur: _Lines, key: str) -> str:
    line = cur.take()
    prefix = key + " "
    if not line.startswith(prefix) or len(line) == len(prefix):
        raise ProtocolError(f"expected '{key} <value>', got {line!r}")
    return line[len(prefix) :]


def _float_field(cur: _Lines, key: str) -> float:
    raw = _str_field(cur, key)
    try:
        val = float(raw)
    except ValueError as exc:
        raise ProtocolError(f"bad float for {key}: {raw!r}") from exc
    return val


def _dims_line(dims: GridDims) -> str:
    return (
        f"canvas {dims.width} {dims.height} "
        f"wrap{1 if dims.wrap_horizontal else 0}"
    )


def _parse_dims(line: str, key: str = "canvas") -> GridDims:
    parts = line.split(" ")
    if (
        len(parts) != 4
        or parts[0] != key
        or not _INT_RE.match(parts[1])
        or not _INT_RE.match(parts[2])
        or parts[3] not in ("wrap0", "wrap1")
    ):
        raise ProtocolError(f"bad {key} line: {line!r}")
    return GridDims(int(parts[1]), int(parts[2]), parts[3] == "wrap1")


def _write_mask_block(out: list[str], mask: Mask) -> None:
    out.append(f"mask {len(mask.runs)}")
    out.append(mask_to_text(mask).rstrip("\n"))


def _read_mask_block(cur: _Lines) -> Mask:
    head = cur.take()
    m = re.match(r"^mask (0|[1-9][0-9]*)$", head)
    if not m:
        raise ProtocolError(f"expected 'mask <nruns>', got {head!r}")
    nruns = int(m.group(1))
    lines = [cur.take() for _ in range(nruns + 1)]
    try:
        mask = mask_from_text("\n".join(lines) + "\n")
    except MaskFormatError as exc:
        raise ProtocolError(f"bad mask block: {exc}") from exc
    if len(mask.runs) != nruns:
        raise ProtocolError(f"mask block announced {nruns} runs, has {len(mask.runs)}")
    return mask


def message_type(text: str) -> str:
    """Type token of a wire message (first line, after the magic)."""
    head = text.split("\n", 1)[0]
    parts = head.split(" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise ProtocolError(f"bad magic line: {head!r}")
    return parts[1]


def _header(kind: str) -> list[str]:
    return [f"{MAGIC} {kind}"]


def _check_header(cur: _Lines, kind: str) -> None:
    cur.expect(f"{MAGIC} {kind}")


# ---------------------------------------------------------------------------
# segmentation requests


def _serialize_segment_request(kind: str, ref: FrameRef) -> str:
    out = _header(kind)
    out.append(f"video {ref.video_id}")
    out.append(f"frame {ref.frame_index}")
    out.append(_dims_line(ref.canvas))
    if ref.shift_cols:
        out.append(f"shift {ref.shift_cols}")
    if ref.crop is not None:
        out.append(f"crop {ref.crop[0]} {ref.crop[1]}")
    out.append("end")
    return "\n".join(out) + "\n"


def serialize_entity_request(ref: FrameRef) -> str:
    return _serialize_segment_request("entity.request", ref)


def serialize_panoptic_request(ref: FrameRef) -> str:
    return _serialize_segment_request("panoptic.request", ref)


def parse_segment_request(text: str) -> tuple[str, FrameRef]:
    """Returns ('entity' | 'panoptic', FrameRef)."""
    kind = message_type(text)
    if kind not in ("entity.request", "panoptic.request"):
        raise ProtocolError(f"not a segmentation request: {kind}")
    cur = _Lines(text)
    _check_header(cur, kind)
    video = _str_field(cur, "video")
    frame = _int_field(cur, "frame")
    canvas = _parse_dims(cur.take())
    shift = 0
    crop = None
    nxt = cur.peek()
    if nxt is not None and nxt.startswith("shift "):
        shift = _int_field(cur, "shift")
        nxt = cur.peek()
    if nxt is not None and nxt.startswith("crop "):
        parts = cur.take().split(" ")
        if len(parts) != 3 or not _INT_RE.match(parts[1]) or not _INT_RE.match(parts[2]):
            raise ProtocolError("bad crop line")
        crop = (int(parts[1]), int(parts[2]))
    cur.finish()
    ref = FrameRef(
        video_id=video, frame_index=frame, canvas=canvas, shift_cols=shift, crop=crop
    )
    return (kind.split(".")[0], ref)


# ---------------------------------------------------------------------------
# segmentation responses


def serialize_entity_response(proposals) -> str:
    out = _header("entity.response")
    out.append(f"count {len(proposals)}")
    for p in proposals:
        out.append("proposal")
        out.append(f"confidence {p.confidence!r}")
        _write_mask_block(out, p.mask)
        out.append("end proposal")
    out.append("end")
    return "\n".join(out) + "\n"


def parse_entity_response(text: str) -> tuple[EntityProposal, ...]:
    cur = _Lines(text)
    _check_header(cur, "entity.response")
    count = _int_field(cur, "count")
    if count < 0:
        raise ProtocolError("negative proposal count")
    props = []
    for _ in range(count):
        cur.expect("proposal")
        conf = _float_field(cur, "confidence")
        mask = _read_mask_block(cur)
        cur.expect("end proposal")
        props.append(EntityProposal(mask=mask, confidence=conf))
    cur.finish()
    return tuple(props)


def serialize_panoptic_response(proposals) -> str:
    out = _header("panoptic.response")
    out.append(f"count {len(proposals)}")
    for p in proposals:
        out.append("proposal")
        out.append(f"confidence {p.confidence!r}")
        out.append(f"taxonomy {p.source_taxonomy}")
        out.append(f"label {p.label}")
        _write_mask_block(out, p.mask)
        out.append("end proposal")
    out.append("end")
    return "\n".join(out) + "\n"


def parse_panoptic_response(text: str) -> tuple[PanopticProposal, ...]:
    cur = _Lines(text)
    _check_header(cur, "panoptic.response")
    count = _int_field(cur, "count")
    if count < 0:
        raise ProtocolError("negative proposal count")
    props = []
    for _ in range(count):
        cur.expect("proposal")
        conf = _float_field(cur, "confidence")
        taxonomy = _str_field(cur, "taxonomy")
        label = _str_field(cur, "label")
        mask = _read_mask_block(cur)
        cur.expect("end proposal")
        props.append(
            PanopticProposal(
                mask=mask, label=label, source_taxonomy=taxonomy, confidence=conf
            )
        )
    cur.finish()
    return tuple(props)


# ---------------------------------------------------------------------------
# tracking


def serialize_track_request(req: TrackRequest) -> str:
    out = _header("track.request")
    out.append(f"video {req.video_id}")
    out.append(f"prompt-frame {req.prompt_frame}")
    out.append(f"horizon {req.horizon}")
    _write_mask_block(out, req.prompt_mask)
    out.append("end")
    return "\n".join(out) + "\n"


def parse_track_request(text: str) -> TrackRequest:
    cur = _Lines(text)
    _check_header(cur, "track.request")
    video = _str_field(cur, "video")
    frame = _int_field(cur, "prompt-frame")
    horizon = _int_field(cur, "horizon")
    mask = _read_mask_block(cur)
    cur.finish()
    return TrackRequest(
        video_id=video, prompt_frame=frame, prompt_mask=mask, horizon=horizon
    )


def serialize_track_response(frames) -> str:
    """frames: sequence of (frame_index, Mask), consecutive ascending."""
    _check_track_frames(frames)
    out = _header("track.response")
    out.append(f"count {len(frames)}")
    for idx, mask in frames:
        out.append(f"frame {idx}")
        _write_mask_block(out, mask)
    out.append("end")
    return "\n".join(out) + "\n"


def parse_track_response(text: str) -> tuple[tuple[int, Mask], ...]:
    cur = _Lines(text)
    _check_header(cur, "track.response")
    count = _int_field(cur, "count")
    if count < 1:
        raise ProtocolError("track response must cover at least one frame")
    frames = []
    for _ in range(count):
        idx = _int_field(cur, "frame")
        frames.append((idx, _read_mask_block(cur)))
    cur.finish()
    _check_track_frames(frames)
    return tuple(frames)


def _check_track_frames(frames) -> None:
    if not frames:
        raise ProtocolError("track response must cover at least one frame")
    first = frames[0][0]
    if first < 0:
        raise ProtocolError("negative frame index")
    for offset, (idx, mask) in enumerate(frames):
        if idx != first + offset:
            raise ProtocolError("track response frames must be consecutive")
        if mask.dims != frames[0][1].dims:
            raise ProtocolError("track response mixes grids")


# ---------------------------------------------------------------------------
# completion (language agents)


def _serialize_lines(kind: str, body: str) -> str:
    body_lines = body.split("\n")
    if body_lines and body_lines[-1] == "":
        body_lines.pop()
    out = _header(kind)
    out.append(f"lines {len(body_lines)}")
    out.extend(body_lines)
    out.append("end")
    return "\n".join(out) + "\n"


def _parse_lines(kind: str, text: str) -> str:
    cur = _Lines(text)
    _check_header(cur, kind)
    n = _int_field(cur, "lines")
    if n < 0:
        raise ProtocolError("negative line count")
    body = [cur.take() for _ in range(n)]
    cur.finish()
    return "\n".join(body) + ("\n" if body else "")


def serialize_complete_request(prompt: str) -> str:
    return _serialize_lines("complete.request", prompt)


def parse_complete_request(text: str) -> str:
    return _parse_lines("complete.request", text)


def serialize_complete_response(reply: str) -> str:
    return _serialize_lines("complete.response", reply)


def parse_complete_response(text: str) -> str:
    return _parse_lines("complete.response", text)


# ---------------------------------------------------------------------------
# errors


def serialize_error(code: str, message: str) -> str:
    if not _ID_RE.match(code):
        raise ProtocolError(f"bad error code {code!r}")
    if "\n" in message:
        message = message.replace("\n", " ")
    out = _header("error")
    out.append(f"code {code}")
    out.append(f"message {message}")
    out.append("end")
    return "\n".join(out) + "\n"


def parse_error(text: str) -> tuple[str, str]:
    cur = _Lines(text)
    _check_header(cur, "error")
    code = _str_field(cur, "code")
    message = _str_field(cur, "message")
    cur.finish()
    return (code, message)
