"""Backend gateway: segmentors and trackers behind one wire protocol.

A backend is addressed by a registry entry (id, role, url, taxonomy).
`http://` / `https://` urls are POSTed the wire message on the endpoint
for its type; `mock:<family>:<fixture-path>` urls run an in-process mock.
Mock calls still go through the full text codec, so a mock response is a
pure function of (fixture file, request bytes) and every pipeline run
exercises the protocol.

Mock families:

* ``scripted``   - fixture lists the exact proposals per frame and the
  exact track tables / canned responses; the file is the oracle.
* ``geometric``  - fixture describes a z-ordered world of moving shapes;
  proposals and tracks are computed from visibility (a shape minus
  everything stacked above it), so occlusions and seam crossings fall out
  of the kinematics.
* ``adversarial`` - wraps another fixture and corrupts tracker responses
  by rule: dropped frame ranges, seam-blind clipping, instance splits.

The gateway enforces the response contracts (canvas match, crop
containment, frame-count match) and never alters mask geometry.
"""

from __future__ import annotations

import logging
import re
import threading
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from . import protocol as P
from .errors import BackendError, PanoAnnoError, ProtocolError
from .geometry import to_view
from .mask import (
    GridDims,
    Mask,
    connected_components,
    crop_columns,
    difference,
    intersection_area,
    iou,
    rotate_columns,
    union_all,
)

log = logging.getLogger(__name__)

ROLES = ("entity", "panoptic", "tracker")

ENDPOINTS = {
    "entity.request": "/v1/segment/entity",
    "panoptic.request": "/v1/segment/panoptic",
    "track.request": "/v1/track",
    "complete.request": "/v1/complete",
}

TRACK_MATCH_FLOOR = 0.3  # min prompt IoU for a mock tracker to latch on

_MOCK_URL_RE = re.compile(r"^mock:(scripted|geometric|adversarial):(.+)$")


@dataclass(frozen=True)
class BackendSpec:
    id: str
    role: str
    url: str
    taxonomy: str = "none"

    def __post_init__(self) -> None:
        if not P.valid_id(self.id):
            raise BackendError(f"bad backend id {self.id!r}")
        if self.role not in ROLES:
            raise BackendError(f"unknown backend role {self.role!r}")
        if not P.valid_id(self.taxonomy):
            raise BackendError(f"bad taxonomy id {self.taxonomy!r}")


# ---------------------------------------------------------------------------
# shared fixture-parsing helpers


class _FixtureReader:
    def __init__(self, path: Path) -> None:
        self.path = path
        try:
            text = path.read_text("ascii")
        except OSError as exc:
            raise BackendError(f"cannot read fixture {path}: {exc}") from exc
        if not text.endswith("\n"):
            raise BackendError(f"fixture {path} must end with a newline")
        self.lines = text.split("\n")[:-1]
        self.pos = 0

    def take(self) -> str:
        if self.pos >= len(self.lines):
            raise BackendError(f"fixture {self.path} truncated")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def peek(self) -> str | None:
        # blank lines and comments are cosmetic
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            if line and not line.startswith("#"):
                return line
            self.pos += 1
        return None

    def next(self) -> str | None:
        line = self.peek()
        if line is not None:
            self.pos += 1
        return line

    def mask(self) -> Mask:
        head = self.take()
        m = re.match(r"^mask (0|[1-9][0-9]*)$", head)
        if not m:
            raise BackendError(f"{self.path}: expected 'mask <n>', got {head!r}")
        n = int(m.group(1))
        block = [self.take() for _ in range(n + 1)]
        return P.mask_from_text("\n".join(block) + "\n")


def _kv_pairs(line: str, *, skip: int) -> dict[str, str]:
    out = {}
    for tok in line.split(" ")[skip:]:
        if "=" not in tok:
            raise BackendError(f"expected key=value, got {tok!r} in {line!r}")
        k, v = tok.split("=", 1)
        if k in out:
            raise BackendError(f"duplicate key {k!r} in {line!r}")
        out[k] = v
    return out


def _canvas_of(reader: _FixtureReader) -> GridDims:
    line = reader.next()
    if line is None or not line.startswith("canvas "):
        raise BackendError(f"{reader.path}: missing canvas line")
    parts = line.split(" ")
    if len(parts) != 4 or parts[3] not in ("wrap0", "wrap1"):
        raise BackendError(f"{reader.path}: bad canvas line {line!r}")
    return GridDims(int(parts[1]), int(parts[2]), parts[3] == "wrap1")


def _view_copies(mask: Mask, source: GridDims, ref: P.FrameRef) -> list[Mask]:
    """A world mask as the request view sees it.

    The mask is recentered/padded onto the view canvas and then split into
    view-connected blobs, because that is what a segmentor looking at the
    view would propose: an object near the seam appears as two whole blobs
    on a padded canvas, one per duplication.  Blobs are cropped to the
    request window; empty leftovers vanish.  Order: top-left blob first.
    """
    view = to_view(mask, source, ref.canvas, ref.shift_cols)
    comps = connected_components(view)
    comps.sort(key=lambda m: m.first_pixel())
    out = []
    for c in comps:
        if ref.crop is not None:
            c = crop_columns(c, *ref.crop)
        if not c.is_empty():
            out.append(c)
    return out


def _echo_track(req: P.TrackRequest) -> list[tuple[int, Mask]]:
    """Unmatched prompt: echo it at the prompt frame, then report nothing."""
    empty = Mask.empty(req.prompt_mask.dims)
    return [
        (req.prompt_frame + i, req.prompt_mask if i == 0 else empty)
        for i in range(req.horizon)
    ]


# ---------------------------------------------------------------------------
# geometric mock


@dataclass(frozen=True)
class _Shape:
    sid: str
    z: int
    kind: str
    row: int
    col: int
    h: int
    w: int
    drow: int
    dcol: int
    label: str
    taxonomy: str
    confidence: float
    appear: int
    vanish: int  # -1: never


class GeometricBackend:
    """World-model mock: z-ordered moving shapes on a wrap canvas."""

    def __init__(self, path) -> None:
        reader = _FixtureReader(Path(path))
        head = reader.next()
        if head != "geometric-fixture v1":
            raise BackendError(f"{path}: not a geometric fixture")
        self.dims = _canvas_of(reader)
        self.shapes: list[_Shape] = []
        while True:
            line = reader.next()
            if line is None:
                break
            if not line.startswith("shape "):
                raise BackendError(f"{path}: unexpected line {line!r}")
            kv = _kv_pairs(line, skip=1)
            try:
                shape = _Shape(
                    sid=kv["id"],
                    z=int(kv["z"]),
                    kind=kv.get("kind", "rect"),
                    row=int(kv["row"]),
                    col=int(kv["col"]),
                    h=int(kv["h"]),
                    w=int(kv["w"]),
                    drow=int(kv.get("drow", "0")),
                    dcol=int(kv.get("dcol", "0")),
                    label=kv.get("label", "thing").replace("_", " "),
                    taxonomy=kv.get("taxonomy", "none"),
                    confidence=float(kv.get("confidence", "0.9")),
                    appear=int(kv.get("appear", "0")),
                    vanish=int(kv.get("vanish", "-1")),
                )
            except (KeyError, ValueError) as exc:
                raise BackendError(f"{path}: bad shape line {line!r}: {exc}") from exc
            if shape.kind not in ("rect", "ellipse"):
                raise BackendError(f"{path}: unknown shape kind {shape.kind!r}")
            if shape.h < 1 or shape.w < 1 or shape.w > self.dims.width:
                raise BackendError(f"{path}: degenerate shape {shape.sid}")
            self.shapes.append(shape)
        if len({s.sid for s in self.shapes}) != len(self.shapes):
            raise BackendError(f"{path}: duplicate shape ids")
        if len({s.z for s in self.shapes}) != len(self.shapes):
            raise BackendError(f"{path}: z values must be unique")

    # -- world queries ----------------------------------------------------

    def present(self, shape: _Shape, t: int) -> bool:
        return shape.appear <= t and (shape.vanish < 0 or t < shape.vanish)

    def region(self, shape: _Shape, t: int) -> Mask:
        r0 = shape.row + shape.drow * t
        c0 = (shape.col + shape.dcol * t) % self.dims.width
        items: list[tuple[int, int, int]] = []
        for dy in range(shape.h):
            r = r0 + dy
            if r < 0 or r >= self.dims.height:
                continue
            if shape.kind == "rect":
                spans = [(0, shape.w)]
            else:
                # integer ellipse test, strictly inside
                spans = []
                run_start = None
                for dx in range(shape.w):
                    py = 2 * dy - (shape.h - 1)
                    px = 2 * dx - (shape.w - 1)
                    inside = (
                        py * py * shape.w * shape.w + px * px * shape.h * shape.h
                        < shape.h * shape.h * shape.w * shape.w
                    )
                    if inside and run_start is None:
                        run_start = dx
                    if not inside and run_start is not None:
                        spans.append((run_start, dx))
                        run_start = None
                if run_start is not None:
                    spans.append((run_start, shape.w))
            for lo, hi in spans:
                s = (c0 + lo) % self.dims.width
                n = hi - lo
                if s + n <= self.dims.width:
                    items.append((r, s, s + n))
                else:
                    items.append((r, s, self.dims.width))
                    items.append((r, 0, s + n - self.dims.width))
        return Mask.from_row_intervals(self.dims, items)

    def visible(self, shape: _Shape, t: int) -> Mask:
        region = self.region(shape, t)
        above = [
            self.region(s, t)
            for s in self.shapes
            if s.z > shape.z and self.present(s, t)
        ]
        if not above:
            return region
        return difference(region, union_all(above, self.dims))

    # -- request handling -------------------------------------------------

    def _segment(self, ref: P.FrameRef) -> list[tuple[_Shape, Mask]]:
        out = []
        for shape in self.shapes:
            if not self.present(shape, ref.frame_index):
                continue
            vis = self.visible(shape, ref.frame_index)
            if vis.is_empty():
                continue
            for copy in _view_copies(vis, self.dims, ref):
                out.append((shape, copy))
        return out

    def _track(self, req: P.TrackRequest) -> tuple[str | None, list[tuple[int, Mask]]]:
        best: tuple[float, int] | None = None
        for i, shape in enumerate(self.shapes):
            if not self.present(shape, req.prompt_frame):
                continue
            vis = self.visible(shape, req.prompt_frame)
            if vis.is_empty():
                continue
            score = iou(req.prompt_mask, vis)
            if score >= TRACK_MATCH_FLOOR and (best is None or score > best[0]):
                best = (score, i)
        if best is None:
            return (None, _echo_track(req))
        shape = self.shapes[best[1]]
        empty = Mask.empty(self.dims)
        frames = []
        for t in range(req.prompt_frame, req.prompt_frame + req.horizon):
            frames.append(
                (t, self.visible(shape, t) if self.present(shape, t) else empty)
            )
        return (shape.sid, frames)

    def handle(self, text: str) -> str:
        return _dispatch(self, text)


# ---------------------------------------------------------------------------
# scripted mock


class ScriptedBackend:
    """Replay mock: the fixture file lists the exact answers."""

    def __init__(self, path) -> None:
        reader = _FixtureReader(Path(path))
        head = reader.next()
        if head != "scripted-fixture v1":
            raise BackendError(f"{path}: not a scripted fixture")
        self.dims = _canvas_of(reader)
        self.proposals: dict[int, list[tuple[float, str, str, Mask]]] = {}
        self.tracks: list[tuple[str, dict[int, Mask]]] = []
        self.responds: list[dict] = []
        while True:
            line = reader.next()
            if line is None:
                break
            if line.startswith("frame "):
                self._parse_frame(reader, line)
            elif line.startswith("track "):
                self._parse_track(reader, line)
            elif line.startswith("respond "):
                self._parse_respond(reader, line)
            else:
                raise BackendError(f"{reader.path}: unexpected line {line!r}")

    def _parse_frame(self, reader: _FixtureReader, line: str) -> None:
        t = int(line.split(" ")[1])
        if t in self.proposals:
            raise BackendError(f"{reader.path}: duplicate frame {t}")
        props = []
        while True:
            nxt = reader.next()
            if nxt == "end frame":
                break
            if nxt is None or not nxt.startswith("proposal"):
                raise BackendError(f"{reader.path}: bad frame section at {nxt!r}")
            kv = _kv_pairs(nxt, skip=1)
            mask = reader.mask()
            if reader.next() != "end proposal":
                raise BackendError(f"{reader.path}: unterminated proposal")
            props.append(
                (
                    float(kv.get("confidence", "0.9")),
                    kv.get("label", "thing").replace("_", " "),
                    kv.get("taxonomy", "none"),
                    mask,
                )
            )
        self.proposals[t] = props

    def _parse_track(self, reader: _FixtureReader, line: str) -> None:
        kv = _kv_pairs(line, skip=1)
        key = kv["key"]
        table: dict[int, Mask] = {}
        while True:
            nxt = reader.next()
            if nxt == "end track":
                break
            if nxt is None or not nxt.startswith("frame "):
                raise BackendError(f"{reader.path}: bad track section at {nxt!r}")
            t = int(nxt.split(" ")[1])
            if t in table:
                raise BackendError(f"{reader.path}: duplicate track frame {t}")
            table[t] = reader.mask()
        self.tracks.append((key, table))

    def _parse_respond(self, reader: _FixtureReader, line: str) -> None:
        kv = _kv_pairs(line, skip=1)
        entry = {
            "prompt_frame": int(kv["prompt-frame"]),
            "key": kv.get("key"),
            "prompt": None,
            "replies": {},
        }
        if reader.next() != "prompt":
            raise BackendError(f"{reader.path}: respond needs a prompt block")
        entry["prompt"] = reader.mask()
        while True:
            nxt = reader.next()
            if nxt == "end respond":
                break
            if nxt is None or not nxt.startswith("frame "):
                raise BackendError(f"{reader.path}: bad respond section at {nxt!r}")
            t = int(nxt.split(" ")[1])
            entry["replies"][t] = reader.mask()
        self.responds.append(entry)

    def _segment(self, ref: P.FrameRef):
        out = []
        for conf, label, taxonomy, mask in self.proposals.get(ref.frame_index, []):
            for copy in _view_copies(mask, self.dims, ref):
                out.append(((conf, label, taxonomy), copy))
        return out

    def _track(self, req: P.TrackRequest) -> tuple[str | None, list[tuple[int, Mask]]]:
        for entry in self.responds:
            if (
                entry["prompt_frame"] == req.prompt_frame
                and entry["prompt"] == req.prompt_mask
            ):
                empty = Mask.empty(self.dims)
                frames = [
                    (t, entry["replies"].get(t, empty))
                    for t in range(req.prompt_frame, req.prompt_frame + req.horizon)
                ]
                return (entry["key"], frames)
        best: tuple[float, int] | None = None
        for i, (_, table) in enumerate(self.tracks):
            at_prompt = table.get(req.prompt_frame)
            if at_prompt is None or at_prompt.is_empty():
                continue
            score = iou(req.prompt_mask, at_prompt)
            if score >= TRACK_MATCH_FLOOR and (best is None or score > best[0]):
                best = (score, i)
        if best is None:
            return (None, _echo_track(req))
        key, table = self.tracks[best[1]]
        empty = Mask.empty(self.dims)
        frames = [
            (t, table.get(t, empty))
            for t in range(req.prompt_frame, req.prompt_frame + req.horizon)
        ]
        return (key, frames)

    def handle(self, text: str) -> str:
        return _dispatch(self, text)


# ---------------------------------------------------------------------------
# adversarial mock


@dataclass(frozen=True)
class _Rule:
    kind: str  # drop | clipwrap | split
    track_key: str
    lo: int = 0
    hi: int = -1  # inclusive; -1: open
    when_prompt_before: int | None = None
    gap_col: int = 0


class AdversarialBackend:
    """Wraps another fixture and corrupts tracker responses by rule."""

    def __init__(self, path) -> None:
        path = Path(path)
        reader = _FixtureReader(path)
        head = reader.next()
        if head != "adversarial-fixture v1":
            raise BackendError(f"{path}: not an adversarial fixture")
        base_line = reader.next()
        if base_line is None or not base_line.startswith("base "):
            raise BackendError(f"{path}: missing base line")
        parts = base_line.split(" ")
        if len(parts) != 3:
            raise BackendError(f"{path}: bad base line {base_line!r}")
        family, rel = parts[1], parts[2]
        base_path = path.parent / rel
        if family == "geometric":
            self.base = GeometricBackend(base_path)
        elif family == "scripted":
            self.base = ScriptedBackend(base_path)
        else:
            raise BackendError(f"{path}: cannot wrap family {family!r}")
        self.dims = self.base.dims
        self.rules: list[_Rule] = []
        while True:
            line = reader.next()
            if line is None:
                break
            if not line.startswith("rule "):
                raise BackendError(f"{path}: unexpected line {line!r}")
            parts = line.split(" ")
            kind = parts[1]
            kv = _kv_pairs(line, skip=2)
            if kind not in ("drop", "clipwrap", "split"):
                raise BackendError(f"{path}: unknown rule {kind!r}")
            lo, hi = 0, -1
            if "frames" in kv:
                m = re.match(r"^(\d+)\.\.(\d+)$", kv["frames"])
                if not m:
                    raise BackendError(f"{path}: bad frames range {kv['frames']!r}")
                lo, hi = int(m.group(1)), int(m.group(2))
            wpb = int(kv["when-prompt-before"]) if "when-prompt-before" in kv else None
            self.rules.append(
                _Rule(
                    kind=kind,
                    track_key=kv["track"],
                    lo=lo,
                    hi=hi,
                    when_prompt_before=wpb,
                    gap_col=int(kv.get("gap-col", "0")),
                )
            )

    def _segment(self, ref: P.FrameRef):
        return self.base._segment(ref)

    def _in_range(self, rule: _Rule, t: int) -> bool:
        return t >= rule.lo and (rule.hi < 0 or t <= rule.hi)

    def _track(self, req: P.TrackRequest) -> tuple[str | None, list[tuple[int, Mask]]]:
        key, frames = self.base._track(req)
        if key is None:
            return (key, frames)
        for rule in self.rules:
            if rule.track_key != key:
                continue
            if (
                rule.when_prompt_before is not None
                and req.prompt_frame >= rule.when_prompt_before
            ):
                continue
            frames = [(t, self._corrupt(rule, t, m, req)) for t, m in frames]
        return (key, frames)

    def _corrupt(self, rule: _Rule, t: int, mask: Mask, req: P.TrackRequest) -> Mask:
        if mask.is_empty():
            return mask
        if rule.kind == "drop":
            return Mask.empty(mask.dims) if self._in_range(rule, t) else mask
        if rule.kind == "split":
            if not self._in_range(rule, t):
                return mask
            stripe = Mask.from_row_intervals(
                mask.dims,
                [(r, rule.gap_col, rule.gap_col + 1) for r in range(mask.dims.height)],
            )
            return difference(mask, stripe)
        # clipwrap: a seam-blind tracker cannot follow past the wrap; keep
        # only the flat-connected piece that overlaps the prompt
        flat = Mask(GridDims(mask.dims.width, mask.dims.height, False), mask.runs)
        best = None
        for comp in connected_components(flat):
            piece = Mask(mask.dims, comp.runs)
            ov = intersection_area(piece, req.prompt_mask)
            if ov > 0 and (best is None or ov > best[0]):
                best = (ov, piece)
        return best[1] if best else Mask.empty(mask.dims)

    def handle(self, text: str) -> str:
        return _dispatch(self, text)


# ---------------------------------------------------------------------------
# request dispatch shared by all mocks


def _dispatch(backend, text: str) -> str:
    try:
        kind = P.message_type(text)
        if kind in ("entity.request", "panoptic.request"):
            _, ref = P.parse_segment_request(text)
            items = backend._segment(ref)
            if kind == "entity.request":
                props = [
                    P.EntityProposal(mask=m, confidence=_conf(meta))
                    for meta, m in items
                ]
                return P.serialize_entity_response(props)
            props = [
                P.PanopticProposal(
                    mask=m,
                    label=_label(meta),
                    source_taxonomy=_taxonomy(meta),
                    confidence=_conf(meta),
                )
                for meta, m in items
            ]
            return P.serialize_panoptic_response(props)
        if kind == "track.request":
            req = P.parse_track_request(text)
            if req.prompt_mask.dims != backend.dims:
                raise ProtocolError(
                    f"prompt on {req.prompt_mask.dims}, world is {backend.dims}"
                )
            _, frames = backend._track(req)
            return P.serialize_track_response(frames)
        raise ProtocolError(f"backend cannot serve {kind}")
    except PanoAnnoError as exc:
        return P.serialize_error("bad-request", str(exc))


def _conf(meta) -> float:
    return meta.confidence if isinstance(meta, _Shape) else meta[0]


def _label(meta) -> str:
    return meta.label if isinstance(meta, _Shape) else meta[1]


def _taxonomy(meta) -> str:
    return meta.taxonomy if isinstance(meta, _Shape) else meta[2]


def make_mock(url: str):
    m = _MOCK_URL_RE.match(url)
    if not m:
        raise BackendError(f"not a mock url: {url!r}")
    family, path = m.group(1), m.group(2)
    cls = {
        "scripted": ScriptedBackend,
        "geometric": GeometricBackend,
        "adversarial": AdversarialBackend,
    }[family]
    return cls(path)


# ---------------------------------------------------------------------------
# transports


def post_text(url: str, text: str, timeout: float) -> str:
    req = urllib.request.Request(
        url,
        data=text.encode("ascii"),
        headers={"Content-Type": "text/plain; charset=utf-8"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read().decode("ascii")
    except OSError as exc:
        raise BackendError(f"POST {url} failed: {exc}") from exc


class Gateway:
    """Routes requests to registered backends and enforces the contracts."""

    def __init__(self, timeout: float = 120.0, max_concurrent: int = 4) -> None:
        self.timeout = timeout
        self.max_concurrent = max_concurrent
        self._specs: dict[str, BackendSpec] = {}
        self._mocks: dict[str, object] = {}
        self._gates: dict[str, threading.Semaphore] = {}
        self._order: list[str] = []

    def register(self, spec: BackendSpec) -> None:
        if spec.id in self._specs:
            raise BackendError(f"duplicate backend id {spec.id!r}")
        if _MOCK_URL_RE.match(spec.url):
            self._mocks[spec.id] = make_mock(spec.url)
        elif not spec.url.startswith(("http://", "https://")):
            raise BackendError(f"unsupported backend url {spec.url!r}")
        self._specs[spec.id] = spec
        self._gates[spec.id] = threading.Semaphore(self.max_concurrent)
        self._order.append(spec.id)

    def spec(self, backend_id: str) -> BackendSpec:
        try:
            return self._specs[backend_id]
        except KeyError:
            raise BackendError(f"no backend {backend_id!r} registered") from None

    def ids(self, role: str | None = None) -> list[str]:
        """Backend ids in registration order, optionally one role only."""
        return [
            b for b in self._order if role is None or self._specs[b].role == role
        ]

    def _exchange(self, backend_id: str, text: str) -> str:
        spec = self.spec(backend_id)
        kind = P.message_type(text)
        with self._gates[backend_id]:
            if backend_id in self._mocks:
                reply = self._mocks[backend_id].handle(text)
            else:
                url = spec.url.rstrip("/") + ENDPOINTS[kind]
                reply = post_text(url, text, self.timeout)
        if P.message_type(reply) == "error":
            code, message = P.parse_error(reply)
            raise BackendError(f"backend {backend_id}: {code}: {message}")
        return reply

    def segment_entities(self, ref: P.FrameRef, backend_id: str):
        spec = self.spec(backend_id)
        if spec.role != "entity":
            raise BackendError(f"backend {backend_id} is not an entity segmentor")
        reply = self._exchange(backend_id, P.serialize_entity_request(ref))
        props = P.parse_entity_response(reply)
        self._check_proposals(props, ref, backend_id)
        return props

    def segment_panoptic(self, ref: P.FrameRef, backend_id: str):
        spec = self.spec(backend_id)
        if spec.role != "panoptic":
            raise BackendError(f"backend {backend_id} is not a panoptic segmentor")
        reply = self._exchange(backend_id, P.serialize_panoptic_request(ref))
        props = P.parse_panoptic_response(reply)
        self._check_proposals(props, ref, backend_id)
        return props

    def track(self, req: P.TrackRequest, backend_id: str):
        spec = self.spec(backend_id)
        if spec.role != "tracker":
            raise BackendError(f"backend {backend_id} is not a tracker")
        reply = self._exchange(backend_id, P.serialize_track_request(req))
        frames = P.parse_track_response(reply)
        if frames[0][0] != req.prompt_frame or len(frames) != req.horizon:
            raise BackendError(
                f"backend {backend_id}: track response covers frames "
                f"{frames[0][0]}..{frames[-1][0]}, wanted "
                f"{req.prompt_frame}+{req.horizon}"
            )
        if frames[0][1].dims != req.prompt_mask.dims:
            raise BackendError(
                f"backend {backend_id}: track response grid mismatch"
            )
        return frames

    @staticmethod
    def _check_proposals(props, ref: P.FrameRef, backend_id: str) -> None:
        for p in props:
            if p.mask.dims != ref.canvas:
                raise BackendError(
                    f"backend {backend_id}: proposal on {p.mask.dims}, "
                    f"request canvas is {ref.canvas}"
                )
            if ref.crop is not None:
                start, width = ref.crop
                for _, s, n in p.mask.runs:
                    if s < start or s + n > start + width:
                        raise BackendError(
                            f"backend {backend_id}: proposal leaks outside "
                            f"the crop window"
                        )


# ---------------------------------------------------------------------------
# minimal HTTP server for serving any handler (tests, demos)


def serve_handler(handler, host: str = "127.0.0.1", port: int = 0):
    """ThreadingHTTPServer wrapping a text handler; caller manages the
    serve_forever thread.  Routes must match the message type."""
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    class _H(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 (stdlib casing)
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("ascii", errors="replace")
            try:
                kind = P.message_type(body)
                expected = ENDPOINTS.get(kind)
                if expected != self.path:
                    reply = P.serialize_error(
                        "wrong-endpoint", f"{kind} does not belong on {self.path}"
                    )
                else:
                    reply = handler(body)
            except PanoAnnoError as exc:
                reply = P.serialize_error("bad-request", str(exc))
            payload = reply.encode("ascii")
            self.send_response(200)
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):  # quiet
            pass

    return ThreadingHTTPServer((host, port), _H)
