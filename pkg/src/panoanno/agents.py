"""Language-agent clients for labeling, blank triage, retrieval and review.

Four engine decisions are delegated to a chat model: choosing one
canonical class for a region with conflicting vocabulary labels,
classifying an unannotated region (border / existing / new), retrieving
which previous instance a lost region belongs to, and scoring a finished
annotation.  Each decision renders a text prompt from a template, sends
it over the completion wire format, and parses a one-line (or line-
oriented) reply grammar.  An invalid reply is retried once; after that
the decision falls back to a deterministic rule and the event is
recorded for human review, except for the annotation review, which has
no safe fallback and raises instead.

A deterministic rule-based chat backend (``mock:rules``) implements the
documented decision rules exactly and is used by the test-suite and the
bundled demos; any HTTP endpoint speaking the completion wire format can
replace it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .backends import ENDPOINTS, post_text
from .errors import AgentError, ConfigError, GeometryError
from .mask import (
    BlankRegion,
    GridDims,
    Mask,
    centroid,
    column_arc,
    intersection_area,
    iou,
)
from .protocol import (
    message_type,
    parse_complete_request,
    parse_complete_response,
    parse_error,
    serialize_complete_request,
    serialize_complete_response,
    serialize_error,
)

__all__ = [
    "AgentSuite",
    "BLANK_BORDER",
    "BLANK_EXISTING",
    "BLANK_NEW",
    "ChatClient",
    "FrameStat",
    "InstanceSummary",
    "LabelCandidate",
    "LabelQuery",
    "PROMPT_NAMES",
    "RETRIEVE_FLOOR",
    "ReviewIssue",
    "ReviewReport",
    "RulesChat",
    "Taxonomy",
    "build_label_query",
    "default_prompt_path",
    "default_taxonomy_path",
    "load_prompt",
    "load_taxonomy",
    "render_prompt",
]

PROMPT_NAMES = ("ts", "tb", "retriever", "checker")

#: Minimum overlap for retrieving a lost region as a previous instance.
RETRIEVE_FLOOR = 0.3

#: Distance threshold for the "existing object" rule, as a fraction of
#: the frame width.
EXISTING_DISTANCE_FRACTION = 0.10

#: Area-ratio band for the "existing object" rule.
EXISTING_AREA_RATIO = (0.5, 2.0)

BLANK_BORDER = "border"
BLANK_EXISTING = "existing"
BLANK_NEW = "new"
BLANK_KINDS = (BLANK_BORDER, BLANK_EXISTING, BLANK_NEW)

ISSUE_KINDS = ("missing", "bad_boundary", "wrong_label", "id_switch")


# ---------------------------------------------------------------------------
# Taxonomy


def _fold_label(label: str) -> str:
    """Lowercase and collapse internal whitespace."""

    return " ".join(label.strip().lower().split())


@dataclass(frozen=True)
class Taxonomy:
    """Canonical class list with vendor-vocabulary synonyms.

    ``classes`` preserves file order; ``stuff`` marks the amorphous
    classes whose pixels count as background material rather than
    countable objects.
    """

    classes: tuple[str, ...]
    stuff: frozenset[str]
    global_synonyms: dict[str, str]
    scoped_synonyms: dict[tuple[str, str], str]

    def normalize(self, label: str, source_taxonomy: str | None = None) -> str | None:
        """Map a raw label onto a canonical class, or ``None``.

        A label that already names a canonical class wins; otherwise a
        synonym scoped to ``source_taxonomy`` is preferred over a
        global one.
        """

        folded = _fold_label(label)
        if not folded:
            return None
        if folded in self._class_set():
            return folded
        if source_taxonomy is not None:
            scoped = self.scoped_synonyms.get((source_taxonomy, folded))
            if scoped is not None:
                return scoped
        return self.global_synonyms.get(folded)

    def is_stuff(self, canonical: str) -> bool:
        return canonical in self.stuff

    def _class_set(self) -> frozenset[str]:
        cached = getattr(self, "_classes_cache", None)
        if cached is None:
            cached = frozenset(self.classes)
            object.__setattr__(self, "_classes_cache", cached)
        return cached


def default_taxonomy_path() -> Path:
    return Path(str(resources.files("panoanno").joinpath("data/taxonomy.txt")))


def load_taxonomy(path: str | Path | None = None) -> Taxonomy:
    """Load a taxonomy file (header ``taxonomy v1``, ``|``-separated rows)."""

    src = Path(path) if path is not None else default_taxonomy_path()
    try:
        text = src.read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigError(f"cannot read taxonomy file {src}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0] != "taxonomy v1":
        raise ConfigError(f"{src}: missing 'taxonomy v1' header")
    classes: list[str] = []
    stuff: set[str] = set()
    global_syn: dict[str, str] = {}
    scoped_syn: dict[tuple[str, str], str] = {}
    for num, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("|")
        kind = parts[0]
        if kind == "class":
            if len(parts) != 3 or parts[2] not in ("stuff", "thing"):
                raise ConfigError(f"{src}:{num}: bad class row {line!r}")
            name = _fold_label(parts[1])
            if not name or name in classes:
                raise ConfigError(f"{src}:{num}: empty or duplicate class {parts[1]!r}")
            classes.append(name)
            if parts[2] == "stuff":
                stuff.add(name)
        elif kind == "synonym":
            if len(parts) not in (3, 4):
                raise ConfigError(f"{src}:{num}: bad synonym row {line!r}")
            alias = _fold_label(parts[1])
            canonical = _fold_label(parts[2])
            if not alias or not canonical:
                raise ConfigError(f"{src}:{num}: empty synonym field")
            if canonical not in classes:
                raise ConfigError(
                    f"{src}:{num}: synonym target {canonical!r} is not a class"
                )
            if alias in classes:
                raise ConfigError(f"{src}:{num}: alias {alias!r} shadows a class")
            if len(parts) == 4:
                key = (parts[3], alias)
                if key in scoped_syn:
                    raise ConfigError(f"{src}:{num}: duplicate scoped alias {alias!r}")
                scoped_syn[key] = canonical
            else:
                if alias in global_syn:
                    raise ConfigError(f"{src}:{num}: duplicate alias {alias!r}")
                global_syn[alias] = canonical
        else:
            raise ConfigError(f"{src}:{num}: unknown row kind {kind!r}")
    if not classes:
        raise ConfigError(f"{src}: no classes defined")
    return Taxonomy(
        classes=tuple(classes),
        stuff=frozenset(stuff),
        global_synonyms=global_syn,
        scoped_synonyms=scoped_syn,
    )


# ---------------------------------------------------------------------------
# Prompt templates


def default_prompt_path(name: str) -> Path:
    return Path(str(resources.files("panoanno").joinpath(f"prompts/{name}.txt")))


def load_prompt(name: str, prompts_dir: str | Path | None = None) -> str:
    if name not in PROMPT_NAMES:
        raise ConfigError(f"unknown prompt name {name!r}")
    src = Path(prompts_dir) / f"{name}.txt" if prompts_dir else default_prompt_path(name)
    try:
        return src.read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigError(f"cannot read prompt file {src}: {exc}") from exc


_SLOT_RE = re.compile(r"\{\{([a-z_]+)\}\}")


def render_prompt(template: str, slots: dict[str, str]) -> str:
    """Substitute ``{{name}}`` placeholders; all placeholders must resolve."""

    def sub(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in slots:
            raise AgentError(f"prompt placeholder {{{{{key}}}}} has no value")
        return slots[key]

    return _SLOT_RE.sub(sub, template)


# ---------------------------------------------------------------------------
# Query/report data types


@dataclass(frozen=True)
class LabelCandidate:
    """A vocabulary label proposed for a region, with its overlap share."""

    label: str
    source_taxonomy: str
    overlap: float


@dataclass(frozen=True)
class LabelQuery:
    """Geometry summary plus candidate labels for one region."""

    frame: GridDims
    area_fraction: float
    row_min: int
    row_max: int
    col_arc_start: int
    col_arc_len: int
    centroid_row: float
    centroid_col: float
    candidates: tuple[LabelCandidate, ...]


def build_label_query(
    mask: Mask,
    labeled_masks: Sequence[tuple[Mask, str, str]],
    min_overlap: float = 0.5,
) -> LabelQuery:
    """Summarize ``mask`` and collect labels that cover enough of it.

    ``labeled_masks`` holds ``(mask, label, source_taxonomy)`` triples;
    a triple becomes a candidate when the intersection covers at least
    ``min_overlap`` of the region.  Candidates are ordered by overlap,
    descending, with input order breaking ties.
    """

    if mask.is_empty():
        raise GeometryError("cannot build a label query for an empty mask")
    rows = [run[0] for run in mask.runs]
    cands: list[LabelCandidate] = []
    for lm, label, source in labeled_masks:
        overlap = intersection_area(mask, lm) / mask.area
        if overlap >= min_overlap:
            cands.append(LabelCandidate(label=label, source_taxonomy=source, overlap=overlap))
    cands.sort(key=lambda c: -c.overlap)
    c_row, c_col = centroid(mask)
    arc_start, arc_len = column_arc(mask)
    return LabelQuery(
        frame=mask.dims,
        area_fraction=mask.area / mask.dims.area,
        row_min=min(rows),
        row_max=max(rows),
        col_arc_start=arc_start,
        col_arc_len=arc_len,
        centroid_row=c_row,
        centroid_col=c_col,
        candidates=tuple(cands),
    )


@dataclass(frozen=True)
class InstanceSummary:
    """A previously annotated instance, as shown to the agents."""

    instance_id: int
    label: str
    mask: Mask

    def __post_init__(self) -> None:
        if self.instance_id < 1:
            raise ValueError("instance ids start at 1")
        if self.mask.is_empty():
            raise GeometryError("instance summaries require a non-empty mask")


@dataclass(frozen=True)
class ReviewIssue:
    frame_index: int
    instance_id: int
    kind: str
    comment: str

    def __post_init__(self) -> None:
        if self.kind not in ISSUE_KINDS:
            raise ValueError(f"unknown issue kind {self.kind!r}")


@dataclass(frozen=True)
class ReviewReport:
    score: float
    issues: tuple[ReviewIssue, ...]


@dataclass(frozen=True)
class FrameStat:
    """Per-frame summary handed to the annotation checker."""

    frame_index: int
    coverage: float
    instances: tuple[tuple[int, str, int], ...]  # (instance_id, label, area)


# ---------------------------------------------------------------------------
# Chat transport


class ChatClient:
    """Completion-endpoint client for a chat model.

    ``url`` is either an HTTP(S) endpoint speaking the completion wire
    format on ``/v1/complete``, or ``mock:rules[:<taxonomy-path>]`` for
    the deterministic rule-based backend.
    """

    def __init__(self, url: str, timeout: float = 120.0) -> None:
        self.url = url
        self.timeout = float(timeout)
        self._mock: RulesChat | None = None
        if url == "mock:rules" or url.startswith("mock:rules:"):
            rest = url[len("mock:rules") :]
            path = rest[1:] if rest.startswith(":") else ""
            self._mock = RulesChat(load_taxonomy(path or None))
        elif not (url.startswith("http://") or url.startswith("https://")):
            raise ConfigError(f"unsupported chat url {url!r}")

    def complete(self, prompt: str) -> str:
        wire = serialize_complete_request(prompt)
        if self._mock is not None:
            reply = self._mock.handle(wire)
        else:
            reply = post_text(
                self.url.rstrip("/") + ENDPOINTS["complete.request"], wire, self.timeout
            )
        kind = message_type(reply)
        if kind == "error":
            code, message = parse_error(reply)
            raise AgentError(f"chat backend error: {code}: {message}")
        if kind != "complete.response":
            raise AgentError(f"chat backend replied with {kind!r}")
        return parse_complete_response(reply)


# ---------------------------------------------------------------------------
# Rule-based chat backend

_CLASSES_RE = re.compile(r"^classes: (.*)$")
_FRAME_DIMS_RE = re.compile(r"^frame: width=(\d+) height=(\d+)$")
_CANDIDATE_RE = re.compile(r"^candidate: taxonomy=(\S+) overlap=(\S+) label=(.*)$")
_BLANK_REGION_RE = re.compile(
    r"^region: area=(\d+) centroid=\(([^,]+),([^)]+)\)"
    r" touches_left=([01]) touches_right=([01])$"
)
_PREV_RE = re.compile(r"^prev: id=(\d+) centroid=\(([^,]+),([^)]+)\) area=(\d+) label=(.*)$")
_CAND_RE = re.compile(r"^cand: id=(\d+) iou=(\S+) label=(.*)$")
_FRAME_STAT_RE = re.compile(r"^frame: index=(\d+) coverage=(\S+)$")
_INST_RE = re.compile(r"^inst: frame=(\d+) id=(\d+) area=(\d+) label=(.*)$")


def _parse_float(token: str, what: str) -> float:
    try:
        value = float(token)
    except ValueError as exc:
        raise AgentError(f"bad {what} value {token!r}") from exc
    if not math.isfinite(value):
        raise AgentError(f"non-finite {what} value {token!r}")
    return value


class RulesChat:
    """Deterministic chat backend implementing the documented rules.

    Speaks the completion wire format (``handle`` maps request text to
    response text), so it can also be served over HTTP for transport
    tests.  Every reply follows the grammar the prompts ask for.
    """

    def __init__(self, taxonomy: Taxonomy) -> None:
        self.taxonomy = taxonomy

    def handle(self, text: str) -> str:
        try:
            prompt = parse_complete_request(text)
            reply = self._reply(prompt)
        except Exception as exc:  # noqa: BLE001 - mock boundary mirrors a server
            return serialize_error("bad-request", str(exc))
        return serialize_complete_response(reply)

    def _reply(self, prompt: str) -> str:
        lines = prompt.splitlines()
        if not lines or not lines[0].startswith("task: "):
            raise AgentError("prompt has no task line")
        task = lines[0][len("task: ") :]
        if task == "semantic-label":
            return self._semantic_label(lines)
        if task == "blank-kind":
            return self._blank_kind(lines)
        if task == "retrieve-object":
            return self._retrieve_object(lines)
        if task == "annotation-review":
            return self._annotation_review(lines)
        raise AgentError(f"unknown task {task!r}")

    def _semantic_label(self, lines: list[str]) -> str:
        classes: list[str] = []
        cands: list[tuple[float, int, str, str]] = []
        for line in lines:
            match = _CLASSES_RE.match(line)
            if match:
                classes = match.group(1).split("|")
            match = _CANDIDATE_RE.match(line)
            if match:
                overlap = _parse_float(match.group(2), "overlap")
                cands.append((overlap, len(cands), match.group(3), match.group(1)))
        if not classes:
            raise AgentError("semantic-label prompt has no classes line")
        for overlap, _idx, label, source in sorted(cands, key=lambda c: (-c[0], c[1])):
            canonical = self.taxonomy.normalize(label, source)
            if canonical is not None:
                return f"LABEL: {canonical}\n"
        return f"LABEL: {classes[0]}\n"

    def _blank_kind(self, lines: list[str]) -> str:
        width: int | None = None
        region = None
        prevs: list[tuple[int, float, float, int]] = []
        for line in lines:
            match = _FRAME_DIMS_RE.match(line)
            if match:
                width = int(match.group(1))
            match = _BLANK_REGION_RE.match(line)
            if match:
                region = (
                    int(match.group(1)),
                    _parse_float(match.group(2), "centroid row"),
                    _parse_float(match.group(3), "centroid col"),
                    match.group(4) == "1",
                    match.group(5) == "1",
                )
            match = _PREV_RE.match(line)
            if match:
                prevs.append(
                    (
                        int(match.group(1)),
                        _parse_float(match.group(2), "centroid row"),
                        _parse_float(match.group(3), "centroid col"),
                        int(match.group(4)),
                    )
                )
        if width is None or region is None:
            raise AgentError("blank-kind prompt is missing frame or region lines")
        area, c_row, c_col, touches_left, touches_right = region
        # one edge only: a piece cut off by the seam.  Touching both edges
        # means the region wraps through the seam in one piece.
        if touches_left != touches_right:
            return f"KIND: {BLANK_BORDER}\n"
        lo, hi = EXISTING_AREA_RATIO
        best: tuple[float, int] | None = None
        for pid, p_row, p_col, p_area in prevs:
            if p_area <= 0:
                continue
            ratio = area / p_area
            if not (lo <= ratio <= hi):
                continue
            d_col = abs(c_col - p_col)
            d_col = min(d_col, width - d_col)
            dist = math.hypot(c_row - p_row, d_col)
            if dist > EXISTING_DISTANCE_FRACTION * width:
                continue
            if best is None or (dist, pid) < best:
                best = (dist, pid)
        if best is not None:
            return f"KIND: {BLANK_EXISTING}\n"
        return f"KIND: {BLANK_NEW}\n"

    def _retrieve_object(self, lines: list[str]) -> str:
        cands: list[tuple[int, float]] = []
        for line in lines:
            match = _CAND_RE.match(line)
            if match:
                cands.append((int(match.group(1)), _parse_float(match.group(2), "iou")))
        best: tuple[float, int] | None = None
        for cid, value in cands:
            if value < RETRIEVE_FLOOR:
                continue
            if best is None or (-value, cid) < best:
                best = (-value, cid)
        if best is None:
            return "OBJECT: none\n"
        return f"OBJECT: {best[1]}\n"

    def _annotation_review(self, lines: list[str]) -> str:
        coverages: list[float] = []
        frames: list[int] = []
        areas: dict[tuple[int, int], int] = {}
        ids: set[int] = set()
        for line in lines:
            match = _FRAME_STAT_RE.match(line)
            if match:
                frames.append(int(match.group(1)))
                coverages.append(_parse_float(match.group(2), "coverage"))
            match = _INST_RE.match(line)
            if match:
                frame_index = int(match.group(1))
                inst_id = int(match.group(2))
                areas[(frame_index, inst_id)] = int(match.group(3))
                ids.add(inst_id)
        if not frames:
            raise AgentError("annotation-review prompt has no frame lines")
        score = 10.0 * (sum(coverages) / len(coverages))
        out = [f"SCORE: {score!r}"]
        frame_set = set(frames)
        for frame_index in frames:
            for inst_id in sorted(ids):
                here = (frame_index, inst_id) in areas
                before = (frame_index - 1, inst_id) in areas
                after = (frame_index + 1, inst_id) in areas
                if (
                    not here
                    and before
                    and after
                    and frame_index - 1 in frame_set
                    and frame_index + 1 in frame_set
                ):
                    out.append(
                        f"ISSUE: frame={frame_index} instance={inst_id} kind=missing "
                        f"comment=absent at frame {frame_index} but present at "
                        f"{frame_index - 1} and {frame_index + 1}"
                    )
                prev_area = areas.get((frame_index - 1, inst_id))
                cur_area = areas.get((frame_index, inst_id))
                if (
                    prev_area is not None
                    and cur_area is not None
                    and prev_area > 0
                    and abs(cur_area - prev_area) / prev_area > 0.5
                ):
                    out.append(
                        f"ISSUE: frame={frame_index} instance={inst_id} kind=bad_boundary "
                        f"comment=area changed from {prev_area} to {cur_area} between "
                        f"frames {frame_index - 1} and {frame_index}"
                    )
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Agent operations


def _reply_value(reply: str, key: str) -> str | None:
    """Return the value of the first ``KEY: value`` line, else ``None``."""

    prefix = key + ": "
    for line in reply.splitlines():
        if line.startswith(prefix):
            value = line[len(prefix) :].strip()
            if value:
                return value
    return None


def _format_float(value: float) -> str:
    return repr(float(value))


def _centroid_text(row: float, col: float) -> str:
    return f"({_format_float(row)},{_format_float(col)})"


_ISSUE_RE = re.compile(
    r"^ISSUE: frame=(\d+) instance=(\d+)"
    r" kind=(missing|bad_boundary|wrong_label|id_switch) comment=(.*)$"
)


class AgentSuite:
    """The four agent-backed decisions, sharing one chat client.

    ``escalations`` collects human-readable records of decisions that
    fell back to a rule after two unusable replies.
    """

    def __init__(
        self,
        chat: ChatClient,
        taxonomy: Taxonomy | None = None,
        prompts_dir: str | Path | None = None,
        escalations: list[str] | None = None,
    ) -> None:
        self.chat = chat
        self.taxonomy = taxonomy if taxonomy is not None else load_taxonomy()
        self._templates = {name: load_prompt(name, prompts_dir) for name in PROMPT_NAMES}
        self.escalations = escalations if escalations is not None else []

    # -- semantic label ----------------------------------------------------

    def check_semantic_label(self, query: LabelQuery) -> str:
        """Pick one canonical class for a region.

        When every candidate normalizes to the same canonical class the
        answer is settled locally without a chat call; any disagreement,
        unknown label, or empty candidate list goes to the agent.
        """

        normalized = [
            self.taxonomy.normalize(c.label, c.source_taxonomy) for c in query.candidates
        ]
        if query.candidates and None not in normalized and len(set(normalized)) == 1:
            return normalized[0]
        prompt = self._render_ts(query)
        for _attempt in range(2):
            reply = self.chat.complete(prompt)
            value = _reply_value(reply, "LABEL")
            if value is not None:
                canonical = self.taxonomy.normalize(value)
                if canonical is not None:
                    return canonical
        by_overlap = sorted(
            zip(query.candidates, normalized), key=lambda pair: -pair[0].overlap
        )
        fallback = next(
            (canon for _cand, canon in by_overlap if canon is not None),
            self.taxonomy.classes[0],
        )
        self.escalations.append(
            "semantic-label: no usable reply for region at centroid="
            f"{_centroid_text(query.centroid_row, query.centroid_col)}; "
            f"fell back to {fallback!r}"
        )
        return fallback

    def _render_ts(self, query: LabelQuery) -> str:
        if query.candidates:
            cand_lines = "\n".join(
                f"candidate: taxonomy={c.source_taxonomy} "
                f"overlap={_format_float(c.overlap)} label={c.label}"
                for c in query.candidates
            )
        else:
            cand_lines = "candidate: none"
        return render_prompt(
            self._templates["ts"],
            {
                "width": str(query.frame.width),
                "height": str(query.frame.height),
                "area_fraction": _format_float(query.area_fraction),
                "row_min": str(query.row_min),
                "row_max": str(query.row_max),
                "col_arc_start": str(query.col_arc_start),
                "col_arc_len": str(query.col_arc_len),
                "centroid_row": _format_float(query.centroid_row),
                "centroid_col": _format_float(query.centroid_col),
                "classes": "|".join(self.taxonomy.classes),
                "candidates": cand_lines,
            },
        )

    # -- blank-region kind -------------------------------------------------

    def classify_blank(
        self,
        region: BlankRegion,
        prev_instances: Sequence[InstanceSummary],
        dims: GridDims,
    ) -> str:
        """Classify an unannotated region as border, existing, or new."""

        prompt = self._render_tb(region, prev_instances, dims)
        for _attempt in range(2):
            reply = self.chat.complete(prompt)
            value = _reply_value(reply, "KIND")
            if value in BLANK_KINDS:
                return value
        fallback = (
            BLANK_BORDER
            if region.touches_left_border != region.touches_right_border
            else BLANK_NEW
        )
        self.escalations.append(
            "blank-kind: no usable reply for region at centroid="
            f"{_centroid_text(region.centroid_row, region.centroid_col)}; "
            f"fell back to {fallback!r}"
        )
        return fallback

    def _render_tb(
        self,
        region: BlankRegion,
        prev_instances: Sequence[InstanceSummary],
        dims: GridDims,
    ) -> str:
        if prev_instances:
            prev_lines = []
            for inst in prev_instances:
                p_row, p_col = centroid(inst.mask)
                prev_lines.append(
                    f"prev: id={inst.instance_id} "
                    f"centroid={_centroid_text(p_row, p_col)} "
                    f"area={inst.mask.area} label={inst.label}"
                )
            prev_text = "\n".join(prev_lines)
        else:
            prev_text = "prev: none"
        return render_prompt(
            self._templates["tb"],
            {
                "width": str(dims.width),
                "height": str(dims.height),
                "area": str(region.area),
                "centroid_row": _format_float(region.centroid_row),
                "centroid_col": _format_float(region.centroid_col),
                "touches_left": "1" if region.touches_left_border else "0",
                "touches_right": "1" if region.touches_right_border else "0",
                "prev": prev_text,
            },
        )

    # -- object retrieval --------------------------------------------------

    def retrieve_object(
        self,
        region: BlankRegion,
        prev_instances: Sequence[InstanceSummary],
        dims: GridDims,
    ) -> int | None:
        """Name the previous instance a lost region belongs to, if any."""

        scored = [
            (inst.instance_id, iou(region.mask, inst.mask)) for inst in prev_instances
        ]
        prompt = self._render_retriever(region, prev_instances, scored, dims)
        valid_ids = {inst.instance_id for inst in prev_instances}
        for _attempt in range(2):
            reply = self.chat.complete(prompt)
            value = _reply_value(reply, "OBJECT")
            if value == "none":
                return None
            if value is not None and value.isdigit() and int(value) in valid_ids:
                return int(value)
        best: tuple[float, int] | None = None
        for cid, value in scored:
            if value < RETRIEVE_FLOOR:
                continue
            if best is None or (-value, cid) < best:
                best = (-value, cid)
        fallback = None if best is None else best[1]
        self.escalations.append(
            "retrieve-object: no usable reply for region at centroid="
            f"{_centroid_text(region.centroid_row, region.centroid_col)}; "
            f"fell back to {fallback!r}"
        )
        return fallback

    def _render_retriever(
        self,
        region: BlankRegion,
        prev_instances: Sequence[InstanceSummary],
        scored: Sequence[tuple[int, float]],
        dims: GridDims,
    ) -> str:
        labels = {inst.instance_id: inst.label for inst in prev_instances}
        if scored:
            cand_lines = "\n".join(
                f"cand: id={cid} iou={_format_float(value)} label={labels[cid]}"
                for cid, value in scored
            )
        else:
            cand_lines = "cand: none"
        return render_prompt(
            self._templates["retriever"],
            {
                "width": str(dims.width),
                "height": str(dims.height),
                "area": str(region.area),
                "centroid_row": _format_float(region.centroid_row),
                "centroid_col": _format_float(region.centroid_col),
                "cands": cand_lines,
            },
        )

    # -- annotation review -------------------------------------------------

    def check_annotation(self, stats: Sequence[FrameStat], dims: GridDims) -> ReviewReport:
        """Score an annotated video and collect reported defects.

        There is no safe fallback for a quality report, so two
        unusable replies raise instead of guessing.
        """

        if not stats:
            raise AgentError("annotation review needs at least one frame")
        prompt = self._render_checker(stats, dims)
        last_error = "no reply"
        for _attempt in range(2):
            reply = self.chat.complete(prompt)
            try:
                return self._parse_review(reply)
            except AgentError as exc:
                last_error = str(exc)
        raise AgentError(f"annotation review failed after retry: {last_error}")

    def _render_checker(self, stats: Sequence[FrameStat], dims: GridDims) -> str:
        lines: list[str] = []
        for stat in stats:
            lines.append(
                f"frame: index={stat.frame_index} "
                f"coverage={_format_float(stat.coverage)}"
            )
            for inst_id, label, area in stat.instances:
                lines.append(
                    f"inst: frame={stat.frame_index} id={inst_id} area={area} "
                    f"label={label}"
                )
        return render_prompt(
            self._templates["checker"],
            {
                "frame_count": str(len(stats)),
                "width": str(dims.width),
                "height": str(dims.height),
                "frames": "\n".join(lines),
            },
        )

    def _parse_review(self, reply: str) -> ReviewReport:
        lines = [line for line in reply.splitlines() if line.strip()]
        if not lines or not lines[0].startswith("SCORE: "):
            raise AgentError("review reply does not start with a SCORE line")
        score = _parse_float(lines[0][len("SCORE: ") :], "score")
        if not 0.0 <= score <= 10.0:
            raise AgentError(f"review score {score!r} outside 0..10")
        issues: list[ReviewIssue] = []
        for line in lines[1:]:
            match = _ISSUE_RE.match(line)
            if not match:
                raise AgentError(f"unparseable review line {line!r}")
            issues.append(
                ReviewIssue(
                    frame_index=int(match.group(1)),
                    instance_id=int(match.group(2)),
                    kind=match.group(3),
                    comment=match.group(4),
                )
            )
        return ReviewReport(score=score, issues=tuple(issues))
