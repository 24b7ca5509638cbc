"""HTTP review API over an annotation store.

The server exposes committed store state to browser clients and funnels
their edits back through the sequenced revision log.  Reads never require
coordination: every store file is replaced atomically, so a reader sees
either the previous committed version or the next one, never a torn write.
Mutations require two things: a per-video reviewer lease (so two people
cannot edit the same video at once) and the store's on-disk lock (so a
server-side edit also serializes against command-line runs).

Payloads are JSON with sorted keys and fixed separators, embedding the
store's own text serializations verbatim; identical stores therefore
produce byte-identical response bodies.
"""

from __future__ import annotations

import base64
import hmac
import json
import secrets
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from fastapi import Depends, FastAPI, Request, Response
from fastapi.exceptions import HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import Config
from .errors import RevisionError, StoreError
from .frames import frame_path
from .store import Report, Store, parse_revision

DEFAULT_LEASE_TTL_SECONDS = 600.0
BLOCKING_ISSUE_KINDS = ("missing", "wrong_label")

AUTH_TOKEN_ENV = "PANOANNO_API_TOKEN"
LEASE_HEADER = "x-lease-token"


@dataclass(frozen=True)
class ApiSession:
    """One reviewer's exclusive hold on a video."""

    video_id: str
    reviewer: str
    token: str
    expires_at: float


class LeaseConflict(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)


class LeaseTable:
    """In-process per-video reviewer leases.

    A video has at most one active lease.  An expired lease is dead weight:
    anyone may claim the video afterwards.  Holding the token renews the
    lease; acquiring without it while someone else's lease is live is a
    conflict, and that includes a second tab of the same reviewer — the
    token, not the name, is the capability.
    """

    def __init__(
        self,
        ttl_seconds: float = DEFAULT_LEASE_TTL_SECONDS,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        if not ttl_seconds > 0:
            raise ValueError("lease ttl must be positive")
        self._ttl = ttl_seconds
        self._clock = clock
        self._mutex = threading.Lock()
        self._leases: dict[str, ApiSession] = {}

    def _active(self, video_id: str) -> ApiSession | None:
        session = self._leases.get(video_id)
        if session is not None and session.expires_at > self._clock():
            return session
        return None

    def holder(self, video_id: str) -> ApiSession | None:
        with self._mutex:
            return self._active(video_id)

    def acquire(
        self, video_id: str, reviewer: str, token: str | None = None
    ) -> ApiSession:
        with self._mutex:
            current = self._active(video_id)
            expires = self._clock() + self._ttl
            if current is not None:
                if token != current.token:
                    raise LeaseConflict(
                        f"video {video_id} is leased to {current.reviewer}"
                    )
                session = replace(current, reviewer=reviewer, expires_at=expires)
            else:
                session = ApiSession(
                    video_id=video_id,
                    reviewer=reviewer,
                    token=secrets.token_hex(16),
                    expires_at=expires,
                )
            self._leases[video_id] = session
            return session

    def release(self, video_id: str, token: str | None) -> bool:
        with self._mutex:
            current = self._active(video_id)
            if current is None or token != current.token:
                return False
            del self._leases[video_id]
            return True

    def require(self, video_id: str, token: str | None) -> ApiSession:
        with self._mutex:
            current = self._active(video_id)
            if current is None:
                raise LeaseConflict(f"no active lease on video {video_id}")
            if token != current.token:
                raise LeaseConflict(
                    f"video {video_id} is leased to {current.reviewer}"
                )
            return current

    def remaining(self, session: ApiSession) -> float:
        return max(0.0, session.expires_at - self._clock())


def _json(payload, status_code: int = 200) -> Response:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
    return Response(
        content=body, status_code=status_code, media_type="application/json"
    )


class _LeaseBody(BaseModel):
    reviewer: str


class _RevisionBody(BaseModel):
    sequence: int
    revision: str


class _FinalizeBody(BaseModel):
    override: bool = False


def _report_payload(video_id: str, report: Report) -> dict:
    return {
        "video_id": video_id,
        "score": report.score,
        "issues": [
            {
                "index": position,
                "frame_index": issue.frame_index,
                "instance_id": issue.instance_id,
                "kind": issue.kind,
                "status": issue.status,
                "comment": issue.comment,
            }
            for position, issue in enumerate(report.issues)
        ],
    }


def make_app(
    config: Config,
    store: Store | None = None,
    *,
    auth_token: str | None = None,
    lease_ttl_seconds: float = DEFAULT_LEASE_TTL_SECONDS,
    ui_root: str | Path | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> FastAPI:
    """Build the review application for one store.

    ``auth_token`` of None serves anonymously; otherwise every request must
    carry ``Authorization: Bearer <token>``.  ``ui_root``, when given, is a
    directory of static files mounted at the site root (the API lives under
    ``/api`` either way).  ``clock`` feeds the lease table and exists so
    tests can steer expiry.
    """

    if store is None:
        store = Store(config.store_root)
    leases = LeaseTable(lease_ttl_seconds, clock)
    app = FastAPI(title="panoanno review", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.leases = leases

    @app.exception_handler(HTTPException)
    async def _http_error(request: Request, exc: HTTPException) -> Response:
        return _json({"error": str(exc.detail)}, exc.status_code)

    def check_auth(request: Request) -> None:
        if auth_token is None:
            return
        supplied = request.headers.get("authorization", "")
        expected = f"Bearer {auth_token}"
        if not hmac.compare_digest(supplied, expected):
            raise HTTPException(401, "missing or wrong bearer token")

    authed = Depends(check_auth)

    def manifest_of(video_id: str):
        try:
            return store.manifest(video_id)
        except StoreError as exc:
            raise HTTPException(404, f"unknown video {video_id}") from exc

    def lease_token(request: Request) -> str | None:
        return request.headers.get(LEASE_HEADER)

    def require_lease(video_id: str, request: Request) -> ApiSession:
        try:
            return leases.require(video_id, lease_token(request))
        except LeaseConflict as exc:
            raise HTTPException(409, str(exc)) from exc

    def summary(video_id: str) -> dict:
        manifest = store.manifest(video_id)
        payload = {
            "video_id": video_id,
            "status": manifest.status,
            "frame_count": manifest.frame_count,
            "fps": manifest.fps,
            "width": manifest.dims.width,
            "height": manifest.dims.height,
            "image_format": manifest.image_format,
            "config_digest": manifest.config_digest,
            "revisions": len(store.revisions(video_id)),
            "instances": {},
            "score": None,
            "open_issues": None,
        }
        try:
            labels = store.instances(video_id)
        except StoreError:
            labels = {}
        payload["instances"] = {str(k): labels[k] for k in sorted(labels)}
        try:
            report = store.read_report(video_id)
        except StoreError:
            return payload
        payload["score"] = report.score
        payload["open_issues"] = sum(1 for i in report.issues if i.status == "open")
        return payload

    # -- reads ----------------------------------------------------------------

    @app.get("/api/videos", dependencies=[authed])
    def list_videos() -> Response:
        return _json({"videos": [summary(vid) for vid in store.video_ids()]})

    @app.get("/api/videos/{video_id}", dependencies=[authed])
    def get_video(video_id: str) -> Response:
        manifest_of(video_id)
        return _json(summary(video_id))

    @app.get("/api/videos/{video_id}/frames/{index}", dependencies=[authed])
    def get_frame(video_id: str, index: int) -> Response:
        manifest = manifest_of(video_id)
        if not 0 <= index < manifest.frame_count:
            raise HTTPException(404, f"frame {index} outside the video")
        raster = frame_path(config.frames_root, video_id, index)
        try:
            image = raster.read_bytes()
        except OSError as exc:
            raise HTTPException(404, f"no raster for frame {index}") from exc
        try:
            annotation = (
                store.video_dir(video_id) / "frames" / f"{index:06d}.ann"
            ).read_text(encoding="ascii")
        except OSError:
            annotation = None
        return _json(
            {
                "video_id": video_id,
                "frame_index": index,
                "image_format": manifest.image_format,
                "image_base64": base64.b64encode(image).decode("ascii"),
                "annotation": annotation,
            }
        )

    @app.get("/api/videos/{video_id}/report", dependencies=[authed])
    def get_report(video_id: str) -> Response:
        manifest_of(video_id)
        try:
            report = store.read_report(video_id)
        except StoreError as exc:
            raise HTTPException(404, str(exc)) from exc
        return _json(_report_payload(video_id, report))

    @app.get("/api/videos/{video_id}/revisions", dependencies=[authed])
    def get_revisions(video_id: str) -> Response:
        manifest_of(video_id)
        texts = [
            store.revision_text(video_id, rev.seq)
            for rev in store.revisions(video_id)
        ]
        return _json(
            {"video_id": video_id, "count": len(texts), "revisions": texts}
        )

    # -- leases ---------------------------------------------------------------

    @app.get("/api/videos/{video_id}/lease", dependencies=[authed])
    def get_lease(video_id: str) -> Response:
        manifest_of(video_id)
        session = leases.holder(video_id)
        if session is None:
            return _json({"video_id": video_id, "held": False})
        return _json(
            {
                "video_id": video_id,
                "held": True,
                "reviewer": session.reviewer,
                "expires_in": leases.remaining(session),
            }
        )

    @app.post("/api/videos/{video_id}/lease", dependencies=[authed])
    def acquire_lease(video_id: str, body: _LeaseBody, request: Request) -> Response:
        manifest_of(video_id)
        try:
            session = leases.acquire(video_id, body.reviewer, lease_token(request))
        except LeaseConflict as exc:
            raise HTTPException(409, str(exc)) from exc
        return _json(
            {
                "video_id": video_id,
                "reviewer": session.reviewer,
                "token": session.token,
                "expires_in": leases.remaining(session),
            }
        )

    @app.delete("/api/videos/{video_id}/lease", dependencies=[authed])
    def release_lease(video_id: str, request: Request) -> Response:
        manifest_of(video_id)
        released = leases.release(video_id, lease_token(request))
        return _json({"video_id": video_id, "released": released})

    # -- mutations ------------------------------------------------------------

    @app.post("/api/videos/{video_id}/revisions", dependencies=[authed])
    def post_revision(
        video_id: str, body: _RevisionBody, request: Request
    ) -> Response:
        manifest_of(video_id)
        require_lease(video_id, request)
        try:
            revision = parse_revision(body.revision)
        except RevisionError as exc:
            raise HTTPException(400, f"bad revision record: {exc}") from exc
        if revision.seq != body.sequence:
            raise HTTPException(
                400,
                f"record says sequence {revision.seq}, request says {body.sequence}",
            )
        try:
            with store.lock(video_id):
                existing = store.revision_text(video_id, body.sequence)
                if existing is not None:
                    if existing == body.revision:
                        return _json(
                            {
                                "video_id": video_id,
                                "sequence": body.sequence,
                                "applied": False,
                            }
                        )
                    raise HTTPException(
                        409,
                        f"a different revision already holds sequence "
                        f"{body.sequence}",
                    )
                committed = len(store.revisions(video_id))
                if body.sequence != committed + 1:
                    raise HTTPException(
                        409,
                        f"stale sequence {body.sequence}: the log is at "
                        f"{committed}",
                    )
                store.append_revision(video_id, revision)
        except RevisionError as exc:
            raise HTTPException(400, str(exc)) from exc
        except StoreError as exc:
            raise HTTPException(409, str(exc)) from exc
        return _json(
            {"video_id": video_id, "sequence": body.sequence, "applied": True}
        )

    @app.post(
        "/api/videos/{video_id}/issues/{index}/resolve", dependencies=[authed]
    )
    def resolve_issue(video_id: str, index: int, request: Request) -> Response:
        manifest_of(video_id)
        require_lease(video_id, request)
        try:
            with store.lock(video_id):
                report = store.resolve_issue(video_id, index)
        except StoreError as exc:
            status = 404 if "no issue" in str(exc) else 409
            raise HTTPException(status, str(exc)) from exc
        return _json(_report_payload(video_id, report))

    @app.post("/api/videos/{video_id}/finalize", dependencies=[authed])
    def finalize(video_id: str, body: _FinalizeBody, request: Request) -> Response:
        manifest = manifest_of(video_id)
        require_lease(video_id, request)
        if manifest.status not in ("checked", "finalized"):
            raise HTTPException(
                409, f"video {video_id} is {manifest.status}, not checked"
            )
        try:
            with store.lock(video_id):
                report = store.read_report(video_id)
                blocking = [
                    issue
                    for issue in report.issues
                    if issue.status == "open"
                    and issue.kind in BLOCKING_ISSUE_KINDS
                ]
                if blocking and not body.override:
                    raise HTTPException(
                        409,
                        f"{len(blocking)} unresolved blocking issue(s); "
                        f"resolve them or pass override",
                    )
                store.set_status(video_id, "finalized")
        except StoreError as exc:
            raise HTTPException(409, str(exc)) from exc
        return _json({"video_id": video_id, "status": "finalized"})

    if ui_root is not None:
        app.mount("/", StaticFiles(directory=ui_root, html=True), name="ui")
    return app


def serve(
    app: FastAPI, host: str = "127.0.0.1", port: int = 8008
) -> None:  # pragma: no cover - exercised manually via the command line
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
