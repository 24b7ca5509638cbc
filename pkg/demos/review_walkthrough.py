#!/usr/bin/env python3
"""Drive the review HTTP API end to end against a freshly annotated scene.

The scene scripts an occlusion: a walker disappears behind a pillar and
re-emerges, so the automatic check files an issue worth a human look.
The walkthrough then exercises the whole review contract over HTTP:

    browse -> acquire the edit lease -> watch a second reviewer get
    refused -> append revision records -> resolve the issue -> finalize

Everything runs in-process via the test client; point the same calls at
`panoanno review serve` for the real thing.
"""

import io
import contextlib
import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from panoanno import synth
from panoanno.cli import main
from panoanno.config import load_config
from panoanno.service import make_app
from panoanno.store import Revision, Store, serialize_revision

TOKEN = "demo-secret"


def pretty(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def step(title: str) -> None:
    print(f"\n=== {title} ===")


def main_demo() -> None:
    work = Path(tempfile.mkdtemp(prefix="panoanno-review-"))
    print(f"working under {work}")

    scn = synth.scene("occlusion")
    paths = synth.write_scene(scn, work)
    toml = work / "run.toml"
    toml.write_text(
        synth.run_config_text(scn, paths, work / "store", work / "frames"),
        encoding="ascii",
    )
    with contextlib.redirect_stdout(io.StringIO()):
        code = main(["annotate", "--config", str(toml), str(paths.video_dir)])
    if code != 0:
        sys.exit(f"annotate failed with exit code {code}")
    print(f"annotated '{scn.name}' ({scn.frame_count} frames)")

    config = load_config(toml)
    store = Store(config.store_root)
    app = make_app(config, store, auth_token=TOKEN)
    auth = {"Authorization": f"Bearer {TOKEN}"}

    with TestClient(app) as web:
        step("no token, no entry")
        r = web.get("/api/videos")
        print(f"GET /api/videos without a token -> {r.status_code} {r.json()}")

        step("browse")
        summary = web.get(f"/api/videos/{scn.name}", headers=auth).json()
        print(pretty(summary))
        report = web.get(f"/api/videos/{scn.name}/report", headers=auth).json()
        print("report issues:")
        print(pretty(report["issues"]))

        step("acquire the edit lease")
        lease = web.post(
            f"/api/videos/{scn.name}/lease",
            headers=auth, json={"reviewer": "ada"},
        ).json()
        print(pretty({k: lease[k] for k in ("reviewer", "expires_in")}))
        editing = {**auth, "x-lease-token": lease["token"]}

        step("a second reviewer is refused while the lease is held")
        r = web.post(
            f"/api/videos/{scn.name}/lease",
            headers=auth, json={"reviewer": "grace"},
        )
        print(f"-> {r.status_code} {r.json()}")

        step("append revision records")
        walker_id = next(
            int(k) for k, v in summary["instances"].items() if v != "wall"
        )
        seq = summary["revisions"] + 1
        rec = serialize_revision(Revision(
            seq=seq, op="relabel", instance_id=walker_id, label="night walker",
        ))
        r = web.post(
            f"/api/videos/{scn.name}/revisions",
            headers=editing, json={"sequence": seq, "revision": rec},
        )
        print(f"relabel instance {walker_id} -> {r.status_code} {r.json()}")
        r = web.post(          # idempotent retry: same record, same sequence
            f"/api/videos/{scn.name}/revisions",
            headers=editing, json={"sequence": seq, "revision": rec},
        )
        print(f"retrying the same record -> {r.status_code} {r.json()}")

        step("resolve the flagged issue")
        idx = report["issues"][0]["index"]
        r = web.post(
            f"/api/videos/{scn.name}/issues/{idx}/resolve", headers=editing,
        )
        print(f"-> {r.status_code}")
        print(pretty(r.json()["issues"]))

        step("finalize")
        r = web.post(
            f"/api/videos/{scn.name}/finalize",
            headers=editing, json={"override": False},
        )
        print(f"-> {r.status_code} {r.json()}")

        step("release the lease")
        r = web.delete(f"/api/videos/{scn.name}/lease", headers=editing)
        print(f"-> {r.status_code} {r.json()}")

    step("what landed on disk")
    log = (store.video_dir(scn.name) / "revisions.log").read_text("ascii")
    print(log.rstrip("\n"))
    print(f"\nstatus: {store.manifest(scn.name).status}")
    print(f"digest: {store.digest(scn.name)}")
    print(f"replaying the log reapplies {store.replay(scn.name)} revision(s); "
          f"digest unchanged: {store.digest(scn.name)}")


if __name__ == "__main__":
    main_demo()
