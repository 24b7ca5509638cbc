"""Command-line entry point for the annotation engine.

One executable drives the whole loop: admit raw frame directories,
annotate them against the configured model backends, re-check, serve or
exchange review bundles, score stores against references, and inspect
store health.  Results go to standard output, diagnostics to standard
error, and the exit code says how things ended: 0 for success, 1 for a
domain failure (bad input, store conflict, failed validation), 2 for
command-line misuse.

Settings come from an optional TOML file; repeated ``--set key=value``
flags override individual entries, so a file can hold the fixture wiring
while a sweep script varies one threshold.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import Config, apply_overrides, load_config
from .errors import ConfigError, PanoAnnoError, StoreError
from .mask import coverage_rate
from .metrics import j_and_f, score_store_video
from .pipeline import (
    annotate_video,
    export_review,
    import_revisions,
    ingest_video,
    refine_video,
)
from .store import Store

log = logging.getLogger("panoanno")


@dataclass(frozen=True)
class CliConfig:
    """The common flags every subcommand shares."""

    subcommand: str
    config_path: str | None
    overrides: tuple[str, ...]
    verbosity: int

    def load(self) -> Config:
        return apply_overrides(load_config(self.config_path), list(self.overrides))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="TOML settings file")
    parser.add_argument(
        "--set",
        dest="overrides",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override one settings entry (repeatable)",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="more logging on standard error (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panoanno",
        description="Annotation engine for equirectangular 360 video.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="admit raw frame directories")
    _add_common(p)
    p.add_argument("sources", nargs="+", metavar="DIR")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("annotate", help="run the automatic annotation phases")
    _add_common(p)
    p.add_argument(
        "--jobs",
        type=int,
        default=1,
        metavar="N",
        help="annotate up to N videos in parallel (one worker per video)",
    )
    p.add_argument(
        "targets",
        nargs="+",
        metavar="VIDEO",
        help="frame directory to ingest first, or the id of a stored video",
    )
    p.set_defaults(handler=cmd_annotate)

    p = sub.add_parser("refine", help="re-run the quality check")
    _add_common(p)
    p.add_argument("videos", nargs="+", metavar="VIDEO_ID")
    p.set_defaults(handler=cmd_refine)

    review = sub.add_parser("review", help="human review round trip")
    review_sub = review.add_subparsers(dest="review_command", required=True)

    p = review_sub.add_parser("serve", help="serve the review API")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument(
        "--ui-root",
        metavar="DIR",
        help="directory of static review frontend files to serve at /",
    )
    p.add_argument(
        "--lease-ttl",
        type=float,
        default=600.0,
        metavar="SECONDS",
        help="reviewer lease lifetime",
    )
    p.add_argument(
        "--allow-anonymous",
        action="store_true",
        help="serve without a bearer token (PANOANNO_API_TOKEN unset)",
    )
    p.set_defaults(handler=cmd_review_serve)

    p = review_sub.add_parser("export", help="write a review bundle")
    _add_common(p)
    p.add_argument("video", metavar="VIDEO_ID")
    p.add_argument("dest", metavar="DIR")
    p.set_defaults(handler=cmd_review_export)

    p = review_sub.add_parser("import", help="apply reviewed edits")
    _add_common(p)
    p.add_argument("video", metavar="VIDEO_ID")
    p.add_argument("source", metavar="DIR_OR_LOG")
    p.set_defaults(handler=cmd_review_import)

    p = sub.add_parser("metrics", help="score one store against a reference")
    _add_common(p)
    p.add_argument("pred", metavar="PRED_STORE")
    p.add_argument("ref", metavar="REF_STORE")
    p.add_argument("videos", nargs="*", metavar="VIDEO_ID")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("validate", help="check store invariants")
    _add_common(p)
    p.add_argument("--store", metavar="DIR", help="store root (default: settings)")
    p.add_argument("videos", nargs="*", metavar="VIDEO_ID")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("stats", help="print store distributions")
    _add_common(p)
    p.add_argument("--store", metavar="DIR", help="store root (default: settings)")
    p.add_argument("videos", nargs="*", metavar="VIDEO_ID")
    p.set_defaults(handler=cmd_stats)

    return parser


# ---------------------------------------------------------------------------
# subcommands


def _resolve_target(config: Config, store: Store, target: str) -> str:
    path = Path(target)
    if path.is_dir():
        return ingest_video(config, path, store).video_id
    if (store.video_dir(target) / "manifest").exists():
        return target
    raise StoreError(f"no frame directory or stored video named {target}")


def cmd_ingest(cli: CliConfig, args: argparse.Namespace) -> int:
    config = cli.load()
    store = Store(config.store_root)
    for source in args.sources:
        manifest = ingest_video(config, Path(source), store)
        print(
            f"ingested {manifest.video_id} frames={manifest.frame_count} "
            f"fps={manifest.fps!r}"
        )
    return 0


def cmd_annotate(cli: CliConfig, args: argparse.Namespace) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    config = cli.load()
    store = Store(config.store_root)
    ids: list[str] = []
    for target in args.targets:
        video_id = _resolve_target(config, store, target)
        if video_id not in ids:
            ids.append(video_id)
    log.info("annotating %d video(s) with %d worker(s)", len(ids), args.jobs)

    def run(video_id: str):
        return annotate_video(config, store, video_id)

    if args.jobs == 1:
        reports = [run(video_id) for video_id in ids]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(run, ids))
    for video_id, report in zip(ids, reports):
        print(
            f"annotated {video_id} score={report.score!r} "
            f"issues={len(report.issues)} digest={store.digest(video_id)}"
        )
    return 0


def cmd_refine(cli: CliConfig, args: argparse.Namespace) -> int:
    config = cli.load()
    store = Store(config.store_root)
    for video_id in args.videos:
        report = refine_video(config, store, video_id)
        print(
            f"checked {video_id} score={report.score!r} "
            f"issues={len(report.issues)}"
        )
    return 0


def cmd_review_serve(cli: CliConfig, args: argparse.Namespace) -> int:
    from . import service

    config = cli.load()
    token = os.environ.get(service.AUTH_TOKEN_ENV)
    if not token and not args.allow_anonymous:
        raise ConfigError(
            f"refusing to serve without {service.AUTH_TOKEN_ENV}; "
            f"set it or pass --allow-anonymous"
        )
    ui_root = None
    if args.ui_root is not None:
        ui_root = Path(args.ui_root)
        if not ui_root.is_dir():
            raise ConfigError(f"--ui-root {args.ui_root} is not a directory")
    app = service.make_app(
        config,
        Store(config.store_root),
        auth_token=token or None,
        lease_ttl_seconds=args.lease_ttl,
        ui_root=ui_root,
    )
    log.info("serving on %s:%d", args.host, args.port)
    service.serve(app, args.host, args.port)
    return 0


def cmd_review_export(cli: CliConfig, args: argparse.Namespace) -> int:
    config = cli.load()
    store = Store(config.store_root)
    out = export_review(config, store, args.video, Path(args.dest))
    print(f"exported {args.video} {out}")
    return 0


def cmd_review_import(cli: CliConfig, args: argparse.Namespace) -> int:
    config = cli.load()
    store = Store(config.store_root)
    applied = import_revisions(config, store, args.video, Path(args.source))
    print(f"imported {args.video} applied={applied}")
    return 0


def cmd_metrics(cli: CliConfig, args: argparse.Namespace) -> int:
    pred_store = Store(args.pred)
    ref_store = Store(args.ref)
    ids = args.videos or ref_store.video_ids()
    try:
        rows = [
            (vid, score_store_video(pred_store, ref_store, vid)) for vid in ids
        ]
        j, f, jf = j_and_f(pred_store, ref_store, ids)
    except ValueError as exc:
        raise StoreError(str(exc)) from exc
    width = max([len("video"), len("mean")] + [len(vid) for vid in ids])
    print(f"{'video':<{width}}  {'J':>6}  {'F':>6}  {'J&F':>6}")
    for vid, scores in rows:
        print(
            f"{vid:<{width}}  {scores.j:>6.3f}  {scores.f:>6.3f}  "
            f"{scores.jf:>6.3f}"
        )
    print(f"{'mean':<{width}}  {j:>6.3f}  {f:>6.3f}  {jf:>6.3f}")
    return 0


def _store_for(cli: CliConfig, args: argparse.Namespace) -> Store:
    if args.store is not None:
        return Store(args.store)
    return Store(cli.load().store_root)


def cmd_validate(cli: CliConfig, args: argparse.Namespace) -> int:
    store = _store_for(cli, args)
    ids = args.videos or store.video_ids()
    failures = 0
    for video_id in ids:
        problems = store.validate(video_id)
        if problems:
            failures += 1
            print(f"invalid {video_id} problems={len(problems)}")
            for problem in problems:
                print(f"  {problem}", file=sys.stderr)
        else:
            print(f"ok {video_id}")
    if failures:
        print(f"error: {failures} video(s) failed validation", file=sys.stderr)
        return 1
    return 0


def cmd_stats(cli: CliConfig, args: argparse.Namespace) -> int:
    store = _store_for(cli, args)
    ids = args.videos or store.video_ids()
    print(f"videos {len(ids)}")
    label_counts: dict[str, int] = {}
    coverage_lines = []
    for video_id in ids:
        try:
            labels = store.instances(video_id)
        except StoreError:
            labels = {}
        print(f"instances {video_id} {len(labels)}")
        for label in labels.values():
            label_counts[label] = label_counts.get(label, 0) + 1
        manifest = store.manifest(video_id)
        rates = [
            coverage_rate(
                [e.mask for e in store.read_frame(video_id, index)],
                manifest.dims,
            )
            for index in store.frame_indices(video_id)
        ]
        if rates:
            coverage_lines.append(
                f"coverage {video_id} mean={sum(rates) / len(rates):.6f} "
                f"min={min(rates):.6f} max={max(rates):.6f}"
            )
    for label in sorted(label_counts):
        print(f"label {label} {label_counts[label]}")
    for line in coverage_lines:
        print(line)
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on misuse, 0 on --help
        return int(exc.code or 0)
    cli = CliConfig(
        subcommand=args.subcommand,
        config_path=getattr(args, "config", None),
        overrides=tuple(getattr(args, "overrides", ())),
        verbosity=getattr(args, "verbose", 0),
    )
    level = (
        logging.WARNING
        if cli.verbosity == 0
        else logging.INFO
        if cli.verbosity == 1
        else logging.DEBUG
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s")
    try:
        return args.handler(cli, args)
    except PanoAnnoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
