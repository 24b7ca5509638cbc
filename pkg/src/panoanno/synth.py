"""Synthetic panoramic scenes: world fixtures, rasters, and run configs.

Each scene is a small moving-shape world on a horizontally wrapped
canvas.  From one scene description this module derives all three
artefacts a full engine run needs, guaranteed mutually consistent:

* a world fixture file the mock segmentation/tracking backends answer
  from,
* optionally a corrupted-tracker fixture layered on top of it (scripted
  mask drops, seam-blind clipping),
* the rendered frame rasters plus a ready-to-use run configuration.

``col_shift`` rotates an entire scene around the panorama, which is how
the rotation-equivariance checks build their rotated twins: rendering a
shifted scene equals rolling the base scene's rasters column-wise.

The bundled scenes are sized so their coverage-gate arithmetic is exact
(canvas areas, blank fractions, and the 0.972 coverage threshold in the
generated config are chosen together); the comments on each scene spell
the arithmetic out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backends import GeometricBackend
from .errors import ConfigError
from .frames import write_meta, write_ppm
from .mask import GridDims, decode

__all__ = [
    "SCENE_NAMES",
    "Scene",
    "SceneShape",
    "ScenePaths",
    "fixture_text",
    "render_frame",
    "run_config_text",
    "scene",
    "tracker_text",
    "write_scene",
]

SCENE_NAMES = ("static", "deer", "occlusion", "seamx")

#: Coverage threshold the bundled scenes are calibrated against.
SCENE_COVERAGE_THRESHOLD = 0.972

_BACKGROUND = (24, 26, 30)


@dataclass(frozen=True)
class SceneShape:
    sid: str
    z: int
    kind: str  # rect | ellipse
    row: int
    col: int
    h: int
    w: int
    label: str
    color: tuple[int, int, int]
    drow: int = 0
    dcol: int = 0
    appear: int = 0
    vanish: int = -1  # -1: never


@dataclass(frozen=True)
class Scene:
    name: str
    width: int
    height: int
    frame_count: int
    fps: float
    shapes: tuple[SceneShape, ...]
    tracker_rules: tuple[str, ...] = ()

    @property
    def dims(self) -> GridDims:
        return GridDims(self.width, self.height, True)


def _wall(width: int, height: int) -> SceneShape:
    return SceneShape(
        sid="wall",
        z=0,
        kind="rect",
        row=0,
        col=0,
        h=height,
        w=width,
        label="wall",
        color=(90, 96, 104),
    )


def _static_scene() -> Scene:
    # Nothing moves and the wall spans the whole canvas, so coverage is
    # 1.0 at every frame: the plain-propagation baseline.
    return Scene(
        name="static",
        width=512,
        height=256,
        frame_count=12,
        fps=2.0,
        shapes=(
            _wall(512, 256),
            SceneShape("boulder", 1, "ellipse", 36, 40, 60, 72, "rock", (140, 134, 126)),
            SceneShape("table", 2, "rect", 120, 300, 70, 90, "table", (150, 106, 70)),
            SceneShape("rug", 3, "rect", 180, 96, 60, 160, "rug", (120, 60, 70)),
        ),
    )


def _deer_scene() -> Scene:
    # A 96x96 walker crosses the seam under a seam-blind tracker that
    # keeps only the flat piece overlapping its first-frame prompt, so
    # the wrapped-around sliver goes missing.  Canvas 512x256 = 131072
    # px; the lost sliver is 8t-16 columns x 96 rows, reaching fraction
    # 40*96/131072 = 0.0293 >= 1-0.972 first at t=7 (t=6 gives 0.0234).
    # The scripted drop at t=11 then loses the whole walker (fraction
    # 0.0703) after it has fully wrapped, exercising the lost-object
    # path; re-tracking from t>=11 is clean.
    return Scene(
        name="deer",
        width=512,
        height=256,
        frame_count=14,
        fps=2.0,
        shapes=(
            _wall(512, 256),
            SceneShape(
                "deer", 1, "rect", 80, 400, 96, 96, "deer", (205, 170, 110), dcol=8
            ),
        ),
        tracker_rules=(
            "rule clipwrap track=deer when-prompt-before=1",
            "rule drop track=deer frames=11..11 when-prompt-before=11",
        ),
    )


def _occlusion_scene() -> Scene:
    # A 64x64 walker (4096 px = 0.03125 of the canvas) passes behind a
    # wide column.  Its track ends at the vanish frame, and an identical
    # walker emerges on the far side at t=8: slivers of 16 and 40
    # columns first (fractions 0.0078 and 0.0195, both below the 0.028
    # gate slack), fully visible at t=10 (0.03125, above it) - so the
    # re-appearance is annotated as a fresh instance at exactly t=10.
    walker = dict(kind="rect", row=100, col=40, h=64, w=64, dcol=24)
    return Scene(
        name="occlusion",
        width=512,
        height=256,
        frame_count=14,
        fps=2.0,
        shapes=(
            _wall(512, 256),
            SceneShape(
                "walker-out", 1, label="person", color=(210, 170, 140),
                appear=8, **walker,
            ),
            SceneShape(
                "walker-in", 2, label="person", color=(210, 170, 140),
                vanish=7, **walker,
            ),
            SceneShape(
                "pillar", 3, "rect", 40, 200, 176, 80, "column", (160, 160, 170)
            ),
        ),
    )


def _seamx_scene() -> Scene:
    # Full-resolution seam crosser for the rotation-equivariance runs.
    # The tracker drops the walker's mask at t=6 only (2048x1024 canvas
    # = 2097152 px; the 384x384 = 147456 px hole is fraction 0.0703),
    # and the drop is frame-addressed, so the failure - unlike a
    # seam-anchored one - rotates with the scene.  At t=6 the walker
    # straddles the seam in the base scene and sits mid-frame in its
    # half-turn rotation; both must repair identically up to rotation.
    return Scene(
        name="seamx",
        width=2048,
        height=1024,
        frame_count=10,
        fps=2.0,
        shapes=(
            _wall(2048, 1024),
            SceneShape(
                "crosser", 1, "rect", 320, 1600, 384, 384, "deer",
                (205, 170, 110), dcol=32,
            ),
        ),
        tracker_rules=("rule drop track=crosser frames=6..6 when-prompt-before=6",),
    )


_BUILDERS = {
    "static": _static_scene,
    "deer": _deer_scene,
    "occlusion": _occlusion_scene,
    "seamx": _seamx_scene,
}


def scene(name: str, col_shift: int = 0) -> Scene:
    """A bundled scene, optionally rotated east by ``col_shift`` columns."""

    try:
        base = _BUILDERS[name]()
    except KeyError:
        raise ConfigError(f"unknown scene {name!r}") from None
    if col_shift % base.width == 0:
        return base
    shapes = tuple(
        replace(s, col=(s.col + col_shift) % base.width) for s in base.shapes
    )
    return replace(base, shapes=shapes)


# ---------------------------------------------------------------------------
# fixture files


def fixture_text(scn: Scene) -> str:
    lines = [
        "geometric-fixture v1",
        f"canvas {scn.width} {scn.height} wrap1",
    ]
    for s in scn.shapes:
        parts = [
            f"shape id={s.sid} z={s.z} kind={s.kind}",
            f"row={s.row} col={s.col} h={s.h} w={s.w}",
        ]
        if s.drow or s.dcol:
            parts.append(f"drow={s.drow} dcol={s.dcol}")
        if s.appear:
            parts.append(f"appear={s.appear}")
        if s.vanish >= 0:
            parts.append(f"vanish={s.vanish}")
        parts.append(f"label={s.label.replace(' ', '_')}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def tracker_text(scn: Scene, base_name: str) -> str | None:
    """Corrupted-tracker fixture wrapping the world file, if the scene
    scripts any tracker failures."""

    if not scn.tracker_rules:
        return None
    lines = ["adversarial-fixture v1", f"base geometric {base_name}"]
    lines.extend(scn.tracker_rules)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# rendering


def render_frame(scn: Scene, world: GeometricBackend, t: int) -> np.ndarray:
    """Rasterize frame ``t`` from the same world model the mock backends
    answer from, so rasters and mock annotations can never disagree."""

    img = np.empty((scn.height, scn.width, 3), dtype=np.uint8)
    img[:, :] = _BACKGROUND
    colors = {s.sid: s.color for s in scn.shapes}
    for shape in world.shapes:
        if not world.present(shape, t):
            continue
        visible = world.visible(shape, t)
        if visible.is_empty():
            continue
        img[decode(visible)] = colors[shape.sid]
    return img


# ---------------------------------------------------------------------------
# writing a runnable bundle


@dataclass(frozen=True)
class ScenePaths:
    world: Path
    tracker: Path  # == world when the scene scripts no tracker failures
    video_dir: Path


def write_scene(scn: Scene, root: str | Path) -> ScenePaths:
    """Materialize fixture files and rendered frames under ``root``.

    Layout: ``fixtures/<name>.txt``, ``fixtures/<name>-tracker.txt``
    (only when scripted failures exist), and ``videos/<name>/`` with
    PPM frames and a meta file.  The video directory name doubles as the
    video id at ingest.
    """

    root = Path(root)
    fixtures = root / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)
    world_path = fixtures / f"{scn.name}.txt"
    world_path.write_text(fixture_text(scn), encoding="ascii")

    tracker_path = world_path
    corrupted = tracker_text(scn, world_path.name)
    if corrupted is not None:
        tracker_path = fixtures / f"{scn.name}-tracker.txt"
        tracker_path.write_text(corrupted, encoding="ascii")

    world = GeometricBackend(world_path)
    video_dir = root / "videos" / scn.name
    video_dir.mkdir(parents=True, exist_ok=True)
    for t in range(scn.frame_count):
        write_ppm(video_dir / f"{t:06d}.ppm", render_frame(scn, world, t))
    write_meta(video_dir, scn.fps)
    return ScenePaths(world=world_path, tracker=tracker_path, video_dir=video_dir)


def run_config_text(
    scn: Scene,
    paths: ScenePaths,
    store_root: str | Path,
    frames_root: str | Path,
    coverage_threshold: float = SCENE_COVERAGE_THRESHOLD,
) -> str:
    """A complete TOML run configuration for one materialized scene."""

    tracker_family = "adversarial" if paths.tracker != paths.world else "geometric"
    return (
        f'store_root = "{store_root}"\n'
        f'frames_root = "{frames_root}"\n'
        "\n"
        "[pipeline]\n"
        f"coverage_threshold = {coverage_threshold}\n"
        "\n"
        "[ingest]\n"
        f"width = {scn.width}\n"
        f"height = {scn.height}\n"
        "\n"
        "[agents]\n"
        'url = "mock:rules"\n'
        "\n"
        "[[backends]]\n"
        'id = "ent0"\n'
        'role = "entity"\n'
        f'url = "mock:geometric:{paths.world}"\n'
        "\n"
        "[[backends]]\n"
        'id = "pan0"\n'
        'role = "panoptic"\n'
        f'url = "mock:geometric:{paths.world}"\n'
        "\n"
        "[[backends]]\n"
        'id = "trk0"\n'
        'role = "tracker"\n'
        f'url = "mock:{tracker_family}:{paths.tracker}"\n'
    )
