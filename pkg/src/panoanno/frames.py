"""Raster frame IO: binary PPM (P6), plus the frame-directory layout.

A video's frames live under <frames_root>/<video_id>/ as zero-padded
6-digit indices (000000.ppm, 000001.ppm, ...) next to a small `meta` text
file (currently just `fps <value>`).  PPM is the one raster format the
engine writes; readers accept any file the configured backends can see,
the manifest records which format a video uses.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import IngestError

FRAME_NAME_RE = re.compile(r"^(\d{6})\.ppm$")


def write_ppm(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise IngestError(f"PPM wants (H, W, 3) uint8, got shape {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _read_header(fh) -> tuple[int, int]:
    def token():
        # whitespace-separated tokens, '#' comments to end of line
        out = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise IngestError("truncated PPM header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = fh.read(1)
                continue
            if ch.isspace():
                if out:
                    return out
                continue
            out += ch

    if token() != b"P6":
        raise IngestError("not a binary PPM (P6) file")
    w, h, maxval = int(token()), int(token()), int(token())
    if maxval != 255:
        raise IngestError(f"unsupported PPM maxval {maxval}")
    if w < 1 or h < 1:
        raise IngestError(f"degenerate PPM {w}x{h}")
    return w, h


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_header(fh)
        data = fh.read(w * h * 3)
        if len(data) != w * h * 3:
            raise IngestError(f"truncated PPM payload in {path}")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm_dims(path) -> tuple[int, int]:
    """(width, height) from the header alone."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def frame_path(frames_root, video_id: str, index: int) -> Path:
    return Path(frames_root) / video_id / f"{index:06d}.ppm"


def list_frames(frames_root, video_id: str) -> list[Path]:
    """Frame files in index order; gaps are an error."""
    vdir = Path(frames_root) / video_id
    if not vdir.is_dir():
        raise IngestError(f"no frame directory for video {video_id!r}")
    found = sorted(
        p for p in vdir.iterdir() if FRAME_NAME_RE.match(p.name)
    )
    for i, p in enumerate(found):
        if int(FRAME_NAME_RE.match(p.name).group(1)) != i:
            raise IngestError(f"frame files of {video_id!r} are not contiguous")
    return found


def read_meta_fps(video_dir, default: float | None = None) -> float:
    """fps from the `meta` file next to the frames."""
    meta = Path(video_dir) / "meta"
    if not meta.is_file():
        if default is None:
            raise IngestError(f"no meta file in {video_dir}")
        return default
    for line in meta.read_text("ascii").splitlines():
        if line.startswith("fps "):
            try:
                fps = float(line[4:])
            except ValueError as exc:
                raise IngestError(f"bad fps in {meta}") from exc
            if fps <= 0:
                raise IngestError(f"non-positive fps in {meta}")
            return fps
    if default is None:
        raise IngestError(f"meta file {meta} has no fps line")
    return default


def write_meta(video_dir, fps: float) -> None:
    (Path(video_dir) / "meta").write_text(f"fps {fps!r}\n", "ascii")
