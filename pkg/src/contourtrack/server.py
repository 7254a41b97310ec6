"""HTTP service backing the browser labeling tool.

Frames, masks, and contours are read-only; only labels.csv is writable.
Label writes are optimistic: every response carries a version token (hash
of the current labels.csv) and a PUT with a stale token gets a 409 along
with the current state, so nothing is silently overwritten. Writes go
through a temp file and an atomic rename, serialized per video.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .errors import ContourTrackError, EmptyMaskError
from .evaluation import MAX_LABEL_POINTS, SparseLabels
from .geometry import extract_contour


def _token(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


class VideoStore:
    """Filesystem view over a directory of video directories."""

    def __init__(self, root):
        self.root = Path(root)
        if (self.root / "frames").is_dir():
            dirs = [self.root]
        else:
            dirs = sorted(
                d for d in self.root.iterdir() if d.is_dir() and (d / "frames").is_dir()
            )
        self.videos = {d.name: d for d in dirs}
        self.locks = {name: threading.Lock() for name in self.videos}
        self._contour_cache: dict = {}

    def names(self):
        return list(self.videos)

    def frame_files(self, video: str) -> list:
        return sorted((self.videos[video] / "frames").glob("*.png"))

    def n_frames(self, video: str) -> int:
        return len(self.frame_files(video))

    def image_size(self, video: str):
        with Image.open(self.frame_files(video)[0]) as img:
            w, h = img.size
        return h, w

    def contour_points(self, video: str, t: int):
        """Points from cmd_extract output when present, else from the mask."""
        precomputed = self.videos[video] / "contours" / f"{t:04d}.json"
        if precomputed.exists():
            return json.loads(precomputed.read_text())["points"]
        key = (video, t)
        if key not in self._contour_cache:
            mask_files = sorted((self.videos[video] / "masks").glob("*.png"))
            if t >= len(mask_files):
                return None
            with Image.open(mask_files[t]) as img:
                mask = (np.asarray(img.convert("L")) > 0).astype(np.uint8)
            try:
                contour = extract_contour(mask, frame_index=t)
            except EmptyMaskError:
                return None
            self._contour_cache[key] = [[float(x), float(y)] for x, y in contour.points]
        return self._contour_cache[key]

    def labels_path(self, video: str) -> Path:
        return self.videos[video] / "labels.csv"

    def labels_token(self, video: str) -> str:
        path = self.labels_path(video)
        return _token(path.read_bytes() if path.exists() else b"")

    def labels_array(self, video: str) -> np.ndarray:
        path = self.labels_path(video)
        n = self.n_frames(video)
        if not path.exists():
            return np.full((n, MAX_LABEL_POINTS, 2), np.nan)
        return SparseLabels.from_csv(path, n_frames=n, n_points=MAX_LABEL_POINTS).points

    def write_labels(self, video: str, points: np.ndarray) -> None:
        video_dir = self.videos[video]
        fd, tmp_name = tempfile.mkstemp(
            dir=video_dir, prefix=".labels-", suffix=".tmp"
        )
        os.close(fd)
        tmp = Path(tmp_name)
        try:
            SparseLabels(points).to_csv(tmp)
            os.replace(tmp, self.labels_path(video))
        finally:
            tmp.unlink(missing_ok=True)


def _frame_points(array: np.ndarray, t: int) -> list:
    out = []
    for i in range(array.shape[1]):
        if np.isfinite(array[t, i]).all():
            out.append(
                {"point_id": i, "x": float(array[t, i, 0]), "y": float(array[t, i, 1])}
            )
    return out


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": "bad_request", "message": message}, status_code=400)


def _not_found(message: str) -> JSONResponse:
    return JSONResponse({"error": "not_found", "message": message}, status_code=404)


def _parse_points(raw) -> list | str:
    """Validated (point_id, x, y) rows, or an error message string."""
    if not isinstance(raw, list):
        return "points must be a list"
    seen = set()
    rows = []
    for entry in raw:
        if not isinstance(entry, dict):
            return "each point must be an object"
        try:
            pid = entry["point_id"]
            x = float(entry["x"])
            y = float(entry["y"])
        except (KeyError, TypeError, ValueError):
            return "each point needs integer point_id and numeric x, y"
        if not isinstance(pid, int) or isinstance(pid, bool):
            return "point_id must be an integer"
        if not 0 <= pid < MAX_LABEL_POINTS:
            return f"point_id must be in [0, {MAX_LABEL_POINTS})"
        if pid in seen:
            return f"duplicate point_id {pid}"
        if not (np.isfinite(x) and np.isfinite(y)):
            return "coordinates must be finite"
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            return "coordinates must be normalized into [0, 1]"
        seen.add(pid)
        rows.append((pid, x, y))
    return rows


def create_app(root, frontend_dir=None) -> FastAPI:
    store = VideoStore(root)
    app = FastAPI(title="contour labeling API")

    def resolve(video: str, t: str):
        """(video, frame index) or an error response."""
        if video not in store.videos:
            return None, _not_found(f"unknown video {video!r}")
        if not t.isdigit():
            return None, _not_found(f"bad frame index {t!r}")
        frame = int(t)
        if frame >= store.n_frames(video):
            return None, _not_found(f"frame {frame} out of range")
        return frame, None

    @app.get("/api/videos")
    def list_videos():
        videos = []
        for name in store.names():
            h, w = store.image_size(name)
            videos.append(
                {
                    "name": name,
                    "n_frames": store.n_frames(name),
                    "height": h,
                    "width": w,
                }
            )
        return {"videos": videos}

    @app.get("/api/videos/{video}/frames/{t}")
    def get_frame(video: str, t: str):
        frame, err = resolve(video, t)
        if err is not None:
            return err
        return FileResponse(store.frame_files(video)[frame], media_type="image/png")

    @app.get("/api/videos/{video}/contours/{t}")
    def get_contour(video: str, t: str):
        frame, err = resolve(video, t)
        if err is not None:
            return err
        points = store.contour_points(video, frame)
        if points is None:
            return _not_found(f"no contour for frame {frame}")
        return {"frame": frame, "points": points}

    @app.get("/api/videos/{video}/labels/{t}")
    def get_labels(video: str, t: str):
        frame, err = resolve(video, t)
        if err is not None:
            return err
        array = store.labels_array(video)
        return {
            "frame": frame,
            "points": _frame_points(array, frame),
            "version": store.labels_token(video),
        }

    @app.put("/api/videos/{video}/labels/{t}")
    async def put_labels(video: str, t: str, request: Request):
        frame, err = resolve(video, t)
        if err is not None:
            return err
        try:
            payload = json.loads(await request.body())
        except json.JSONDecodeError:
            return _bad_request("body must be JSON")
        if not isinstance(payload, dict) or "points" not in payload or "version" not in payload:
            return _bad_request("body must carry points and version")
        rows = _parse_points(payload["points"])
        if isinstance(rows, str):
            return _bad_request(rows)

        with store.locks[video]:
            current = store.labels_token(video)
            if payload["version"] != current:
                array = store.labels_array(video)
                return JSONResponse(
                    {
                        "error": "version_conflict",
                        "version": current,
                        "points": _frame_points(array, frame),
                    },
                    status_code=409,
                )
            array = store.labels_array(video)
            array[frame] = np.nan
            for pid, x, y in rows:
                array[frame, pid] = (x, y)
            try:
                store.write_labels(video, array)
            except ContourTrackError as exc:
                return _bad_request(str(exc))
            return {
                "frame": frame,
                "points": _frame_points(array, frame),
                "version": store.labels_token(video),
            }

    if frontend_dir is not None:
        frontend_dir = Path(frontend_dir)
        if (frontend_dir / "index.html").exists():
            app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")
    return app
