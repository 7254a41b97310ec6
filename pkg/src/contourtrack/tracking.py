"""Whole-video inference: chained forward tracking and velocity maps.

Only the forward offsets are used at inference. Each pair's moved points
snap onto the next contour; many source points may land on one target
(merging), and target points nobody lands on start new trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import (
    ConfigError,
    EmptyVideoError,
    ShapeMismatchError,
    WindowOutOfRangeError,
)
from .geometry import Contour, CorrespondenceMap, snap_phi
from .mechanical import MechEnergyConfig, solve_mechanical

TRACK_METHODS = ("learned", "mechanical")


@dataclass(frozen=True)
class Trajectory:
    """One tracked point: a contour index and coordinate per frame from birth."""

    birth: int
    indices: np.ndarray  # (K,) contour index at frames birth .. birth+K-1
    points: np.ndarray  # (K, 2) pixel coordinates at those frames

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        pts = np.asarray(self.points, dtype=np.float64)
        if idx.ndim != 1 or idx.shape[0] == 0:
            raise ShapeMismatchError(f"indices must be a nonempty vector, got {idx.shape}")
        if pts.shape != (idx.shape[0], 2):
            raise ShapeMismatchError(
                f"points shape {pts.shape} does not match {idx.shape[0]} indices"
            )
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def frames(self) -> np.ndarray:
        return self.birth + np.arange(len(self), dtype=np.int64)

    def index_at(self, frame: int) -> int:
        return int(self.indices[frame - self.birth])

    def point_at(self, frame: int) -> np.ndarray:
        return self.points[frame - self.birth]


@dataclass
class TrackSet:
    trajectories: list
    n_frames: int

    def __post_init__(self):
        for traj in self.trajectories:
            if traj.birth < 0 or traj.birth + len(traj) > self.n_frames:
                raise ShapeMismatchError(
                    f"trajectory born at {traj.birth} with {len(traj)} frames "
                    f"does not fit a {self.n_frames}-frame video"
                )

    def __len__(self) -> int:
        return len(self.trajectories)

    def born_at(self, frame: int) -> list:
        return [t for t in self.trajectories if t.birth == frame]

    def first_frame_tracks(self) -> np.ndarray:
        """(n_frames, N_0, 2) coordinates of the frame-0 points, by frame-0 index."""
        born = self.born_at(0)
        if not born:
            raise EmptyVideoError("track set has no frame-0 trajectories")
        order = np.argsort([t.indices[0] for t in born])
        out = np.full((self.n_frames, len(born), 2), np.nan)
        for col, k in enumerate(order):
            traj = born[k]
            out[:, col, :] = traj.points
        return out

    def to_json(self, path=None) -> str:
        payload = {
            "trajectories": [
                {
                    "birth": int(traj.birth),
                    "path": [
                        [int(f), int(i), float(p[0]), float(p[1])]
                        for f, i, p in zip(traj.frames(), traj.indices, traj.points)
                    ],
                }
                for traj in self.trajectories
            ]
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "TrackSet":
        payload = json.loads(Path(path).read_text())
        trajectories = []
        last_frame = -1
        for entry in payload["trajectories"]:
            path_rows = entry["path"]
            trajectories.append(
                Trajectory(
                    birth=int(entry["birth"]),
                    indices=[row[1] for row in path_rows],
                    points=[[row[2], row[3]] for row in path_rows],
                )
            )
            last_frame = max(last_frame, int(path_rows[-1][0]))
        return cls(trajectories=trajectories, n_frames=last_frame + 1)


def track_pair(image_t, image_t1, contour_t: Contour, contour_t1: Contour, weights) -> CorrespondenceMap:
    """Regress forward offsets, move the source points, snap onto the target."""
    with torch.no_grad():
        offsets = weights.forward_offsets(
            image_t, image_t1, contour_t.points, contour_t1.points
        )
    moved = contour_t.points + offsets.detach().cpu().numpy().astype(np.float64)
    return snap_phi(moved, contour_t1, source_frame=contour_t.frame_index)


def pair_correspondences(
    frames,
    contours,
    weights=None,
    method: str = "learned",
    mech_config: MechEnergyConfig | None = None,
) -> list:
    """One CorrespondenceMap per consecutive frame pair."""
    if method not in TRACK_METHODS:
        raise ConfigError(f"method must be one of {TRACK_METHODS}, got {method!r}")
    if method == "learned" and weights is None:
        raise ConfigError("learned tracking requires trained weights")
    if len(frames) != len(contours):
        raise ShapeMismatchError(f"{len(frames)} frames but {len(contours)} contours")
    if len(contours) < 2:
        raise EmptyVideoError(f"need at least 2 frames to track, got {len(contours)}")
    out = []
    for t in range(len(contours) - 1):
        if method == "learned":
            corr = track_pair(
                frames[t], frames[t + 1], contours[t], contours[t + 1], weights
            )
        else:
            corr = solve_mechanical(contours[t], contours[t + 1], mech_config).correspondence
        out.append(corr)
    return out


def chase_indices(correspondences, start_frame: int, start_index: int) -> np.ndarray:
    """Follow the match chain from (start_frame, start_index) to the last frame."""
    indices = [int(start_index)]
    for corr in correspondences[start_frame:]:
        indices.append(int(corr.match[indices[-1]]))
    return np.asarray(indices, dtype=np.int64)


class _OpenTrajectory:
    __slots__ = ("birth", "indices", "points", "cursor")

    def __init__(self, birth, index, point):
        self.birth = birth
        self.indices = [index]
        self.points = [point]
        self.cursor = index

    def extend(self, index, point):
        self.indices.append(index)
        self.points.append(point)
        self.cursor = index

    def closed(self) -> Trajectory:
        return Trajectory(birth=self.birth, indices=self.indices, points=self.points)


def track_sequence(
    frames,
    contours,
    weights=None,
    method: str = "learned",
    mech_config: MechEnergyConfig | None = None,
) -> TrackSet:
    """Chain per-pair correspondences into trajectories with births.

    Every frame-0 point starts a trajectory; a target index no forward
    match lands on starts one at that frame. Trajectories never end, so
    every contour point of every frame belongs to at least one.
    """
    correspondences = pair_correspondences(
        frames, contours, weights=weights, method=method, mech_config=mech_config
    )
    open_trajs = [
        _OpenTrajectory(0, i, contours[0].points[i]) for i in range(len(contours[0]))
    ]
    for t, corr in enumerate(correspondences):
        target = contours[t + 1]
        hit = np.zeros(len(target), dtype=bool)
        for traj in open_trajs:
            j = int(corr.match[traj.cursor])
            traj.extend(j, target.points[j])
            hit[j] = True
        for j in np.nonzero(~hit)[0]:
            open_trajs.append(_OpenTrajectory(t + 1, int(j), target.points[j]))
    return TrackSet(
        trajectories=[traj.closed() for traj in open_trajs], n_frames=len(contours)
    )


@dataclass(frozen=True)
class VelocityMap:
    """Signed normal velocities, contour position by time step.

    Row k is frame-0 contour index window[0] + k; column t is the step
    from frame t to t+1. Positive means outward motion, px per sampled
    frame.
    """

    values: np.ndarray  # (window length, n_frames - 1)
    window: tuple

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"values must be 2D, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeMismatchError("velocity map contains non-finite values")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))

    def to_csv(self, path=None) -> str:
        steps = self.values.shape[1]
        lines = ["index," + ",".join(f"step_{t}" for t in range(steps))]
        for k, row in enumerate(self.values):
            lines.append(
                str(self.window[0] + k) + "," + ",".join(repr(float(v)) for v in row)
            )
        text = "\n".join(lines) + "\n"
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        return text


def quantify_velocity(trackset: TrackSet, contours, normals, window) -> VelocityMap:
    """Project each tracked point's per-step displacement onto the outward normal.

    window is a half-open [start, stop) range of frame-0 contour indices.
    """
    start, stop = int(window[0]), int(window[1])
    n0 = len(contours[0])
    if not 0 <= start < stop <= n0:
        raise WindowOutOfRangeError(
            f"window [{start}, {stop}) invalid for a {n0}-point contour"
        )
    if len(contours) != trackset.n_frames:
        raise ShapeMismatchError(
            f"{len(contours)} contours for a {trackset.n_frames}-frame track set"
        )
    if len(normals) < trackset.n_frames - 1:
        raise ShapeMismatchError(
            f"need normals for at least {trackset.n_frames - 1} frames, got {len(normals)}"
        )
    by_index = {traj.indices[0]: traj for traj in trackset.born_at(0)}
    values = np.zeros((stop - start, trackset.n_frames - 1))
    for k, i in enumerate(range(start, stop)):
        traj = by_index.get(i)
        if traj is None:
            raise WindowOutOfRangeError(f"no frame-0 trajectory for contour index {i}")
        for t in range(trackset.n_frames - 1):
            disp = traj.point_at(t + 1) - traj.point_at(t)
            normal = normals[t].at(traj.index_at(t))
            values[k, t] = float(disp @ normal)
    return VelocityMap(values=values, window=(start, stop))


def save_velocity_png(vmap: VelocityMap, path) -> Path:
    """Render the velocity map as a diverging heatmap, red = outward."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    span = max(float(np.abs(vmap.values).max()), 1e-9)
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(
        vmap.values,
        cmap="RdBu_r",
        vmin=-span,
        vmax=span,
        aspect="auto",
        origin="lower",
        extent=(0, vmap.values.shape[1], vmap.window[0], vmap.window[1]),
    )
    ax.set_xlabel("frame step")
    ax.set_ylabel("contour index")
    fig.colorbar(im, ax=ax, label="normal velocity (px/frame)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
