"""Scoring tracked points against sparse ground-truth labels.

Coordinates are normalized by image width and height into [0, 1]. A label
slot is missing when both coordinates are NaN; missing slots drop out of
the numerator and the denominator alike. Frame 0 is never scored, since
tracking starts from the ground truth there.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    CorruptFileError,
    NoLabelsError,
    ShapeMismatchError,
)
from .geometry import Contour, NormalField, contour_index_of

SA_TAUS = (0.02, 0.04, 0.06)
CA_TAUS = (0.01, 0.02, 0.03)
MAX_LABEL_POINTS = 5
LABEL_FIELDS = ("frame", "point_id", "x", "y")


def normalize_points(points, image_shape) -> np.ndarray:
    """Pixel (x, y) -> fractions of image width and height."""
    h, w = int(image_shape[0]), int(image_shape[1])
    return np.asarray(points, dtype=float) / np.array([w, h], dtype=float)


def denormalize_points(points, image_shape) -> np.ndarray:
    h, w = int(image_shape[0]), int(image_shape[1])
    return np.asarray(points, dtype=float) * np.array([w, h], dtype=float)


@dataclass(frozen=True)
class SparseLabels:
    """Hand-labeled tracking points, (n_frames, n_points, 2) normalized.

    NaN pairs mark points that were occluded or out of bounds on that
    frame. At most MAX_LABEL_POINTS points per video.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ShapeMismatchError(f"labels must be (T, N, 2), got {pts.shape}")
        if pts.shape[1] > MAX_LABEL_POINTS:
            raise ConfigError(
                f"at most {MAX_LABEL_POINTS} labeled points per video, got {pts.shape[1]}"
            )
        finite = np.isfinite(pts)
        if (finite.all(axis=2) ^ finite.any(axis=2)).any():
            raise ConfigError("a label point must have both coordinates or neither")
        vals = pts[finite]
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise ConfigError("label coordinates must be normalized into [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[1]

    def present(self) -> np.ndarray:
        return np.isfinite(self.points).all(axis=2)

    def frame(self, t: int) -> np.ndarray:
        return self.points[t]

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        present = self.present()
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LABEL_FIELDS)
            for t in range(self.n_frames):
                for i in range(self.n_points):
                    if present[t, i]:
                        x, y = self.points[t, i]
                        writer.writerow([t, i, repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, n_frames: int | None = None, n_points: int | None = None):
        rows = []
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(LABEL_FIELDS) <= set(reader.fieldnames):
                raise CorruptFileError(
                    f"{path} lacks the columns {LABEL_FIELDS}, found {reader.fieldnames}"
                )
            try:
                for raw in reader:
                    rows.append(
                        (int(raw["frame"]), int(raw["point_id"]),
                         float(raw["x"]), float(raw["y"]))
                    )
            except (TypeError, ValueError) as exc:
                raise CorruptFileError(f"bad label row in {path}: {exc}") from exc
        T = n_frames if n_frames is not None else (max((r[0] for r in rows), default=-1) + 1)
        N = n_points if n_points is not None else (max((r[1] for r in rows), default=-1) + 1)
        pts = np.full((T, N, 2), np.nan)
        for t, i, x, y in rows:
            if not (0 <= t < T and 0 <= i < N):
                raise CorruptFileError(
                    f"label row (frame {t}, point {i}) outside ({T} frames, {N} points)"
                )
            pts[t, i] = (x, y)
        return cls(pts)


def _label_array(labels) -> np.ndarray:
    if isinstance(labels, SparseLabels):
        return labels.points
    return np.asarray(labels, dtype=float)


def _scored_mask(pred: np.ndarray, lab: np.ndarray) -> np.ndarray:
    if pred.shape != lab.shape:
        raise ShapeMismatchError(
            f"predictions {pred.shape} must match labels {lab.shape}"
        )
    if pred.ndim != 3 or pred.shape[2] != 2:
        raise ShapeMismatchError(f"expected (T, N, 2) arrays, got {pred.shape}")
    mask = np.isfinite(lab).all(axis=2)
    if mask.shape[0]:
        mask[0, :] = False
    return mask


def spatial_accuracy(predictions, labels, tau: float) -> float:
    """Fraction of scored pairs with normalized distance strictly below tau."""
    pred = np.asarray(predictions, dtype=float)
    lab = _label_array(labels)
    scored = _scored_mask(pred, lab)
    count = int(scored.sum())
    if count == 0:
        raise NoLabelsError("no labeled (frame, point) pairs past frame 0")
    with np.errstate(invalid="ignore"):
        dist = np.linalg.norm(pred - lab, axis=2)
        hits = (dist < tau) & scored  # NaN predictions compare False: misses
    return float(hits.sum() / count)


def spatial_accuracy_series(predictions, labels, tau: float) -> np.ndarray:
    """Per-frame accuracy for t = 1..T-1; NaN where a frame has no labels."""
    pred = np.asarray(predictions, dtype=float)
    lab = _label_array(labels)
    scored = _scored_mask(pred, lab)
    with np.errstate(invalid="ignore"):
        dist = np.linalg.norm(pred - lab, axis=2)
        hits = (dist < tau) & scored
    counts = scored.sum(axis=1)[1:]
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, hits.sum(axis=1)[1:] / np.maximum(counts, 1), np.nan)


def _contour_hit(contour: Contour, pred_px, lab_px, tau: float) -> bool:
    if not np.all(np.isfinite(pred_px)):
        return False
    gap = abs(contour_index_of(contour, pred_px) - contour_index_of(contour, lab_px))
    return gap / len(contour) < tau


def contour_accuracy(predictions, labels, contours, image_shape, tau: float) -> float:
    """Fraction of scored pairs whose snapped contour indices agree.

    The index gap is normalized by that frame's contour length and
    compared strictly against tau.
    """
    pred = np.asarray(predictions, dtype=float)
    lab = _label_array(labels)
    scored = _scored_mask(pred, lab)
    count = int(scored.sum())
    if count == 0:
        raise NoLabelsError("no labeled (frame, point) pairs past frame 0")
    hits = 0
    for t, i in zip(*np.nonzero(scored)):
        hits += _contour_hit(
            contours[t],
            denormalize_points(pred[t, i], image_shape),
            denormalize_points(lab[t, i], image_shape),
            tau,
        )
    return hits / count


def contour_accuracy_series(predictions, labels, contours, image_shape, tau: float) -> np.ndarray:
    pred = np.asarray(predictions, dtype=float)
    lab = _label_array(labels)
    scored = _scored_mask(pred, lab)
    out = np.full(max(pred.shape[0] - 1, 0), np.nan)
    for t in range(1, pred.shape[0]):
        idx = np.nonzero(scored[t])[0]
        if idx.size == 0:
            continue
        hits = sum(
            _contour_hit(
                contours[t],
                denormalize_points(pred[t, i], image_shape),
                denormalize_points(lab[t, i], image_shape),
                tau,
            )
            for i in idx
        )
        out[t - 1] = hits / idx.size
    return out


def cumulative_mean_accuracy(series) -> np.ndarray:
    """Running mean of a per-frame accuracy series; NaN entries are skipped."""
    arr = np.asarray(series, dtype=float)
    if arr.size == 0:
        raise ConfigError("accuracy series is empty")
    finite = np.isfinite(arr)
    total = np.cumsum(np.where(finite, arr, 0.0))
    count = np.cumsum(finite)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


@dataclass(frozen=True)
class VelocityBin:
    velocity: int
    count: int
    accuracy: float


def accuracy_by_velocity(
    predictions, labels, contours, normals, image_shape, tau: float = 0.02
) -> list[VelocityBin]:
    """SA split by ground-truth normal speed, binned to the nearest px/frame.

    A pair is binned when its label exists on both frame t-1 and t; the
    speed is the label displacement projected on the frame t-1 outward
    normal at the label's nearest contour point.
    """
    pred = np.asarray(predictions, dtype=float)
    lab = _label_array(labels)
    scored = _scored_mask(pred, lab)
    present = np.isfinite(lab).all(axis=2)
    counts: dict[int, int] = {}
    hits: dict[int, int] = {}
    with np.errstate(invalid="ignore"):
        dist = np.linalg.norm(pred - lab, axis=2)
    for t, i in zip(*np.nonzero(scored)):
        if not present[t - 1, i]:
            continue
        prev_px = denormalize_points(lab[t - 1, i], image_shape)
        cur_px = denormalize_points(lab[t, i], image_shape)
        idx_prev = contour_index_of(contours[t - 1], prev_px)
        normal = normals[t - 1].at(idx_prev)
        speed = abs(float(np.dot(cur_px - prev_px, normal)))
        bin_v = int(np.rint(speed))
        counts[bin_v] = counts.get(bin_v, 0) + 1
        hits[bin_v] = hits.get(bin_v, 0) + bool(dist[t, i] < tau)
    return [
        VelocityBin(velocity=v, count=counts[v], accuracy=hits[v] / counts[v])
        for v in sorted(counts)
    ]


@dataclass
class VideoScores:
    sa: dict[float, float]
    ca: dict[float, float]
    cma_sa: dict[float, list[float]]
    cma_ca: dict[float, list[float]]
    velocity_bins: list[VelocityBin]
    scored_pairs: int


def evaluate_video(
    predictions, labels, contours, image_shape, *, normals=None
) -> VideoScores:
    """All metrics for one video at the standard thresholds."""
    pred = np.asarray(predictions, dtype=float)
    lab = _label_array(labels)
    scored_pairs = int(_scored_mask(pred, lab).sum())
    sa = {tau: spatial_accuracy(pred, lab, tau) for tau in SA_TAUS}
    ca = {
        tau: contour_accuracy(pred, lab, contours, image_shape, tau)
        for tau in CA_TAUS
    }
    cma_sa = {
        tau: cumulative_mean_accuracy(spatial_accuracy_series(pred, lab, tau)).tolist()
        for tau in SA_TAUS
    }
    cma_ca = {
        tau: cumulative_mean_accuracy(
            contour_accuracy_series(pred, lab, contours, image_shape, tau)
        ).tolist()
        for tau in CA_TAUS
    }
    bins = (
        accuracy_by_velocity(pred, lab, contours, normals, image_shape)
        if normals is not None
        else []
    )
    return VideoScores(
        sa=sa, ca=ca, cma_sa=cma_sa, cma_ca=cma_ca,
        velocity_bins=bins, scored_pairs=scored_pairs,
    )


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)


@dataclass
class EvalReport:
    videos: dict[str, VideoScores]

    def overall(self) -> dict[str, dict[float, float]]:
        """Unweighted per-video mean of each threshold column."""
        if not self.videos:
            raise NoLabelsError("report contains no videos")
        return {
            "sa": {tau: _mean(v.sa[tau] for v in self.videos.values()) for tau in SA_TAUS},
            "ca": {tau: _mean(v.ca[tau] for v in self.videos.values()) for tau in CA_TAUS},
        }

    def _payload(self) -> dict:
        def fin(x):
            return None if (isinstance(x, float) and math.isnan(x)) else x

        videos = {}
        for name, sc in self.videos.items():
            videos[name] = {
                "sa": {f"{tau:g}": sc.sa[tau] for tau in SA_TAUS},
                "ca": {f"{tau:g}": sc.ca[tau] for tau in CA_TAUS},
                "cma_sa": {f"{tau:g}": [fin(v) for v in sc.cma_sa[tau]] for tau in SA_TAUS},
                "cma_ca": {f"{tau:g}": [fin(v) for v in sc.cma_ca[tau]] for tau in CA_TAUS},
                "velocity_bins": [
                    {"velocity": b.velocity, "count": b.count, "accuracy": b.accuracy}
                    for b in sc.velocity_bins
                ],
                "scored_pairs": sc.scored_pairs,
            }
        overall = self.overall()
        return {
            "videos": videos,
            "overall": {
                "sa": {f"{tau:g}": overall["sa"][tau] for tau in SA_TAUS},
                "ca": {f"{tau:g}": overall["ca"][tau] for tau in CA_TAUS},
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self._payload(), indent=2, sort_keys=True)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n")
        return text

    def to_markdown(self) -> str:
        header = (
            "| video | "
            + " | ".join(f"SA_{tau:g}".replace("0.", ".") for tau in SA_TAUS)
            + " | "
            + " | ".join(f"CA_{tau:g}".replace("0.", ".") for tau in CA_TAUS)
            + " |"
        )
        sep = "|" + "---|" * (1 + len(SA_TAUS) + len(CA_TAUS))
        lines = [header, sep]
        overall = self.overall()
        for name, sc in self.videos.items():
            cells = [f"{sc.sa[tau]:.3f}" for tau in SA_TAUS]
            cells += [f"{sc.ca[tau]:.3f}" for tau in CA_TAUS]
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        cells = [f"{overall['sa'][tau]:.3f}" for tau in SA_TAUS]
        cells += [f"{overall['ca'][tau]:.3f}" for tau in CA_TAUS]
        lines.append("| mean | " + " | ".join(cells) + " |")
        return "\n".join(lines)
