"""Dataset loading, threshold segmentation, and a synthetic blob generator.

Directory layout: frames/NNNN.png and masks/NNNN.png under one video root,
plus an optional labels.csv. Frames resize bilinearly, masks by nearest
neighbor so they stay binary.

The synthetic generator draws a blob whose radius follows a deterministic
schedule of steady drift plus traveling lobes. The deformation is purely
radial, so a point keeps its polar angle forever: ground-truth
correspondence is angular identity, discretized to the angularly nearest
extracted contour point. The interior texture rides along with the shape
(it is a function of angle and relative radius), which gives photometric
cues that distinguish true radial motion from the traveling wave crest.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    ConfigError,
    EmptyVideoError,
    InvalidSpecError,
    MissingMaskError,
    NoForegroundError,
    ResolutionMismatchError,
)
from .evaluation import SparseLabels, normalize_points
from .geometry import Contour, as_binary_mask, extract_contour


@dataclass
class VideoDataset:
    name: str
    frames: list
    masks: list
    labels: SparseLabels | None = None
    stride: int = 1
    _contours: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not self.frames:
            raise EmptyVideoError(f"video {self.name!r} has no frames")
        if len(self.masks) != len(self.frames):
            raise MissingMaskError(
                f"{len(self.frames)} frames but {len(self.masks)} masks in {self.name!r}"
            )
        self.frames = [np.asarray(f, dtype=np.float64) for f in self.frames]
        self.masks = [as_binary_mask(m) for m in self.masks]
        shape = self.frames[0].shape
        for t, (frame, mask) in enumerate(zip(self.frames, self.masks)):
            if frame.shape != shape or mask.shape != shape:
                raise ResolutionMismatchError(
                    f"frame/mask {t} of {self.name!r} is {frame.shape}/{mask.shape}, "
                    f"expected {shape}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def image_shape(self):
        return self.frames[0].shape

    def contours(self) -> list:
        if self._contours is None:
            self._contours = [
                extract_contour(mask, frame_index=t)
                for t, mask in enumerate(self.masks)
            ]
        return self._contours

    def training_pairs(self) -> list:
        cs = self.contours()
        return [
            (self.frames[t], self.frames[t + 1], cs[t], cs[t + 1])
            for t in range(len(self) - 1)
        ]


def _read_gray(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64)


def _resize_float(frame: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(frame.astype(np.float32), mode="F")
    out = img.resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def _resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(mask.astype(np.uint8), mode="L")
    out = img.resize((size, size), Image.Resampling.NEAREST)
    return np.asarray(out, dtype=np.uint8)


def load_dataset(root, stride: int = 1, resize: int | None = None) -> VideoDataset:
    """Read frames/masks/labels from a video directory.

    Every stride-th frame is kept, starting at index 0. Label frame
    indices refer to the sampled sequence.
    """
    root = Path(root)
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if resize is not None and resize < 4:
        raise ConfigError(f"resize target must be >= 4 px, got {resize}")
    frame_files = sorted((root / "frames").glob("*.png"))
    mask_files = sorted((root / "masks").glob("*.png"))
    if not frame_files:
        raise EmptyVideoError(f"no frames found under {root / 'frames'}")
    if len(mask_files) != len(frame_files):
        raise MissingMaskError(
            f"{len(frame_files)} frames but {len(mask_files)} masks under {root}"
        )
    frame_files = frame_files[::stride]
    mask_files = mask_files[::stride]

    frames = [_read_gray(p) / 255.0 for p in frame_files]
    masks = [(_read_gray(p) > 0).astype(np.uint8) for p in mask_files]
    for t, (frame, mask) in enumerate(zip(frames, masks)):
        if frame.shape != mask.shape:
            raise ResolutionMismatchError(
                f"frame {frame_files[t].name} is {frame.shape} but its mask is {mask.shape}"
            )
    if resize is not None:
        frames = [_resize_float(f, resize) for f in frames]
        masks = [_resize_mask(m, resize) for m in masks]

    labels = None
    labels_path = root / "labels.csv"
    if labels_path.exists():
        labels = SparseLabels.from_csv(labels_path, n_frames=len(frames))
    return VideoDataset(
        name=root.name, frames=frames, masks=masks, labels=labels, stride=stride
    )


def save_dataset(dataset: VideoDataset, root) -> Path:
    """Write a video directory in the layout load_dataset reads."""
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for t, (frame, mask) in enumerate(zip(dataset.frames, dataset.masks)):
        gray = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(root / "frames" / f"{t:04d}.png")
        Image.fromarray(mask * 255, mode="L").save(root / "masks" / f"{t:04d}.png")
    if dataset.labels is not None:
        dataset.labels.to_csv(root / "labels.csv")
    return root


def threshold_segment(frame, threshold: float) -> np.ndarray:
    """Largest connected component strictly above threshold, holes filled."""
    arr = np.asarray(frame, dtype=np.float64)
    above = arr > threshold
    if not above.any():
        raise NoForegroundError(f"nothing above threshold {threshold}")
    labeled, n = ndimage.label(above, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labeled.ravel())
    sizes[0] = 0
    keep = labeled == sizes.argmax()
    return ndimage.binary_fill_holes(keep).astype(np.uint8)


MATERIAL_MODELS = ("radial", "normal_flow")


@dataclass(frozen=True)
class SyntheticSpec:
    """Radius schedule r(theta, t) = base + drift*t + sum of modulated lobes.

    Each lobe contributes amp * cos(amp_speed*t + amp_phase) *
    cos(freq*theta - speed*t + phase). lobe_speeds travel the crests around
    the body; lobe_amp_speeds pulse their amplitude so lobes grow and
    retract in place. The material model fixes what counts as ground-truth
    motion: "radial" keeps every material point at its polar angle, while
    "normal_flow" advects points with the level-set velocity of the moving
    boundary, so material slides tangentially where lobes deform.
    """

    image_size: int = 64
    n_frames: int = 8
    base_radius: float = 18.0
    radius_drift: float = 0.8
    lobe_amps: tuple = (3.0, 2.0)
    lobe_freqs: tuple = (3, 5)
    lobe_speeds: tuple = (0.55, -0.8)
    lobe_phases: tuple = (0.0, 1.7)
    lobe_amp_speeds: tuple = ()
    lobe_amp_phases: tuple = ()
    texture_seed: int = 0
    texture_contrast: float = 0.45
    material: str = "radial"
    name: str = "synthetic"

    def __post_init__(self):
        n_lobes = len(tuple(self.lobe_amps))
        if not tuple(self.lobe_amp_speeds):
            object.__setattr__(self, "lobe_amp_speeds", (0.0,) * n_lobes)
        if not tuple(self.lobe_amp_phases):
            object.__setattr__(self, "lobe_amp_phases", (0.0,) * n_lobes)
        lobe_keys = (
            "lobe_amps", "lobe_freqs", "lobe_speeds", "lobe_phases",
            "lobe_amp_speeds", "lobe_amp_phases",
        )
        for key in lobe_keys:
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if any(len(getattr(self, key)) != n_lobes for key in lobe_keys):
            raise InvalidSpecError("lobe parameter tuples must have equal lengths")
        if self.image_size < 16:
            raise InvalidSpecError(f"image_size must be >= 16, got {self.image_size}")
        if self.n_frames < 2:
            raise InvalidSpecError(f"need at least 2 frames, got {self.n_frames}")
        if any(int(f) != f or f < 1 for f in self.lobe_freqs):
            raise InvalidSpecError(f"lobe_freqs must be positive integers: {self.lobe_freqs}")
        if not 0.0 <= self.texture_contrast <= 0.8:
            raise InvalidSpecError(
                f"texture_contrast must be in [0, 0.8], got {self.texture_contrast}"
            )
        if self.material not in MATERIAL_MODELS:
            raise InvalidSpecError(
                f"material must be one of {MATERIAL_MODELS}, got {self.material!r}"
            )
        wobble = sum(abs(a) for a in self.lobe_amps)
        t_last = self.n_frames - 1
        r_min = self.base_radius + min(0.0, self.radius_drift * t_last) - wobble
        r_max = self.base_radius + max(0.0, self.radius_drift * t_last) + wobble
        if r_min <= 2.0:
            raise InvalidSpecError(f"radius schedule dips to {r_min:.2f} px")
        if r_max >= self.image_size / 2.0 - 2.0:
            raise InvalidSpecError(
                f"radius schedule reaches {r_max:.2f} px, too big for {self.image_size} px frames"
            )

    @property
    def center(self):
        half = (self.image_size - 1) / 2.0
        return (half, half)

    def _lobes(self):
        return zip(
            self.lobe_amps, self.lobe_freqs, self.lobe_speeds,
            self.lobe_phases, self.lobe_amp_speeds, self.lobe_amp_phases,
        )

    def radius(self, theta, t):
        theta = np.asarray(theta, dtype=float)
        r = self.base_radius + self.radius_drift * t + np.zeros_like(theta)
        for amp, freq, speed, phase, aspd, aph in self._lobes():
            envelope = amp * np.cos(aspd * t + aph)
            r = r + envelope * np.cos(freq * theta - speed * t + phase)
        return r

    def radius_dt(self, theta, t):
        """Partial derivative of the schedule in time at fixed angle."""
        theta = np.asarray(theta, dtype=float)
        out = self.radius_drift + np.zeros_like(theta)
        for amp, freq, speed, phase, aspd, aph in self._lobes():
            wave = freq * theta - speed * t + phase
            out = out - amp * aspd * np.sin(aspd * t + aph) * np.cos(wave)
            out = out + amp * np.cos(aspd * t + aph) * speed * np.sin(wave)
        return out

    def radius_dtheta(self, theta, t):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta)
        for amp, freq, speed, phase, aspd, aph in self._lobes():
            envelope = amp * np.cos(aspd * t + aph)
            out = out - envelope * freq * np.sin(freq * theta - speed * t + phase)
        return out


ADVECT_SUBSTEPS = 64


def advect_thetas(spec: SyntheticSpec, theta, t0: float, t1: float) -> np.ndarray:
    """Carry polar angles of boundary material from time t0 to t1.

    Radial material keeps its angle. Normal-flow material rides the
    level-set velocity of the moving boundary; because that flow keeps
    rho = r(theta, t) exactly, only the angle needs integrating:

        dtheta/dt = -r_t * r_theta / (r^2 + r_theta^2)

    evaluated on the contour. Classic RK4 with fixed substeps.
    """
    theta = np.asarray(theta, dtype=float)
    if spec.material == "radial" or t0 == t1:
        return theta.copy()

    def slope(th, t):
        r = spec.radius(th, t)
        r_t = spec.radius_dt(th, t)
        r_th = spec.radius_dtheta(th, t)
        return -r_t * r_th / (r * r + r_th * r_th)

    n = max(1, int(round(ADVECT_SUBSTEPS * abs(t1 - t0))))
    h = (t1 - t0) / n
    th = theta.copy()
    t = float(t0)
    for _ in range(n):
        k1 = slope(th, t)
        k2 = slope(th + 0.5 * h * k1, t + 0.5 * h)
        k3 = slope(th + 0.5 * h * k2, t + 0.5 * h)
        k4 = slope(th + h * k3, t + h)
        th = th + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return th


@dataclass
class SyntheticTruth:
    """Material-model correspondences for a generated clip.

    index_maps[t][i] is the point of contour t+1 nearest in angle to where
    point i of contour t moved under the spec's material model.
    """

    spec: SyntheticSpec
    index_maps: list

    def position(self, theta, t) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        r = self.spec.radius(theta, t)
        cx, cy = self.spec.center
        return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=-1)

    def gt_positions(self, points0, t) -> np.ndarray:
        """Where frame-0 pixel points sit at frame t under the material model."""
        pts = np.asarray(points0, dtype=float)
        cx, cy = self.spec.center
        theta0 = np.arctan2(pts[:, 1] - cy, pts[:, 0] - cx)
        return self.position(advect_thetas(self.spec, theta0, 0, t), t)

    def sparse_labels(self, n_points: int = 5) -> SparseLabels:
        theta0 = 0.3 + 2.0 * np.pi * np.arange(n_points) / n_points
        shape = (self.spec.image_size, self.spec.image_size)
        pts = np.stack(
            [
                normalize_points(
                    self.position(advect_thetas(self.spec, theta0, 0, t), t), shape
                )
                for t in range(self.spec.n_frames)
            ]
        )
        return SparseLabels(np.clip(pts, 0.0, 1.0))

    def to_json(self, path=None) -> str:
        payload = {
            "spec": dataclasses.asdict(self.spec),
            "pairs": [
                {"source_frame": t, "target_frame": t + 1, "map": m.tolist()}
                for t, m in enumerate(self.index_maps)
            ],
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "SyntheticTruth":
        payload = json.loads(Path(path).read_text())
        spec = SyntheticSpec(**payload["spec"])
        maps = [
            np.asarray(pair["map"], dtype=np.int64)
            for pair in sorted(payload["pairs"], key=lambda p: p["source_frame"])
        ]
        return cls(spec=spec, index_maps=maps)


def _texture_modes(rng: np.random.Generator, n_modes: int = 10):
    ang = rng.integers(1, 8, size=n_modes)
    rad = rng.integers(1, 4, size=n_modes)
    amp = rng.uniform(0.4, 1.0, size=n_modes) / np.arange(1, n_modes + 1)
    ph_a = rng.uniform(0, 2 * np.pi, size=n_modes)
    ph_r = rng.uniform(0, 2 * np.pi, size=n_modes)
    return ang, rad, amp, ph_a, ph_r


def _render(spec: SyntheticSpec, t: int, modes, bg_pattern) -> tuple:
    size = spec.image_size
    cx, cy = spec.center
    yy, xx = np.mgrid[0:size, 0:size]
    dx = xx - cx
    dy = yy - cy
    rho = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    r = spec.radius(theta, t)
    inside = rho <= r
    rho_rel = np.where(inside, rho / np.maximum(r, 1e-9), 0.0)

    ang, rad, amp, ph_a, ph_r = modes
    tex = np.zeros_like(rho)
    for a, b, w, u, v in zip(ang, rad, amp, ph_a, ph_r):
        tex += w * np.cos(a * theta + u) * np.cos(np.pi * b * rho_rel + v)
    tex /= amp.sum()
    frame = np.where(inside, 0.55 + 0.5 * spec.texture_contrast * tex, bg_pattern)
    return np.clip(frame, 0.0, 1.0), inside.astype(np.uint8)


def _background(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.texture_seed + 1)
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size]
    pattern = np.zeros((size, size))
    for _ in range(3):
        kx, ky = rng.integers(1, 5, size=2)
        u, v = rng.uniform(0, 2 * np.pi, size=2)
        pattern += np.cos(2 * np.pi * kx * xx / size + u) * np.cos(
            2 * np.pi * ky * yy / size + v
        )
    return 0.12 + 0.04 * pattern / 3.0


def _angular_nearest(thetas: np.ndarray, target: Contour, center) -> np.ndarray:
    cx, cy = center
    th_t = np.arctan2(target.points[:, 1] - cy, target.points[:, 0] - cx)
    diff = np.asarray(thetas)[:, None] - th_t[None, :]
    wrapped = np.abs((diff + np.pi) % (2.0 * np.pi) - np.pi)
    return wrapped.argmin(axis=1).astype(np.int64)


def generate_synthetic(spec: SyntheticSpec) -> tuple:
    """Render the clip and derive exact material-model correspondences."""
    modes = _texture_modes(np.random.default_rng(spec.texture_seed))
    bg = _background(spec)
    frames, masks = [], []
    for t in range(spec.n_frames):
        frame, mask = _render(spec, t, modes, bg)
        frames.append(frame)
        masks.append(mask)
    dataset = VideoDataset(name=spec.name, frames=frames, masks=masks)
    contours = dataset.contours()
    cx, cy = spec.center
    maps = []
    for t in range(spec.n_frames - 1):
        src = contours[t].points
        th = np.arctan2(src[:, 1] - cy, src[:, 0] - cx)
        moved = advect_thetas(spec, th, t, t + 1)
        maps.append(_angular_nearest(moved, contours[t + 1], spec.center))
    truth = SyntheticTruth(spec=spec, index_maps=maps)
    dataset.labels = truth.sparse_labels()
    return dataset, truth
