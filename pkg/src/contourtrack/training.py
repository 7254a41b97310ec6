"""Self-supervised training loop with deterministic seeding.

Adam with a flat-then-linear learning rate schedule, gradient clipping,
periodic checkpoints, and a CSV-friendly per-iteration log. Given the same
seed and dataset order, two runs produce bitwise-identical weights.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    ConfigError,
    CorruptFileError,
    EmptyDatasetError,
    NonFiniteLossError,
    VersionMismatchError,
)
from .geometry import Contour, compute_normals, contour_interior_mask
from .losses import DEFAULT_LOSSES, LOSS_NAMES, total_loss
from .network import ContourTracker, EncoderConfig, build_tracker

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 10.0
CHECKPOINT_FORMAT_VERSION = 1
LOG_FIELDS = ("iteration", "lr", *LOSS_NAMES, "total")


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; full_scale() holds the heavyweight recipe."""

    lr_init: float = 1e-4
    decay_start_iter: int = 400
    total_iters: int = 2000
    batch_size: int = 2
    seed: int = 0
    enabled_losses: tuple[str, ...] = DEFAULT_LOSSES
    image_size: int = 128
    checkpoint_every: int = 500

    def __post_init__(self):
        object.__setattr__(self, "enabled_losses", tuple(self.enabled_losses))
        if self.lr_init <= 0:
            raise ConfigError(f"lr_init must be positive, got {self.lr_init}")
        if not self.total_iters >= self.decay_start_iter >= 0:
            raise ConfigError(
                f"need total_iters >= decay_start_iter >= 0, got "
                f"{self.total_iters} and {self.decay_start_iter}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_size < 4:
            raise ConfigError(f"image_size must be >= 4, got {self.image_size}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not self.enabled_losses:
            raise ConfigError("at least one loss must be enabled")
        for name in self.enabled_losses:
            if name not in LOSS_NAMES:
                raise ConfigError(f"unknown loss {name!r}, expected one of {LOSS_NAMES}")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """50k iterations at 512 px, decay from 10k, batches of 8.

        Needs serious compute; CI never runs it.
        """
        base = dict(
            lr_init=1e-4,
            decay_start_iter=10_000,
            total_iters=50_000,
            batch_size=8,
            image_size=512,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_mapping(cls, mapping) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**dict(mapping))


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Flat at lr_init, then linear to zero at total_iters."""
    if iteration < cfg.decay_start_iter:
        return cfg.lr_init
    span = cfg.total_iters - cfg.decay_start_iter
    if span == 0:
        return 0.0
    return cfg.lr_init * (cfg.total_iters - iteration) / span


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, iteration: int, lr: float, values: dict):
        row = {"iteration": int(iteration), "lr": float(lr)}
        for name in (*LOSS_NAMES, "total"):
            row[name] = float(values[name])
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)

    @classmethod
    def from_csv(cls, path) -> "TrainingLog":
        log = cls()
        with Path(path).open(newline="") as fh:
            for raw in csv.DictReader(fh):
                row = {"iteration": int(raw["iteration"])}
                for name in LOG_FIELDS[1:]:
                    row[name] = float(raw[name])
                log.rows.append(row)
        return log


def save_checkpoint(tracker: ContourTracker, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": dataclasses.asdict(tracker.cfg),
        "state": tracker.state_dict(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path, config: EncoderConfig | None = None) -> ContourTracker:
    """Rebuild a tracker from disk.

    Pass config to insist on a particular architecture; a stored config
    that differs raises VersionMismatchError rather than silently handing
    back a different network.
    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CorruptFileError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or not {"format_version", "config", "state"} <= set(payload):
        raise CorruptFileError(f"checkpoint {path} is missing required fields")
    version = payload["format_version"]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format {version}, this build reads {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        stored = EncoderConfig(**payload["config"])
    except (TypeError, ConfigError) as exc:
        raise CorruptFileError(f"checkpoint {path} has a bad config block: {exc}") from exc
    if config is not None and stored != config:
        raise VersionMismatchError(
            f"checkpoint architecture {stored} does not match requested {config}"
        )
    tracker = ContourTracker(stored)
    try:
        tracker.load_state_dict(payload["state"])
    except (RuntimeError, KeyError) as exc:
        raise CorruptFileError(f"checkpoint {path} state does not fit its config: {exc}") from exc
    return tracker


@dataclass
class TrainResult:
    tracker: ContourTracker
    log: TrainingLog
    checkpoints: list[Path]


def _as_contour(c) -> Contour:
    return c if isinstance(c, Contour) else Contour(np.asarray(c, dtype=np.float64))


def _prepare_pairs(dataset, dtype):
    """Materialize (img_t, img_t1, contour_t, contour_t1, normals_t) tuples.

    Normals are fixed data, computed once per distinct source contour
    against its polygon-filled interior.
    """
    prepared = []
    normal_cache: dict[int, object] = {}
    for img_t, img_t1, c_t, c_t1 in dataset:
        c_t, c_t1 = _as_contour(c_t), _as_contour(c_t1)
        t_t = torch.as_tensor(np.asarray(img_t), dtype=dtype)
        t_t1 = torch.as_tensor(np.asarray(img_t1), dtype=dtype)
        key = id(c_t)
        if key not in normal_cache:
            region = contour_interior_mask(c_t, t_t.shape)
            normal_cache[key] = compute_normals(c_t, region)
        prepared.append((t_t, t_t1, c_t, c_t1, normal_cache[key]))
    return prepared


def train(
    dataset,
    cfg: TrainConfig,
    *,
    tracker: ContourTracker | None = None,
    checkpoint_dir=None,
) -> TrainResult:
    """Run total_iters Adam steps over uniformly sampled frame pairs.

    dataset: sequence of (image_t, image_t1, contour_t, contour_t1) tuples
    with images in [0, 1]. Pass tracker to resume training; otherwise a
    fresh seeded network is built at cfg.image_size.
    """
    if tracker is None:
        tracker = build_tracker(EncoderConfig(image_size=cfg.image_size, seed=cfg.seed))
    pairs = _prepare_pairs(dataset, tracker.feat_proj.weight.dtype)
    if not pairs:
        raise EmptyDatasetError("no training pairs")

    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(
        tracker.parameters(), lr=cfg.lr_init, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    log = TrainingLog()
    checkpoints: list[Path] = []

    tracker.train()
    for it in range(cfg.total_iters):
        lr = lr_schedule(it, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad(set_to_none=True)

        picks = rng.integers(len(pairs), size=cfg.batch_size)
        sums = dict.fromkeys((*LOSS_NAMES, "total"), 0.0)
        batch_total = None
        for k in picks:
            img_t, img_t1, c_t, c_t1, normals_t = pairs[int(k)]
            o_fwd, o_bwd = tracker(img_t, img_t1, c_t.points, c_t1.points)
            bundle = total_loss(
                img_t, img_t1, c_t.points, c_t1.points,
                o_fwd, o_bwd, normals_t, enabled=cfg.enabled_losses,
            )
            batch_total = bundle.total if batch_total is None else batch_total + bundle.total
            for name, value in bundle.as_floats().items():
                sums[name] += value
        batch_total = batch_total / cfg.batch_size

        if not bool(torch.isfinite(batch_total)):
            last = checkpoints[-1] if checkpoints else None
            raise NonFiniteLossError(
                f"loss became non-finite at iteration {it}; "
                + (f"last good checkpoint: {last}" if last else "no checkpoint written yet")
            )
        batch_total.backward()
        torch.nn.utils.clip_grad_norm_(tracker.parameters(), GRAD_CLIP_NORM)
        opt.step()
        tracker.iteration += 1

        log.append(it, lr, {name: sums[name] / cfg.batch_size for name in sums})
        if checkpoint_dir is not None and (it + 1) % cfg.checkpoint_every == 0:
            target = Path(checkpoint_dir) / f"ckpt_{it + 1:06d}.pt"
            checkpoints.append(save_checkpoint(tracker, target))

    tracker.eval()
    return TrainResult(tracker=tracker, log=log, checkpoints=checkpoints)
