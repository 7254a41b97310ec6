"""Learned offset regressor for contour points.

A small strided-conv pyramid with top-down fusion produces a full-resolution
feature map per frame. Each contour point turns into a feature vector
(sampled image features, sinusoidal embedding of its order index, normalized
coordinates). One cross-attention block per direction mixes the two point
sets, and a shared three-layer head maps the fused features to 2D offsets.
The final head layer starts at zero so an untrained tracker predicts
identity motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeMismatchError
from .geometry import bilinear_sample


@dataclass(frozen=True)
class EncoderConfig:
    stage_channels: tuple[int, ...] = (16, 32, 64)
    fpn_channels: int = 32
    image_size: int = 128
    seed: int = 0
    pos_embed_dim: int = 32
    attn_heads: int = 4
    attn_dim: int = 64
    head_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        if len(self.stage_channels) < 1 or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"bad stage_channels: {self.stage_channels}")
        if self.fpn_channels < 1:
            raise ConfigError(f"fpn_channels must be >= 1, got {self.fpn_channels}")
        if self.image_size < 4:
            raise ConfigError(f"image_size must be >= 4, got {self.image_size}")
        if self.pos_embed_dim % 2 != 0 or self.pos_embed_dim < 2:
            raise ConfigError(f"pos_embed_dim must be even, got {self.pos_embed_dim}")
        if self.attn_dim % self.attn_heads != 0:
            raise ConfigError(
                f"attn_dim {self.attn_dim} must divide by attn_heads {self.attn_heads}"
            )

    @property
    def point_feature_dim(self) -> int:
        return self.fpn_channels + self.pos_embed_dim + 2


def positional_embedding(indices, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Interleaved sin/cos embedding of integer order indices.

    Index 0 maps to [0, 1, 0, 1, ...].
    """
    if dim % 2 != 0:
        raise ConfigError(f"embedding dim must be even, got {dim}")
    idx = torch.as_tensor(indices, dtype=dtype).reshape(-1, 1)  # (N, 1)
    k = torch.arange(dim // 2, dtype=dtype)
    freq = torch.pow(torch.tensor(10000.0, dtype=dtype), -2.0 * k / dim)  # (dim/2,)
    angle = idx * freq[None, :]  # (N, dim/2)
    pe = torch.zeros(idx.shape[0], dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe


class ImageEncoder(nn.Module):
    """Strided conv pyramid fused top-down back to full resolution.

    Replicate padding keeps a constant input constant at every stage, so a
    flat image produces a spatially flat feature map.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        chans = [1, *cfg.stage_channels]
        self.stages = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1, padding_mode="replicate")
            for i in range(len(cfg.stage_channels))
        )
        self.laterals = nn.ModuleList(
            nn.Conv2d(c, cfg.fpn_channels, 1) for c in cfg.stage_channels
        )
        self.out_conv = nn.Conv2d(
            cfg.fpn_channels, cfg.fpn_channels, 3, padding=1, padding_mode="replicate"
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        # image (H, W) -> features (H, W, C_fpn)
        if image.ndim != 2:
            raise ShapeMismatchError(f"expected a 2D image, got shape {tuple(image.shape)}")
        h, w = image.shape
        if h != self.cfg.image_size or w != self.cfg.image_size:
            raise ShapeMismatchError(
                f"expected {self.cfg.image_size}x{self.cfg.image_size}, got {h}x{w}"
            )
        x = image[None, None]  # (1, 1, H, W)
        skips = []
        for stage in self.stages:
            x = F.relu(stage(x))
            skips.append(x)
        top = self.laterals[-1](skips[-1])
        for lateral, skip in zip(reversed(self.laterals[:-1]), reversed(skips[:-1])):
            top = F.interpolate(top, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            top = top + lateral(skip)
        top = F.interpolate(top, size=(h, w), mode="bilinear", align_corners=False)
        out = self.out_conv(top)
        return out[0].permute(1, 2, 0)  # (H, W, C)


class ContourTracker(nn.Module):
    """Two-frame point tracker: encode, attend across contours, regress offsets."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ImageEncoder(cfg)
        self.feat_proj = nn.Linear(cfg.point_feature_dim, cfg.attn_dim)
        self.fwd_attn = nn.MultiheadAttention(cfg.attn_dim, cfg.attn_heads, batch_first=True)
        self.bwd_attn = nn.MultiheadAttention(cfg.attn_dim, cfg.attn_heads, batch_first=True)
        self.head = nn.Sequential(
            nn.Linear(2 * cfg.attn_dim, cfg.head_hidden),
            nn.ReLU(),
            nn.Linear(cfg.head_hidden, cfg.head_hidden),
            nn.ReLU(),
            nn.Linear(cfg.head_hidden, 2),
        )
        self.register_buffer("iteration", torch.zeros((), dtype=torch.long))

    def encode(self, image) -> torch.Tensor:
        img = image if torch.is_tensor(image) else torch.as_tensor(np.asarray(image))
        img = img.to(self.feat_proj.weight.dtype)
        return self.encoder(img)

    def point_features(self, feature_map: torch.Tensor, points) -> torch.Tensor:
        # (N, C_fpn + pos_embed_dim + 2)
        dtype = feature_map.dtype
        pts = points if torch.is_tensor(points) else torch.as_tensor(np.asarray(points))
        pts = pts.to(dtype)
        sampled = bilinear_sample(feature_map, pts, warn=False)  # (N, C_fpn)
        pe = positional_embedding(torch.arange(pts.shape[0]), self.cfg.pos_embed_dim, dtype)
        norm_xy = pts / (self.cfg.image_size - 1)
        return torch.cat([sampled, pe, norm_xy], dim=1)

    def cross_attend(self, query_feats: torch.Tensor, kv_feats: torch.Tensor, direction: str):
        # query (N, D), keyvalue (M, D) -> attended (N, attn_dim), weights (N, M)
        if direction not in ("forward", "backward"):
            raise ConfigError(f"direction must be forward or backward, got {direction!r}")
        attn = self.fwd_attn if direction == "forward" else self.bwd_attn
        q = self.feat_proj(query_feats)[None]  # (1, N, attn_dim)
        kv = self.feat_proj(kv_feats)[None]
        out, weights = attn(q, kv, kv, need_weights=True, average_attn_weights=True)
        return out[0], weights[0]

    def regress_offsets(self, fused: torch.Tensor) -> torch.Tensor:
        # (N, 2 * attn_dim) -> (N, 2); the head is shared across directions
        return self.head(fused)

    def _direction_offsets(self, query_feats, kv_feats, direction):
        attended, _ = self.cross_attend(query_feats, kv_feats, direction)
        fused = torch.cat([self.feat_proj(query_feats), attended], dim=1)
        return self.regress_offsets(fused)

    def forward_offsets(self, image_t, image_t1, points_t, points_t1) -> torch.Tensor:
        """Forward-direction offsets only, the path used at inference."""
        feats_t = self.point_features(self.encode(image_t), points_t)
        feats_t1 = self.point_features(self.encode(image_t1), points_t1)
        return self._direction_offsets(feats_t, feats_t1, "forward")

    def forward(self, image_t, image_t1, points_t, points_t1):
        # returns (offsets_forward (N_t, 2), offsets_backward (N_t1, 2))
        feats_t = self.point_features(self.encode(image_t), points_t)
        feats_t1 = self.point_features(self.encode(image_t1), points_t1)
        o_fwd = self._direction_offsets(feats_t, feats_t1, "forward")
        o_bwd = self._direction_offsets(feats_t1, feats_t, "backward")
        return o_fwd, o_bwd


def _he_uniform(module: nn.Module):
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.kaiming_uniform_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_tracker(cfg: EncoderConfig) -> ContourTracker:
    """Seeded construction: He-uniform init, zero final offset layer, and the
    backward attention starting as an exact copy of the forward one."""
    torch.manual_seed(cfg.seed)
    model = ContourTracker(cfg)
    model.apply(_he_uniform)
    final = model.head[-1]
    nn.init.zeros_(final.weight)
    nn.init.zeros_(final.bias)
    model.bwd_attn.load_state_dict(model.fwd_attn.state_dict())
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
