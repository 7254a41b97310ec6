"""Self-supervised training objectives for the offset tracker.

The snap onto a contour is a hard assignment: gradients never flow through
the chosen index or the snapped coordinates. What keeps both directions
trainable is the round trip, where the forward consistency term
differentiates the backward offsets evaluated at the snapped points and
vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError
from .geometry import Contour, NormalField, bilinear_sample, snap_phi

LOSS_NAMES = ("cycle", "mech_normal", "mech_linear", "photometric")
DEFAULT_LOSSES = ("cycle", "mech_normal")


def _const(x, dtype) -> torch.Tensor:
    if torch.is_tensor(x):
        return x.detach().to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _norm_sum(vecs: torch.Tensor) -> torch.Tensor:
    """Sum of row L2 norms; zero rows contribute exact zeros with zero grad."""
    sq = vecs.square().sum(dim=1)
    live = sq > 0
    if not bool(live.any()):
        return vecs.sum() * 0.0
    return torch.sqrt(sq[live]).sum()


def _row_lengths(vecs: torch.Tensor) -> torch.Tensor:
    sq = vecs.square().sum(dim=1)
    live = sq > 0
    return torch.where(live, torch.sqrt(torch.where(live, sq, torch.ones_like(sq))), sq)


def _safe_unit(vecs: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    sq = vecs.square().sum(dim=1, keepdim=True)
    live = sq > eps * eps
    denom = torch.sqrt(torch.where(live, sq, torch.ones_like(sq)))
    return torch.where(live, vecs / denom, torch.zeros_like(vecs))


def _snap_indices(displaced: torch.Tensor, target_points: np.ndarray) -> torch.Tensor:
    corr = snap_phi(displaced.detach().cpu().numpy(), Contour(target_points))
    return torch.as_tensor(corr.match, dtype=torch.long)


def cycle_loss(points_t, points_t1, offsets_fwd: torch.Tensor, offsets_bwd: torch.Tensor):
    """Round-trip consistency, summed over both directions.

    Each source point is displaced, snapped onto the other contour, and
    carried back by the opposite-direction offset at the snapped point.
    Because the snap blocks gradients, the forward term trains the backward
    offsets and the backward term trains the forward offsets.
    """
    dtype = offsets_fwd.dtype
    pts_t = _const(points_t, dtype)
    pts_t1 = _const(points_t1, dtype)
    if offsets_fwd.shape != pts_t.shape or offsets_bwd.shape != pts_t1.shape:
        raise ConfigError("offsets must match their contour point counts")

    j = _snap_indices(pts_t + offsets_fwd, pts_t1.numpy())
    round_fwd = pts_t1[j] + offsets_bwd[j]  # (N_t, 2)
    loss_fwd = _norm_sum(pts_t - round_fwd)

    k = _snap_indices(pts_t1 + offsets_bwd, pts_t.numpy())
    round_bwd = pts_t[k] + offsets_fwd[k]  # (N_t1, 2)
    loss_bwd = _norm_sum(pts_t1 - round_bwd)
    return loss_fwd + loss_bwd


def mech_normal_loss(offsets: torch.Tensor, normals: NormalField | np.ndarray):
    """L1 gap between unit normals and unit offsets over interior points.

    Offsets shorter than 1e-9 count as a zero direction and contribute the
    L1 norm of their normal.
    """
    nrm = normals.normals if isinstance(normals, NormalField) else np.asarray(normals)
    interior = offsets[1:-1]
    if interior.shape[0] != nrm.shape[0]:
        raise ConfigError(
            f"normals rows ({nrm.shape[0]}) must equal interior offsets ({interior.shape[0]})"
        )
    n_unit = _safe_unit(_const(nrm, offsets.dtype))
    o_unit = _safe_unit(interior)
    return (n_unit - o_unit).abs().sum()


def mech_linear_loss(points) -> torch.Tensor:
    """Total deviation of consecutive point spacings from their mean.

    In training this receives snapped forward-displaced points, which are
    constants, so the term shapes the energy landscape without carrying
    gradient.
    """
    pts = points if torch.is_tensor(points) else torch.as_tensor(np.asarray(points))
    if pts.shape[0] < 2:
        return pts.sum() * 0.0
    d = _row_lengths(pts[1:] - pts[:-1])
    return (d - d.mean()).abs().sum()


def photometric_loss(
    image_t, image_t1, points_t, points_t1,
    offsets_fwd: torch.Tensor, offsets_bwd: torch.Tensor,
):
    """Brightness constancy at contour points under the predicted offsets."""
    dtype = offsets_fwd.dtype
    img_t = _const(image_t, dtype)
    img_t1 = _const(image_t1, dtype)
    pts_t = _const(points_t, dtype)
    pts_t1 = _const(points_t1, dtype)

    ref_t = bilinear_sample(img_t, pts_t, warn=False)
    moved_t = bilinear_sample(img_t1, pts_t + offsets_fwd, warn=False)
    ref_t1 = bilinear_sample(img_t1, pts_t1, warn=False)
    moved_t1 = bilinear_sample(img_t, pts_t1 + offsets_bwd, warn=False)
    return (ref_t - moved_t).abs().sum() + (ref_t1 - moved_t1).abs().sum()


@dataclass
class LossBundle:
    cycle: torch.Tensor
    mech_normal: torch.Tensor
    mech_linear: torch.Tensor
    photometric: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "cycle": float(self.cycle.detach()),
            "mech_normal": float(self.mech_normal.detach()),
            "mech_linear": float(self.mech_linear.detach()),
            "photometric": float(self.photometric.detach()),
            "total": float(self.total.detach()),
        }


def total_loss(
    image_t, image_t1,
    points_t, points_t1,
    offsets_fwd: torch.Tensor, offsets_bwd: torch.Tensor,
    normals_t: NormalField | np.ndarray,
    enabled=DEFAULT_LOSSES,
) -> LossBundle:
    """Sum of the enabled loss components; disabled ones are reported as 0."""
    enabled = tuple(enabled)
    if not enabled:
        raise ConfigError("at least one loss must be enabled")
    for name in enabled:
        if name not in LOSS_NAMES:
            raise ConfigError(f"unknown loss {name!r}, expected one of {LOSS_NAMES}")

    dtype = offsets_fwd.dtype
    zero = offsets_fwd.sum() * 0.0
    parts = {name: zero for name in LOSS_NAMES}
    if "cycle" in enabled:
        parts["cycle"] = cycle_loss(points_t, points_t1, offsets_fwd, offsets_bwd)
    if "mech_normal" in enabled:
        parts["mech_normal"] = mech_normal_loss(offsets_fwd, normals_t)
    if "mech_linear" in enabled:
        pts_t = _const(points_t, dtype)
        pts_t1 = _const(points_t1, dtype)
        j = _snap_indices(pts_t + offsets_fwd, pts_t1.numpy())
        parts["mech_linear"] = mech_linear_loss(pts_t1[j])
    if "photometric" in enabled:
        parts["photometric"] = photometric_loss(
            image_t, image_t1, points_t, points_t1, offsets_fwd, offsets_bwd
        )
    total = sum(parts[name] for name in enabled)
    return LossBundle(
        cycle=parts["cycle"],
        mech_normal=parts["mech_normal"],
        mech_linear=parts["mech_linear"],
        photometric=parts["photometric"],
        total=total,
    )
