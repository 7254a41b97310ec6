"""Contour primitives: extraction from masks, normals, snapping, sampling.

Coordinates are (x, y) in pixel units with y pointing down. Contours are
ordered open chains of points; the point order is what downstream losses
and metrics index into, so extraction is deterministic down to the anchor
point and traversal direction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import (
    DegenerateTangentWarning,
    EmptyContourError,
    EmptyMaskError,
    FragmentedBoundaryWarning,
    NonFiniteSampleWarning,
    SampleClampedWarning,
    ShapeMismatchError,
    ShortContourError,
    ConfigError,
)


@dataclass(frozen=True)
class Contour:
    """Ordered chain of boundary points for one frame."""

    points: np.ndarray  # (N, 2) float64, (x, y) pixel coords
    frame_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ShapeMismatchError(f"contour points must be (N, 2), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class NormalField:
    """Unit normals for the interior points of a contour.

    Row k holds the normal of contour index k + 1; endpoints have no
    central-difference tangent and therefore no normal.
    """

    normals: np.ndarray  # (N - 2, 2) unit vectors
    outward: bool = True

    def __post_init__(self):
        arr = np.asarray(self.normals, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ShapeMismatchError(f"normals must be (N - 2, 2), got {arr.shape}")
        object.__setattr__(self, "normals", arr)

    def at(self, index: int) -> np.ndarray:
        """Normal at a contour index, clamped into the interior range."""
        k = int(np.clip(index, 1, self.normals.shape[0]))
        return self.normals[k - 1]


@dataclass(frozen=True)
class CorrespondenceMap:
    """Per-point nearest-neighbor assignment from one contour onto another."""

    source_frame: int
    target_frame: int
    match: np.ndarray  # (N_source,) int64 indices into the target contour
    snap_distance: np.ndarray  # (N_source,) float64 pixel distances

    def __post_init__(self):
        object.__setattr__(self, "match", np.asarray(self.match, dtype=np.int64))
        object.__setattr__(
            self, "snap_distance", np.asarray(self.snap_distance, dtype=np.float64)
        )

    def __len__(self) -> int:
        return self.match.shape[0]


def as_binary_mask(mask) -> np.ndarray:
    """Coerce an array-like into a 2D uint8 mask with values in {0, 1}."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"mask must be 2D, got shape {arr.shape}")
    return (arr > 0).astype(np.uint8)


# Moore neighborhood in clockwise order for y-down image coordinates,
# starting from the west neighbor.
_RING = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_RING_INDEX = {d: k for k, d in enumerate(_RING)}


def _trace_boundary(fg: np.ndarray) -> list[tuple[int, int]]:
    """Trace the outer boundary of the component at the scan-first pixel.

    Returns the closed cycle of boundary pixels in clockwise order (y down),
    starting at the leftmost-column topmost-row foreground pixel. Pixels can
    repeat where the component is one pixel wide.
    """
    h, w = fg.shape
    cols, rows = np.nonzero(fg.T)  # column-major scan order
    sx, sy = int(cols[0]), int(rows[0])

    def is_fg(x, y):
        return 0 <= x < w and 0 <= y < h and fg[y, x]

    cur = (sx, sy)
    back = (sx, sy - 1)  # above the topmost pixel, always background
    seen: dict[tuple[tuple[int, int], tuple[int, int]], int] = {}
    chain: list[tuple[int, int]] = []
    while (cur, back) not in seen:
        seen[(cur, back)] = len(chain)
        chain.append(cur)
        k = _RING_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        for step in range(1, 9):
            dx, dy = _RING[(k + step) % 8]
            cand = (cur[0] + dx, cur[1] + dy)
            if is_fg(*cand):
                pdx, pdy = _RING[(k + step - 1) % 8]
                back = (cur[0] + pdx, cur[1] + pdy)
                cur = cand
                break
        else:
            return chain  # isolated pixel, no neighbors at all
    # the walk is a rho shape: an optional tail from the scan-chosen initial
    # backtrack, then the boundary cycle proper
    return chain[seen[(cur, back)]:]


def _anchor_key(anchor: str):
    if anchor != "leftmost-top":
        raise ConfigError(f"unknown anchor rule: {anchor!r}")
    return lambda p: (p[0], p[1])


def extract_contour(mask, frame_index: int = 0, anchor: str = "leftmost-top") -> Contour:
    """Extract the ordered boundary chain of the mask foreground.

    The outer boundary is traced with 8-connectivity, then every pixel lying
    on the image border is dropped. For a border-touching region this opens
    the cycle into a chain; if the border cuts it into several chains the
    longest one is kept and FragmentedBoundaryWarning is emitted. The chain
    starts at the anchor pixel (smallest x, then smallest y, among the valid
    endpoints or cycle members).
    """
    fg = as_binary_mask(mask).astype(bool)
    if not fg.any():
        raise EmptyMaskError("mask has no foreground pixels")
    h, w = fg.shape
    cycle = _trace_boundary(fg)

    def on_border(p):
        return p[0] in (0, w - 1) or p[1] in (0, h - 1)

    keep = [not on_border(p) for p in cycle]
    if not any(keep):
        raise EmptyContourError("boundary lies entirely on the image border")

    key = _anchor_key(anchor)
    if all(keep):
        # closed cycle, rotate it so the anchor pixel comes first
        idx = min(range(len(cycle)), key=lambda i: key(cycle[i]))
        chain = cycle[idx:] + cycle[:idx]
    else:
        # split into maximal kept runs, cyclically
        n = len(cycle)
        first_drop = keep.index(False)
        runs: list[list[tuple[int, int]]] = []
        run: list[tuple[int, int]] = []
        for off in range(1, n + 1):
            i = (first_drop + off) % n
            if keep[i]:
                run.append(cycle[i])
            elif run:
                runs.append(run)
                run = []
        if run:
            runs.append(run)
        if len(runs) > 1:
            warnings.warn(
                f"border clipping split the boundary into {len(runs)} chains, "
                "keeping the longest",
                FragmentedBoundaryWarning,
            )
        chain = max(runs, key=len)
        if key(chain[-1]) < key(chain[0]):
            chain = chain[::-1]
    return Contour(np.asarray(chain, dtype=np.float64), frame_index=frame_index)


def _chain_normals(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized 90-degree tangent rotations for interior points.

    Returns (normals, degenerate) where degenerate marks interior points
    whose central-difference tangent vanished.
    """
    tangents = 0.5 * (points[2:] - points[:-2])  # (N - 2, 2)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    length = np.linalg.norm(normals, axis=1)
    degenerate = length < 1e-12
    safe = np.where(degenerate, 1.0, length)
    return normals / safe[:, None], degenerate


def _fill_degenerate(normals: np.ndarray, degenerate: np.ndarray) -> np.ndarray:
    if not degenerate.any():
        return normals
    if degenerate.all():
        raise ShortContourError("all interior tangents are degenerate")
    warnings.warn(
        f"{int(degenerate.sum())} degenerate tangents, reusing neighbor normals",
        DegenerateTangentWarning,
    )
    out = normals.copy()
    valid = np.nonzero(~degenerate)[0]
    for i in np.nonzero(degenerate)[0]:
        j = valid[np.argmin(np.abs(valid - i))]
        out[i] = out[j]
    return out


def compute_normals(contour: Contour, mask) -> NormalField:
    """Outward unit normals at the interior points of a contour.

    Tangents are central differences of neighboring points, rotated 90
    degrees. The sign is fixed by probing the mask two pixels along each
    candidate normal: the side with the lower mask value is outside.
    """
    pts = contour.points
    if len(contour) < 3:
        raise ShortContourError(
            f"need at least 3 points for interior normals, got {len(contour)}"
        )
    normals, degenerate = _chain_normals(pts)
    normals = _fill_degenerate(normals, degenerate)

    fg = as_binary_mask(mask).astype(np.float64)
    interior = pts[1:-1]
    probe_plus = _bilinear_clamped(fg, interior + 2.0 * normals)
    probe_minus = _bilinear_clamped(fg, interior - 2.0 * normals)
    flip = probe_minus < probe_plus  # lower mask value marks the outside
    normals = np.where(flip[:, None], -normals, normals)
    return NormalField(normals=normals, outward=True)


def contour_interior_mask(contour: Contour, shape) -> np.ndarray:
    """Fill the closed polygon through the contour points into a binary mask.

    The closing edge is implicit, so chains that lost a run of border
    pixels still produce a sensible region. The result stands in for the
    original segmentation when only the contour survived, e.g. to orient
    normals with compute_normals.
    """
    from matplotlib.path import Path as _PolygonPath

    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1 or len(contour) < 3:
        return np.zeros((max(h, 0), max(w, 0)), dtype=np.uint8)
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    grid = np.column_stack([xs.ravel(), ys.ravel()])
    path = _PolygonPath(contour.points)
    # the radius sign that widens the path depends on its winding, so take
    # both: boundary pixels count as inside either way
    inside = path.contains_points(grid, radius=0.5) | path.contains_points(grid, radius=-0.5)
    return inside.reshape(h, w).astype(np.uint8)


def snap_phi(points, target: Contour, source_frame: int = -1) -> CorrespondenceMap:
    """Assign each point to the nearest target contour point.

    Exact distance ties resolve to the lowest target index. The snap is a
    hard assignment; nothing about it is differentiable.
    """
    if len(target) == 0:
        raise EmptyContourError("cannot snap onto an empty contour")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeMismatchError(f"points must be (M, 2), got {pts.shape}")
    diff = pts[:, None, :] - target.points[None, :, :]
    d2 = np.einsum("mkc,mkc->mk", diff, diff)
    match = np.argmin(d2, axis=1)  # first minimum, so ties pick the lowest index
    dist = np.sqrt(d2[np.arange(pts.shape[0]), match])
    return CorrespondenceMap(
        source_frame=source_frame,
        target_frame=target.frame_index,
        match=match,
        snap_distance=dist,
    )


def contour_index_of(contour: Contour, point) -> int:
    """Index of the contour point nearest to an arbitrary coordinate."""
    if len(contour) == 0:
        raise EmptyContourError("cannot index into an empty contour")
    p = np.asarray(point, dtype=np.float64).reshape(2)
    d2 = ((contour.points - p[None, :]) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def _bilinear_clamped(field: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Internal numpy bilinear lookup with silent border clamping."""
    out = bilinear_sample(field, coords, warn=False)
    return np.asarray(out)


def bilinear_sample(field, coords, warn: bool = True):
    """Bilinearly interpolate a (H, W) or (H, W, C) field at (x, y) coords.

    Accepts numpy arrays or torch tensors; torch inputs keep their autograd
    graph, so gradients flow into both the coordinates and the field values.
    Out-of-range coordinates are clamped to the border (and flagged), and a
    NaN anywhere in a touched cell propagates into the output.

    The interpolation is evaluated in lerp form, which reproduces lattice
    values and constant fields exactly.
    """
    torch_in = torch.is_tensor(field) or torch.is_tensor(coords)
    f = field if torch.is_tensor(field) else torch.as_tensor(np.asarray(field, dtype=np.float64))
    c = coords if torch.is_tensor(coords) else torch.as_tensor(np.asarray(coords, dtype=np.float64))
    if f.ndim not in (2, 3):
        raise ShapeMismatchError(f"field must be (H, W) or (H, W, C), got {tuple(f.shape)}")
    if c.ndim != 2 or c.shape[1] != 2:
        raise ShapeMismatchError(f"coords must be (M, 2), got {tuple(c.shape)}")

    h, w = int(f.shape[0]), int(f.shape[1])
    x = c[:, 0].clamp(0.0, float(w - 1))
    y = c[:, 1].clamp(0.0, float(h - 1))
    if warn:
        clamped = (c[:, 0] < 0) | (c[:, 0] > w - 1) | (c[:, 1] < 0) | (c[:, 1] > h - 1)
        if bool(clamped.any()):
            warnings.warn(
                f"{int(clamped.sum())} sample coords clamped to the field border",
                SampleClampedWarning,
            )

    x0 = torch.floor(x).clamp(0.0, float(max(w - 2, 0)))
    y0 = torch.floor(y).clamp(0.0, float(max(h - 2, 0)))
    fx = x - x0
    fy = y - y0
    ix0 = x0.long()
    iy0 = y0.long()
    ix1 = torch.clamp(ix0 + 1, max=w - 1)
    iy1 = torch.clamp(iy0 + 1, max=h - 1)

    ia = f[iy0, ix0]
    ib = f[iy0, ix1]
    ic = f[iy1, ix0]
    id_ = f[iy1, ix1]
    if f.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    top = ia + fx * (ib - ia)
    bottom = ic + fx * (id_ - ic)
    out = top + fy * (bottom - top)

    if warn and bool(torch.isnan(out.detach()).any()):
        warnings.warn("sampled values contain NaN", NonFiniteSampleWarning)
    if not torch_in:
        return out.numpy()
    return out
