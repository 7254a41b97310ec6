"""Correspondence as damped least squares over per-point offsets.

Each interior contour point contributes three residuals: a torsion term
(sine of the angle between its offset and the local normal, pushing motion
along the normal), a spring term (deviation of consecutive displaced-point
distances from their mean, keeping spacing even), and an attachment term
(distance from the displaced point to the target contour polyline). The
squared residual sum is minimized with Levenberg-Marquardt from zero
offsets, and the displaced points are snapped onto the target contour to
read off the correspondence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteEnergyError, ShortContourError
from .geometry import (
    Contour,
    CorrespondenceMap,
    NormalField,
    _chain_normals,
    _fill_degenerate,
    snap_phi,
)

_EPS = 1e-9


@dataclass(frozen=True)
class MechEnergyConfig:
    spring_weight: float = 1.0
    max_iterations: int = 60
    lm_damping_init: float = 1e-3
    convergence_tol: float = 1e-10

    def __post_init__(self):
        if self.spring_weight < 0:
            raise ConfigError(f"spring_weight must be >= 0, got {self.spring_weight}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.lm_damping_init <= 0:
            raise ConfigError(f"lm_damping_init must be > 0, got {self.lm_damping_init}")
        if self.convergence_tol < 0:
            raise ConfigError(f"convergence_tol must be >= 0, got {self.convergence_tol}")


@dataclass(frozen=True)
class MechSolution:
    offsets: np.ndarray  # (N, 2) optimized per-point offsets
    correspondence: CorrespondenceMap
    final_energy: float
    iterations_used: int
    energy_trace: np.ndarray  # (iterations_used + 1,) accepted energies


def _polyline_distance(points: np.ndarray, poly: np.ndarray):
    """Distance from each point to the nearest spot on a polyline.

    Returns (dist, grad) where grad is d dist / d point, zero where the
    point sits exactly on the polyline.
    """
    if poly.shape[0] == 1:
        diff = points - poly[0]
        dist = np.linalg.norm(diff, axis=1)
    else:
        a = poly[:-1][None, :, :]
        ab = (poly[1:] - poly[:-1])[None, :, :]
        ap = points[:, None, :] - a
        denom = (ab * ab).sum(-1)
        t = (ap * ab).sum(-1) / np.where(denom > 0, denom, 1.0)
        t = np.clip(t, 0.0, 1.0)
        hit = a + t[..., None] * ab
        residual = points[:, None, :] - hit
        d2 = (residual * residual).sum(-1)
        best = np.argmin(d2, axis=1)
        rows = np.arange(points.shape[0])
        diff = residual[rows, best]
        dist = np.sqrt(d2[rows, best])
    safe = np.maximum(dist, _EPS)[:, None]
    grad = np.where(dist[:, None] > _EPS, diff / safe, 0.0)
    return dist, grad


def _check_inputs(offsets, contour_t: Contour, contour_t1: Contour):
    offsets = np.asarray(offsets, dtype=np.float64)
    n = len(contour_t)
    if n < 3:
        raise ShortContourError(f"need at least 3 source points, got {n}")
    if offsets.shape != (n, 2):
        raise ConfigError(f"offsets must be ({n}, 2), got {offsets.shape}")
    if len(contour_t1) == 0:
        raise ShortContourError("target contour is empty")
    return offsets


def mech_residuals(
    offsets,
    contour_t: Contour,
    contour_t1: Contour,
    normals: NormalField,
    config: MechEnergyConfig,
) -> np.ndarray:
    """Residual vector, one (torsion, spring, attachment) triple per interior point.

    Distances d_j run over all consecutive displaced-point gaps; the spring
    row of interior point i uses the gap between displaced points i and i+1
    against the mean of all gaps.
    """
    offsets = _check_inputs(offsets, contour_t, contour_t1)
    pts = contour_t.points
    n = pts.shape[0]
    q = pts + offsets

    o_int = offsets[1:-1]
    nrm = normals.normals
    if nrm.shape[0] != n - 2:
        raise ConfigError(f"normals rows ({nrm.shape[0]}) must equal interior count ({n - 2})")
    olen = np.linalg.norm(o_int, axis=1)
    cross = nrm[:, 0] * o_int[:, 1] - nrm[:, 1] * o_int[:, 0]
    torsion = np.where(olen > _EPS, cross / np.maximum(olen, _EPS), 0.0)

    gaps = np.diff(q, axis=0)
    d = np.linalg.norm(gaps, axis=1)
    spring = np.sqrt(config.spring_weight) * (d[1 : n - 1] - d.mean())

    attach, _ = _polyline_distance(q[1:-1], contour_t1.points)
    return np.column_stack([torsion, spring, attach]).ravel()


def residual_jacobian(
    offsets,
    contour_t: Contour,
    contour_t1: Contour,
    normals: NormalField,
    config: MechEnergyConfig,
):
    """Residuals plus their analytic Jacobian w.r.t. the flattened offsets.

    The torsion term is not differentiable at zero offset; its row is set to
    zero there, which is what lets the solver leave the zero-offset start.
    """
    offsets = _check_inputs(offsets, contour_t, contour_t1)
    pts = contour_t.points
    n = pts.shape[0]
    q = pts + offsets
    nrm = normals.normals

    o_int = offsets[1:-1]
    olen = np.linalg.norm(o_int, axis=1)
    cross = nrm[:, 0] * o_int[:, 1] - nrm[:, 1] * o_int[:, 0]
    live = olen > _EPS
    safe = np.maximum(olen, _EPS)
    torsion = np.where(live, cross / safe, 0.0)
    dt_dx = np.where(live, -nrm[:, 1] / safe - cross * o_int[:, 0] / safe**3, 0.0)
    dt_dy = np.where(live, nrm[:, 0] / safe - cross * o_int[:, 1] / safe**3, 0.0)

    gaps = np.diff(q, axis=0)
    d = np.linalg.norm(gaps, axis=1)
    u = np.where(d[:, None] > _EPS, gaps / np.maximum(d, _EPS)[:, None], 0.0)
    spring = np.sqrt(config.spring_weight) * (d[1 : n - 1] - d.mean())
    # gap length derivatives w.r.t. all 2n offset params
    dgap = np.zeros((n - 1, 2 * n))
    cols = 2 * np.arange(n - 1)
    dgap[np.arange(n - 1), cols] = -u[:, 0]
    dgap[np.arange(n - 1), cols + 1] = -u[:, 1]
    dgap[np.arange(n - 1), cols + 2] = u[:, 0]
    dgap[np.arange(n - 1), cols + 3] = u[:, 1]
    jac_spring = np.sqrt(config.spring_weight) * (
        dgap[1 : n - 1] - dgap.mean(axis=0)[None, :]
    )

    attach, agrad = _polyline_distance(q[1:-1], contour_t1.points)

    rows = 3 * (n - 2)
    jac = np.zeros((rows, 2 * n))
    interior_cols = 2 * np.arange(1, n - 1)
    r_t = 3 * np.arange(n - 2)
    jac[r_t, interior_cols] = dt_dx
    jac[r_t, interior_cols + 1] = dt_dy
    jac[r_t + 1] = jac_spring
    jac[r_t + 2, interior_cols] = agrad[:, 0]
    jac[r_t + 2, interior_cols + 1] = agrad[:, 1]

    residuals = np.column_stack([torsion, spring, attach]).ravel()
    return residuals, jac


def _interior_normals(contour: Contour) -> NormalField:
    # orientation is irrelevant for the torsion term, so no mask probe here
    normals, degenerate = _chain_normals(contour.points)
    normals = _fill_degenerate(normals, degenerate)
    return NormalField(normals=normals, outward=True)


def solve_mechanical(
    contour_t: Contour,
    contour_t1: Contour,
    config: MechEnergyConfig | None = None,
) -> MechSolution:
    """Minimize the matching energy and snap the result onto the target.

    Levenberg-Marquardt with additive damping: a step that lowers the
    energy is accepted and the damping divided by 10, otherwise the damping
    is multiplied by 10 and the step recomputed. Accepted energies never
    increase. Stops after max_iterations accepted steps, when an accepted
    improvement falls below convergence_tol, or when no descent step can be
    found.
    """
    cfg = config or MechEnergyConfig()
    n = len(contour_t)
    if n < 3:
        raise ShortContourError(f"need at least 3 source points, got {n}")
    normals = _interior_normals(contour_t)

    x = np.zeros(2 * n)
    r, jac = residual_jacobian(x.reshape(n, 2), contour_t, contour_t1, normals, cfg)
    energy = float(r @ r)
    if not np.isfinite(energy):
        raise NonFiniteEnergyError(f"initial energy is {energy}")
    trace = [energy]
    lam = cfg.lm_damping_init
    accepted = 0
    eye = np.eye(2 * n)

    while accepted < cfg.max_iterations:
        jtj = jac.T @ jac
        jtr = jac.T @ r
        improvement = None
        while lam <= 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * eye, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(delta)):
                lam *= 10.0
                continue
            x_new = x + delta
            r_new = mech_residuals(
                x_new.reshape(n, 2), contour_t, contour_t1, normals, cfg
            )
            e_new = float(r_new @ r_new)
            if np.isfinite(e_new) and e_new < energy:
                improvement = energy - e_new
                x, energy = x_new, e_new
                trace.append(energy)
                lam = max(lam / 10.0, 1e-15)
                accepted += 1
                break
            lam *= 10.0
        if improvement is None:
            break  # no descent direction left at any damping
        if improvement < cfg.convergence_tol:
            break
        r, jac = residual_jacobian(x.reshape(n, 2), contour_t, contour_t1, normals, cfg)

    offsets = x.reshape(n, 2)
    corr = snap_phi(
        contour_t.points + offsets, contour_t1, source_frame=contour_t.frame_index
    )
    return MechSolution(
        offsets=offsets,
        correspondence=corr,
        final_energy=energy,
        iterations_used=accepted,
        energy_trace=np.asarray(trace),
    )
