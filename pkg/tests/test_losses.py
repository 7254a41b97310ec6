from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from contourtrack.errors import ConfigError
from contourtrack.geometry import NormalField
from contourtrack.losses import (
    DEFAULT_LOSSES,
    LossBundle,
    cycle_loss,
    mech_linear_loss,
    mech_normal_loss,
    photometric_loss,
    total_loss,
)


# ---------------------------------------------------------------- oracles


def nearest_index(point, targets):
    best_i, best_d = 0, math.inf
    for i, t in enumerate(targets):
        d = math.hypot(point[0] - t[0], point[1] - t[1])
        if d < best_d:
            best_i, best_d = i, d
    return best_i


def cycle_oracle(pts_t, pts_t1, o_f, o_b):
    """Scalar loop recomputation of the two-way round-trip loss."""
    total = 0.0
    for i in range(len(pts_t)):
        moved = (pts_t[i][0] + o_f[i][0], pts_t[i][1] + o_f[i][1])
        j = nearest_index(moved, pts_t1)
        back = (pts_t1[j][0] + o_b[j][0], pts_t1[j][1] + o_b[j][1])
        total += math.hypot(pts_t[i][0] - back[0], pts_t[i][1] - back[1])
    for j in range(len(pts_t1)):
        moved = (pts_t1[j][0] + o_b[j][0], pts_t1[j][1] + o_b[j][1])
        i = nearest_index(moved, pts_t)
        fwd = (pts_t[i][0] + o_f[i][0], pts_t[i][1] + o_f[i][1])
        total += math.hypot(pts_t1[j][0] - fwd[0], pts_t1[j][1] - fwd[1])
    return total


def normal_oracle(offsets, normals):
    total = 0.0
    for k, n in enumerate(normals):
        o = offsets[k + 1]
        nn = math.hypot(*n)
        nu = (n[0] / nn, n[1] / nn)
        on = math.hypot(*o)
        ou = (0.0, 0.0) if on < 1e-9 else (o[0] / on, o[1] / on)
        total += abs(nu[0] - ou[0]) + abs(nu[1] - ou[1])
    return total


def linear_oracle(points):
    d = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(points, points[1:])]
    mean = sum(d) / len(d)
    return sum(abs(x - mean) for x in d)


def bilinear_oracle(img, x, y):
    """Weight-sum form, an independent formulation of the interpolation."""
    h, w = img.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = min(int(math.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(math.floor(y)), h - 2) if h > 1 else 0
    fx, fy = x - x0, y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


def photometric_oracle(img_t, img_t1, pts_t, pts_t1, o_f, o_b):
    total = 0.0
    for i, p in enumerate(pts_t):
        a = bilinear_oracle(img_t, p[0], p[1])
        b = bilinear_oracle(img_t1, p[0] + o_f[i][0], p[1] + o_f[i][1])
        total += abs(a - b)
    for j, p in enumerate(pts_t1):
        a = bilinear_oracle(img_t1, p[0], p[1])
        b = bilinear_oracle(img_t, p[0] + o_b[j][0], p[1] + o_b[j][1])
        total += abs(a - b)
    return total


def rand_instance(seed, n_t=7, n_t1=9):
    rng = np.random.default_rng(seed)
    pts_t = rng.uniform(2, 14, size=(n_t, 2))
    pts_t1 = rng.uniform(2, 14, size=(n_t1, 2))
    o_f = rng.uniform(-1.5, 1.5, size=(n_t, 2))
    o_b = rng.uniform(-1.5, 1.5, size=(n_t1, 2))
    return pts_t, pts_t1, o_f, o_b


# ---------------------------------------------------------------- cycle


def test_cycle_zero_on_identical_contours_zero_offsets():
    pts = np.array([[1.0, 2.0], [3.0, 4.5], [5.5, 2.0], [4.0, 0.5]])
    o = torch.zeros(4, 2, dtype=torch.float64)
    loss = cycle_loss(pts, pts, o, o)
    assert loss.item() == 0.0


def test_cycle_zero_on_perfect_round_trip():
    pts_t = np.array([[1.0, 1.0]])
    pts_t1 = np.array([[3.0, 1.0]])
    o_f = torch.tensor([[2.0, 0.0]], dtype=torch.float64)
    o_b = torch.tensor([[-2.0, 0.0]], dtype=torch.float64)
    assert cycle_loss(pts_t, pts_t1, o_f, o_b).item() == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_cycle_matches_oracle(seed):
    pts_t, pts_t1, o_f, o_b = rand_instance(seed)
    loss = cycle_loss(
        pts_t, pts_t1,
        torch.tensor(o_f, dtype=torch.float64),
        torch.tensor(o_b, dtype=torch.float64),
    )
    want = cycle_oracle(pts_t.tolist(), pts_t1.tolist(), o_f.tolist(), o_b.tolist())
    assert loss.item() == pytest.approx(want, rel=1e-12)


def test_cycle_forward_offsets_only_trained_by_backward_term():
    # single source point: the forward term depends on o_fwd only through
    # the snap index, so the whole o_fwd gradient comes from the backward term
    pts_t = np.array([[0.0, 0.0]])
    pts_t1 = np.array([[5.0, 0.0], [0.0, 5.0]])
    o_f = torch.tensor([[1.0, 0.5]], dtype=torch.float64, requires_grad=True)
    o_b = torch.tensor([[0.5, 0.0], [0.0, -0.5]], dtype=torch.float64, requires_grad=True)
    loss = cycle_loss(pts_t, pts_t1, o_f, o_b)
    loss.backward()

    # hand gradient of the backward term w.r.t. o_fwd
    p = np.array([0.0, 0.0])
    of = np.array([1.0, 0.5])
    ob = np.array([[0.5, 0.0], [0.0, -0.5]])
    grad = np.zeros(2)
    for j, t in enumerate(pts_t1):
        moved = t + ob[j]
        # both displaced targets snap onto the single source point
        diff = p + of - t
        grad += diff / np.linalg.norm(diff)
    np.testing.assert_allclose(o_f.grad.numpy()[0], grad, atol=1e-12)
    assert o_b.grad.abs().sum() > 0


def test_cycle_shape_mismatch_raises():
    with pytest.raises(ConfigError):
        cycle_loss(
            np.zeros((3, 2)), np.zeros((4, 2)),
            torch.zeros(4, 2), torch.zeros(4, 2),
        )


# ---------------------------------------------------------------- mech normal


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_mech_normal_zero_when_offsets_equal_normals():
    rng = np.random.default_rng(31)
    nrm = unit_rows(rng.normal(size=(5, 2)))
    offsets = np.zeros((7, 2))
    offsets[1:-1] = nrm
    loss = mech_normal_loss(torch.tensor(offsets, dtype=torch.float64), NormalField(nrm))
    assert loss.item() == 0.0
    # scaling by powers of two keeps the quotient bits identical
    offsets4 = np.zeros((7, 2))
    offsets4[1:-1] = 4.0 * nrm
    loss4 = mech_normal_loss(torch.tensor(offsets4, dtype=torch.float64), NormalField(nrm))
    assert loss4.item() == 0.0


def test_mech_normal_endpoints_excluded():
    rng = np.random.default_rng(32)
    nrm = unit_rows(rng.normal(size=(4, 2)))
    offsets = np.zeros((6, 2))
    offsets[1:-1] = nrm
    offsets[0] = [99.0, -7.0]
    offsets[-1] = [-55.0, 3.0]
    loss = mech_normal_loss(torch.tensor(offsets, dtype=torch.float64), NormalField(nrm))
    assert loss.item() == 0.0


def test_mech_normal_zero_offset_contributes_l1_of_normal():
    nrm = np.array([[0.6, 0.8]])
    offsets = np.zeros((3, 2))
    loss = mech_normal_loss(torch.tensor(offsets, dtype=torch.float64), NormalField(nrm))
    assert loss.item() == pytest.approx(0.6 + 0.8, abs=1e-15)


def test_mech_normal_opposed_offsets():
    nrm = np.array([[1.0, 0.0], [0.0, 1.0]])
    offsets = np.zeros((4, 2))
    offsets[1:-1] = -nrm
    loss = mech_normal_loss(torch.tensor(offsets, dtype=torch.float64), NormalField(nrm))
    assert loss.item() == pytest.approx(4.0, abs=1e-15)


@pytest.mark.parametrize("seed", [10, 11, 12])
def test_mech_normal_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    nrm = unit_rows(rng.normal(size=(6, 2)))
    offsets = rng.uniform(-2, 2, size=(8, 2))
    offsets[3] = 0.0  # exercise the zero-offset branch
    loss = mech_normal_loss(torch.tensor(offsets, dtype=torch.float64), NormalField(nrm))
    assert loss.item() == pytest.approx(normal_oracle(offsets, nrm), rel=1e-12)


def test_mech_normal_gradient_finite():
    rng = np.random.default_rng(40)
    nrm = unit_rows(rng.normal(size=(4, 2)))
    offsets = torch.tensor(
        rng.uniform(0.5, 1.5, size=(6, 2)), dtype=torch.float64, requires_grad=True
    )
    loss = mech_normal_loss(offsets, NormalField(nrm))
    loss.backward()
    assert torch.isfinite(offsets.grad).all()
    # endpoint offsets never receive gradient
    assert (offsets.grad[0] == 0).all() and (offsets.grad[-1] == 0).all()


# ---------------------------------------------------------------- mech linear


def test_mech_linear_zero_on_equal_spacing():
    pts = np.array([[float(i), 2.0] for i in range(9)])
    assert mech_linear_loss(pts).item() == 0.0


def test_mech_linear_single_gap_zero():
    assert mech_linear_loss(np.array([[0.0, 0.0], [3.0, 4.0]])).item() == 0.0


def test_mech_linear_single_point_zero():
    assert mech_linear_loss(np.array([[1.0, 1.0]])).item() == 0.0


@pytest.mark.parametrize("seed", [20, 21, 22])
def test_mech_linear_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 20, size=(10, 2))
    loss = mech_linear_loss(torch.tensor(pts, dtype=torch.float64))
    assert loss.item() == pytest.approx(linear_oracle(pts.tolist()), rel=1e-12)


# ---------------------------------------------------------------- photometric


def test_photometric_zero_on_constant_images_any_offsets():
    rng = np.random.default_rng(50)
    img = np.full((12, 12), 0.37)
    pts_t = rng.uniform(1, 10, size=(6, 2))
    pts_t1 = rng.uniform(1, 10, size=(5, 2))
    o_f = torch.tensor(rng.uniform(-2, 2, size=(6, 2)), dtype=torch.float64)
    o_b = torch.tensor(rng.uniform(-2, 2, size=(5, 2)), dtype=torch.float64)
    loss = photometric_loss(img, img, pts_t, pts_t1, o_f, o_b)
    assert loss.item() == 0.0


def test_photometric_zero_on_identical_images_zero_offsets():
    rng = np.random.default_rng(51)
    img = rng.uniform(size=(12, 12))
    pts_t = rng.uniform(1, 10, size=(6, 2))
    pts_t1 = rng.uniform(1, 10, size=(4, 2))
    loss = photometric_loss(
        img, img, pts_t, pts_t1,
        torch.zeros(6, 2, dtype=torch.float64),
        torch.zeros(4, 2, dtype=torch.float64),
    )
    assert loss.item() == 0.0


@pytest.mark.parametrize("seed", [30, 31, 32])
def test_photometric_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    img_t = rng.uniform(size=(10, 10))
    img_t1 = rng.uniform(size=(10, 10))
    pts_t = rng.uniform(1, 8, size=(5, 2))
    pts_t1 = rng.uniform(1, 8, size=(6, 2))
    o_f = rng.uniform(-1, 1, size=(5, 2))
    o_b = rng.uniform(-1, 1, size=(6, 2))
    loss = photometric_loss(
        img_t, img_t1, pts_t, pts_t1,
        torch.tensor(o_f, dtype=torch.float64),
        torch.tensor(o_b, dtype=torch.float64),
    )
    want = photometric_oracle(
        img_t, img_t1, pts_t.tolist(), pts_t1.tolist(), o_f.tolist(), o_b.tolist()
    )
    assert loss.item() == pytest.approx(want, rel=1e-10)


def test_photometric_trains_both_offset_sets():
    rng = np.random.default_rng(52)
    img_t = rng.uniform(size=(10, 10))
    img_t1 = rng.uniform(size=(10, 10))
    o_f = torch.tensor(rng.uniform(-1, 1, size=(4, 2)), requires_grad=True, dtype=torch.float64)
    o_b = torch.tensor(rng.uniform(-1, 1, size=(5, 2)), requires_grad=True, dtype=torch.float64)
    loss = photometric_loss(
        img_t, img_t1, rng.uniform(2, 7, size=(4, 2)), rng.uniform(2, 7, size=(5, 2)), o_f, o_b
    )
    loss.backward()
    assert o_f.grad.abs().sum() > 0
    assert o_b.grad.abs().sum() > 0


# ---------------------------------------------------------------- total


def make_bundle_inputs(seed=60):
    rng = np.random.default_rng(seed)
    img_t = rng.uniform(size=(16, 16))
    img_t1 = rng.uniform(size=(16, 16))
    pts_t = rng.uniform(2, 13, size=(6, 2))
    pts_t1 = rng.uniform(2, 13, size=(7, 2))
    o_f = torch.tensor(rng.uniform(-1, 1, size=(6, 2)), dtype=torch.float64)
    o_b = torch.tensor(rng.uniform(-1, 1, size=(7, 2)), dtype=torch.float64)
    nrm = unit_rows(rng.normal(size=(4, 2)))
    return img_t, img_t1, pts_t, pts_t1, o_f, o_b, NormalField(nrm)


def test_total_is_sum_of_enabled():
    args = make_bundle_inputs()
    bundle = total_loss(*args, enabled=DEFAULT_LOSSES)
    assert isinstance(bundle, LossBundle)
    assert bundle.total.item() == pytest.approx(
        bundle.cycle.item() + bundle.mech_normal.item(), rel=1e-12
    )
    assert bundle.mech_linear.item() == 0.0
    assert bundle.photometric.item() == 0.0


def test_total_all_losses():
    args = make_bundle_inputs()
    bundle = total_loss(*args, enabled=("cycle", "mech_normal", "mech_linear", "photometric"))
    parts = (
        bundle.cycle.item() + bundle.mech_normal.item()
        + bundle.mech_linear.item() + bundle.photometric.item()
    )
    assert bundle.total.item() == pytest.approx(parts, rel=1e-12)
    assert bundle.photometric.item() > 0


def test_total_rejects_bad_flags():
    args = make_bundle_inputs()
    with pytest.raises(ConfigError):
        total_loss(*args, enabled=())
    with pytest.raises(ConfigError):
        total_loss(*args, enabled=("cycle", "bogus"))


def test_total_components_match_direct_calls():
    img_t, img_t1, pts_t, pts_t1, o_f, o_b, nf = make_bundle_inputs()
    bundle = total_loss(
        img_t, img_t1, pts_t, pts_t1, o_f, o_b, nf,
        enabled=("cycle", "mech_normal", "photometric"),
    )
    assert bundle.cycle.item() == cycle_loss(pts_t, pts_t1, o_f, o_b).item()
    assert bundle.mech_normal.item() == mech_normal_loss(o_f, nf).item()
    assert bundle.photometric.item() == photometric_loss(
        img_t, img_t1, pts_t, pts_t1, o_f, o_b
    ).item()
    floats = bundle.as_floats()
    assert floats["mech_linear"] == 0.0
    assert floats["total"] == pytest.approx(
        floats["cycle"] + floats["mech_normal"] + floats["photometric"], rel=1e-12
    )
