from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from contourtrack.errors import (
    DegenerateTangentWarning,
    EmptyContourError,
    EmptyMaskError,
    FragmentedBoundaryWarning,
    NonFiniteSampleWarning,
    SampleClampedWarning,
    ShapeMismatchError,
    ShortContourError,
)
from contourtrack.geometry import (
    Contour,
    bilinear_sample,
    compute_normals,
    contour_index_of,
    contour_interior_mask,
    extract_contour,
    snap_phi,
)


# ---------------------------------------------------------------- oracles


def nearest_index_bruteforce(point, targets):
    """Independent nearest-point scan; strict < keeps the lowest tied index."""
    best_i, best_d = 0, math.inf
    for i, t in enumerate(targets):
        d = math.hypot(point[0] - t[0], point[1] - t[1])
        if d < best_d:
            best_i, best_d = i, d
    return best_i, best_d


def square_perimeter_pixels(x0, y0, size):
    pts = set()
    for x in range(x0, x0 + size):
        for y in range(y0, y0 + size):
            if x in (x0, x0 + size - 1) or y in (y0, y0 + size - 1):
                pts.add((x, y))
    return pts


def assert_chain_8adjacent(points, allow_repeats=False):
    pts = [tuple(p) for p in np.asarray(points, dtype=int)]
    if not allow_repeats:
        assert len(set(pts)) == len(pts)
    for a, b in zip(pts, pts[1:]):
        assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1


def disk_mask(h, w, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r).astype(np.uint8)


# ---------------------------------------------------------------- extraction


def test_extract_border_anchored_strip():
    # foreground fills columns 0..3; everything except column 3 rows 1..6
    # lies on the image border and is dropped
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[:, 0:4] = 1
    c = extract_contour(mask)
    expected = np.array([[3.0, y] for y in range(1, 7)])
    np.testing.assert_array_equal(c.points, expected)


def test_extract_centered_square():
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[4:8, 4:8] = 1
    c = extract_contour(mask)
    assert len(c) == 12
    got = {(int(x), int(y)) for x, y in c.points}
    assert got == square_perimeter_pixels(4, 4, 4)
    assert_chain_8adjacent(c.points)
    # anchor pixel: smallest x, then smallest y
    assert tuple(c.points[0]) == (4.0, 4.0)
    # closed traversal: last point is 8-adjacent to the first
    a, b = c.points[-1], c.points[0]
    assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1


def test_extract_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        extract_contour(np.zeros((6, 6), dtype=np.uint8))


def test_extract_all_border_raises():
    mask = np.zeros((3, 3), dtype=np.uint8)
    mask[0, :] = 1
    with pytest.raises(EmptyContourError):
        extract_contour(mask)


def test_extract_deterministic():
    rng = np.random.default_rng(7)
    mask = disk_mask(40, 40, 19, 21, 11)
    a = extract_contour(mask)
    b = extract_contour(mask)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.frame_index == b.frame_index


def test_extract_fragmented_keeps_longest():
    # U shape touching the top border with both prongs; clipping row 0 cuts
    # the boundary cycle in two places
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[0:7, 2:4] = 1
    mask[0:7, 8:10] = 1
    mask[5:7, 2:10] = 1
    with pytest.warns(FragmentedBoundaryWarning):
        c = extract_contour(mask)
    assert len(c) >= 3
    assert_chain_8adjacent(c.points, allow_repeats=True)
    # nothing on the border survives
    assert (c.points > 0).all()
    assert (c.points < 11).all()


def test_extract_roundtrip_idempotent():
    mask = disk_mask(48, 48, 23, 25, 13)
    c = extract_contour(mask)
    canvas = np.zeros_like(mask)
    for x, y in c.points.astype(int):
        canvas[y, x] = 1
    refilled = ndimage.binary_fill_holes(canvas).astype(np.uint8)
    c2 = extract_contour(refilled)
    np.testing.assert_array_equal(c.points, c2.points)


def test_contour_rejects_bad_shape():
    with pytest.raises(ShapeMismatchError):
        Contour(np.zeros((4, 3)))


def test_interior_mask_rebuilds_disk():
    disk = disk_mask(40, 40, 20, 20, 13)
    c = extract_contour(disk)
    rebuilt = contour_interior_mask(c, disk.shape)
    np.testing.assert_array_equal(rebuilt, disk)
    # normals oriented against the rebuilt mask agree with the original
    nf_orig = compute_normals(c, disk)
    nf_poly = compute_normals(c, rebuilt)
    np.testing.assert_allclose(nf_poly.normals, nf_orig.normals)


def test_interior_mask_degenerate_inputs():
    tiny = Contour(np.array([[2.0, 2.0], [3.0, 2.0]]))
    assert contour_interior_mask(tiny, (5, 5)).sum() == 0


# ---------------------------------------------------------------- normals


def test_normals_straight_chain_foreground_below():
    pts = np.array([[x, 5.0] for x in range(2, 11)])
    mask = np.zeros((12, 14), dtype=np.uint8)
    mask[5:, :] = 1
    nf = compute_normals(Contour(pts), mask)
    assert nf.normals.shape == (len(pts) - 2, 2)
    np.testing.assert_array_equal(nf.normals, np.tile([0.0, -1.0], (len(pts) - 2, 1)))


def circle_contour(cx, cy, r, n):
    theta = 2 * np.pi * np.arange(n) / n
    pts = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
    return Contour(pts)


def test_normals_circle_radial_within_5deg():
    c = circle_contour(32.0, 32.0, 20.0, 126)
    mask = disk_mask(64, 64, 32, 32, 20)
    nf = compute_normals(c, mask)
    center = np.array([32.0, 32.0])
    radial = c.points[1:-1] - center
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    cosang = np.clip((nf.normals * radial).sum(axis=1), -1.0, 1.0)
    ang = np.degrees(np.arccos(cosang))
    assert ang.max() < 5.0
    # outward means pointing away from the disk center
    assert (cosang > 0).all()


def test_normals_rasterized_disk_mostly_radial():
    # pixel chains wobble at the cardinal extremes, so the bound is loose
    mask = disk_mask(64, 64, 32, 32, 20)
    c = extract_contour(mask)
    nf = compute_normals(c, mask)
    center = np.array([32.0, 32.0])
    radial = c.points[1:-1] - center
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    cosang = np.clip((nf.normals * radial).sum(axis=1), -1.0, 1.0)
    ang = np.degrees(np.arccos(cosang))
    assert np.median(ang) < 10.0
    assert ang.max() < 45.0
    assert (cosang > 0).all()


def test_normals_flip_with_inverted_mask():
    mask = disk_mask(64, 64, 32, 32, 20)
    c = extract_contour(mask)
    nf = compute_normals(c, mask)
    nf_inv = compute_normals(c, 1 - mask)
    np.testing.assert_allclose(nf_inv.normals, -nf.normals)


def test_normals_two_point_contour_raises():
    with pytest.raises(ShortContourError):
        compute_normals(Contour(np.array([[1.0, 1.0], [2.0, 1.0]])), np.ones((4, 4)))


def test_normals_degenerate_tangent_reuses_neighbor():
    # p[3] == p[1], so the tangent at index 2 vanishes
    pts = np.array([[2.0, 5.0], [3.0, 5.0], [4.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[5:, :] = 1
    with pytest.warns(DegenerateTangentWarning):
        nf = compute_normals(Contour(pts), mask)
    np.testing.assert_array_equal(nf.normals[1], nf.normals[0])


def test_normal_field_at_clamps_to_interior():
    mask = np.zeros((10, 12), dtype=np.uint8)
    mask[5:, :] = 1
    pts = np.array([[x, 5.0] for x in range(2, 8)])
    nf = compute_normals(Contour(pts), mask)
    np.testing.assert_array_equal(nf.at(0), nf.normals[0])
    np.testing.assert_array_equal(nf.at(len(pts) - 1), nf.normals[-1])
    np.testing.assert_array_equal(nf.at(2), nf.normals[1])


# ---------------------------------------------------------------- snapping


def test_snap_matches_bruteforce_100_instances():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = int(rng.integers(1, 30))
        k = int(rng.integers(1, 40))
        pts = rng.uniform(-50, 50, size=(m, 2))
        tgt = rng.uniform(-50, 50, size=(k, 2))
        cm = snap_phi(pts, Contour(tgt, frame_index=3), source_frame=2)
        for i in range(m):
            bi, bd = nearest_index_bruteforce(pts[i], tgt)
            assert cm.match[i] == bi
            assert cm.snap_distance[i] == pytest.approx(bd, rel=0, abs=1e-9)
    assert cm.source_frame == 2 and cm.target_frame == 3


@given(
    pts=st.lists(
        st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=12
    ),
    tgt=st.lists(
        st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=12
    ),
)
@settings(max_examples=60, deadline=None)
def test_snap_property_matches_bruteforce(pts, tgt):
    pts = np.asarray(pts, dtype=float)
    tgt = np.asarray(tgt, dtype=float)
    cm = snap_phi(pts, Contour(tgt))
    for i in range(len(pts)):
        bi, _ = nearest_index_bruteforce(pts[i], tgt)
        assert cm.match[i] == bi


def test_snap_tie_takes_lowest_index():
    pts = np.array([[0.0, 0.0]])
    tgt = np.array([[1.0, 0.0], [-1.0, 0.0]])
    cm = snap_phi(pts, Contour(tgt))
    assert cm.match[0] == 0
    assert cm.snap_distance[0] == 1.0


def test_snap_many_to_one():
    pts = np.tile([[4.0, 4.0]], (5, 1))
    tgt = np.array([[0.0, 0.0], [4.0, 4.5], [9.0, 9.0]])
    cm = snap_phi(pts, Contour(tgt))
    assert (cm.match == 1).all()


def test_snap_empty_target_raises():
    with pytest.raises(EmptyContourError):
        snap_phi(np.zeros((1, 2)), Contour(np.zeros((0, 2))))


def test_contour_index_of_bruteforce():
    rng = np.random.default_rng(3)
    tgt = rng.uniform(0, 30, size=(25, 2))
    c = Contour(tgt)
    for _ in range(50):
        p = rng.uniform(0, 30, size=2)
        bi, _ = nearest_index_bruteforce(p, tgt)
        assert contour_index_of(c, p) == bi


# ---------------------------------------------------------------- sampling


def test_bilinear_center_of_2x2():
    field = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_sample(field, np.array([[0.5, 0.5]]))
    assert out[0] == 1.5


def test_bilinear_lattice_exact():
    rng = np.random.default_rng(5)
    field = rng.uniform(size=(7, 9))
    xs, ys = np.meshgrid(np.arange(9), np.arange(7))
    coords = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    out = bilinear_sample(field, coords)
    np.testing.assert_array_equal(out, field[ys.ravel(), xs.ravel()])


def test_bilinear_constant_field_exact():
    field = np.full((6, 6), 0.37)
    rng = np.random.default_rng(9)
    coords = rng.uniform(0, 5, size=(40, 2))
    out = bilinear_sample(field, coords)
    assert (out == 0.37).all()


def test_bilinear_linear_along_axis_segments():
    # a bilinear field is reproduced exactly up to rounding
    a, b, c = 0.3, -0.7, 2.0
    xs, ys = np.meshgrid(np.arange(8, dtype=float), np.arange(8, dtype=float))
    field = a * xs + b * ys + c
    rng = np.random.default_rng(13)
    coords = rng.uniform(0, 7, size=(60, 2))
    out = bilinear_sample(field, coords)
    want = a * coords[:, 0] + b * coords[:, 1] + c
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_bilinear_gradients_match_finite_differences():
    rng = np.random.default_rng(17)
    field = torch.tensor(rng.uniform(size=(8, 8)))
    h = 1e-4
    for _ in range(100):
        xy = rng.uniform(0.3, 6.7, size=2)
        # skip near-lattice coords where the piecewise derivative jumps
        if min(abs(xy[0] - round(xy[0])), abs(xy[1] - round(xy[1]))) < 5 * h:
            continue
        coords = torch.tensor(np.array([xy]), requires_grad=True)
        out = bilinear_sample(field, coords)
        out.sum().backward()
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = h
            fp = bilinear_sample(field, torch.tensor(np.array([xy + shift]))).item()
            fm = bilinear_sample(field, torch.tensor(np.array([xy - shift]))).item()
            fd = (fp - fm) / (2 * h)
            an = coords.grad[0, axis].item()
            assert an == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_bilinear_gradients_flow_to_field():
    field = torch.rand(5, 5, dtype=torch.float64, requires_grad=True)
    coords = torch.tensor([[1.3, 2.6]], dtype=torch.float64)
    out = bilinear_sample(field, coords)
    out.sum().backward()
    touched = field.grad.nonzero().tolist()
    assert sorted(touched) == [[2, 1], [2, 2], [3, 1], [3, 2]]
    assert field.grad.sum().item() == pytest.approx(1.0)


def test_bilinear_clamps_and_warns():
    field = np.arange(9.0).reshape(3, 3)
    with pytest.warns(SampleClampedWarning):
        out = bilinear_sample(field, np.array([[-2.0, 1.0]]))
    assert out[0] == field[1, 0]


def test_bilinear_nan_propagates_and_warns():
    field = np.ones((4, 4))
    field[1, 1] = np.nan
    with pytest.warns(NonFiniteSampleWarning):
        out = bilinear_sample(field, np.array([[1.2, 1.2]]))
    assert np.isnan(out[0])


def test_bilinear_vector_field():
    field = np.zeros((4, 4, 3))
    field[..., 0] = 1.0
    field[..., 2] = np.arange(4)[None, :]
    out = bilinear_sample(field, np.array([[1.5, 2.0]]))
    np.testing.assert_allclose(out[0], [1.0, 0.0, 1.5])
