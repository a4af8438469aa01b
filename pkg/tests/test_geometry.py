import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangethermal.geometry import (
    Extrinsics,
    GeometryError,
    Intrinsics,
    TaitBryanAngles,
    depth_to_point,
    project_point,
    rotation_from_angles,
    rotation_partials,
    transform_point,
)

K = Intrinsics(fx=120.0, fy=120.0, cx=80.0, cy=60.0, width=160, height=120)

angle = st.floats(-math.pi, math.pi, allow_nan=False)
coord = st.floats(-5, 5, allow_nan=False)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, s], [0, -s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, -s], [0, 1, 0], [s, 0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])


def test_zero_angles_give_identity():
    np.testing.assert_array_equal(rotation_from_angles(TaitBryanAngles(0, 0, 0)), np.eye(3))


def test_first_angle_quarter_turn_row_one():
    R = rotation_from_angles(TaitBryanAngles(math.pi / 2, 0, 0))
    np.testing.assert_allclose(R[0], [0, 0, -1], atol=1e-15)


def test_matches_composed_axis_rotations():
    a = TaitBryanAngles(0.3, -0.2, 0.1)
    M = rotation_from_angles(a)
    np.testing.assert_allclose(M, _rx(a.a2) @ _ry(a.a1) @ _rz(a.a3), atol=1e-15)
    assert np.max(np.abs(M.T @ M - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(M) - 1) < 1e-12


def test_printed_third_row_is_not_orthonormal():
    # the alternative third row (c2 s1 s3, c2 s1 c3 - s2 c3, c1 c2) is why we do not use it
    a1, a2, a3 = 0.3, -0.2, 0.1
    s1, s2, s3 = map(math.sin, (a1, a2, a3))
    c1, c2, c3 = map(math.cos, (a1, a2, a3))
    row = np.array([c2 * s1 * s3, c2 * s1 * c3 - s2 * c3, c1 * c2])
    assert abs(np.linalg.norm(row) - 1) > 1e-3


def test_partials_match_finite_differences():
    a = np.array([0.4, -0.7, 1.1])
    D = rotation_partials(TaitBryanAngles.from_array(a))
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (rotation_from_angles(TaitBryanAngles.from_array(a + e))
              - rotation_from_angles(TaitBryanAngles.from_array(a - e))) / (2 * h)
        np.testing.assert_allclose(D[k], fd, atol=1e-9)


@given(angle, angle, angle)
def test_rotation_rows_one_two_follow_tait_bryan_expressions(a1, a2, a3):
    R = rotation_from_angles(TaitBryanAngles(a1, a2, a3))
    s1, s2, s3 = math.sin(a1), math.sin(a2), math.sin(a3)
    c1, c2, c3 = math.cos(a1), math.cos(a2), math.cos(a3)
    np.testing.assert_allclose(R[0], [c1 * c3, c1 * s3, -s1], atol=1e-12)
    np.testing.assert_allclose(R[1], [s2 * s1 * c3 - c2 * s3, s2 * s1 * s3 + c2 * c3, c1 * s2], atol=1e-12)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12


def test_wrapped_angles_same_rotation():
    a = TaitBryanAngles(4.0, -7.0, 3.5)
    w = a.wrapped()
    assert all(-math.pi <= x <= math.pi for x in w.as_array())
    np.testing.assert_allclose(rotation_from_angles(a), rotation_from_angles(w), atol=1e-12)


def test_depth_to_point_principal_ray():
    np.testing.assert_allclose(depth_to_point((K.cx, K.cy), 2.0, K), [0, 0, 2.0], atol=1e-15)


def test_depth_to_point_45_degrees():
    np.testing.assert_allclose(depth_to_point((K.cx + K.fx * 0.5, K.cy), math.sqrt(1.25), K), [0.5, 0, 1.0])
    K2 = Intrinsics(fx=10.0, fy=10.0, cx=5.0, cy=5.0, width=20, height=20)
    np.testing.assert_allclose(depth_to_point((15.0, 5.0), math.sqrt(2), K2), [1, 0, 1], atol=1e-15)


def test_depth_to_point_is_radial():
    p = depth_to_point((40, 90), 3.1, K)
    assert abs(np.linalg.norm(p) - 3.1) < 1e-9
    d = np.array([(40 - 80) / 120, (90 - 60) / 120, 1.0])
    np.testing.assert_allclose(p / np.linalg.norm(p), d / np.linalg.norm(d), atol=1e-12)


@pytest.mark.parametrize("depth", [0.0, -1.0, float("nan")])
def test_depth_to_point_rejects_bad_depth(depth):
    with pytest.raises(GeometryError):
        depth_to_point((10, 10), depth, K)


def test_depth_to_point_rejects_off_sensor_pixel():
    with pytest.raises(GeometryError):
        depth_to_point((-3, 10), 1.0, K)


def test_transform_identity_and_translation():
    np.testing.assert_array_equal(transform_point([1, 2, 3], Extrinsics()), [1, 2, 3])
    np.testing.assert_allclose(
        transform_point([0, 0, 2], Extrinsics(TaitBryanAngles(), (0.05, 0, 0))), [0.05, 0, 2]
    )


@given(angle, angle, angle, coord, coord, coord, coord, coord, coord)
def test_transform_preserves_norm_and_distances(a1, a2, a3, x, y, z, tx, ty, tz):
    ext = Extrinsics(TaitBryanAngles(a1, a2, a3), (tx, ty, tz))
    p = np.array([x, y, z])
    q = np.array([z, x, -y])
    tp, tq = transform_point(p, ext), transform_point(q, ext)
    assert abs(np.linalg.norm(tp - np.array(ext.t)) - np.linalg.norm(p)) < 1e-12
    assert abs(np.linalg.norm(tp - tq) - np.linalg.norm(p - q)) < 1e-12


def test_project_examples():
    np.testing.assert_allclose(project_point([0, 0, 1], K), [K.cx, K.cy])
    K2 = Intrinsics(fx=10.0, fy=10.0, cx=8.0, cy=8.0, width=16, height=16)
    assert project_point([1, 0, 1], K2)[0] == 18.0


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(GeometryError):
        project_point([0.1, 0.2, z], K)


def test_round_trip_full_sensor():
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(float)
    px = np.stack([u, v], axis=-1)
    rng = np.random.default_rng(3)
    d = rng.uniform(0.1, 20.0, u.shape)
    back = project_point(depth_to_point(px, d, K), K)
    assert np.max(np.abs(back - px)) < 1e-9


@settings(max_examples=200)
@given(st.floats(-0.5, 159.49), st.floats(-0.5, 119.49), st.floats(0.01, 100))
def test_round_trip_property(u, v, d):
    back = project_point(depth_to_point((u, v), d, K), K)
    np.testing.assert_allclose(back, [u, v], atol=1e-9)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(fx=0, fy=1, cx=1, cy=1, width=4, height=4),
        dict(fx=1, fy=1, cx=4, cy=1, width=4, height=4),
        dict(fx=1, fy=1, cx=1, cy=1, width=0, height=4),
    ],
)
def test_intrinsics_validation(kwargs):
    with pytest.raises(ValueError):
        Intrinsics(**kwargs)


def test_scaled_intrinsics_align_pixel_edges():
    Ks = K.scaled(0.1, 0.1, 16, 12)
    # the left edge of TOF pixel 0 (u = -0.5) maps to the left edge of IR pixel 0
    u = Ks.fx * ((-0.5 - K.cx) / K.fx) + Ks.cx
    assert u == pytest.approx(-0.5)
