"""Transform algebra against an independent homogeneous-matrix oracle.

The oracle converts quaternions to rotation matrices with the textbook
formula and does all composition/inversion through plain 4x4 matmul and
numpy's inverse, so it shares no code with the Pose implementation.
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexpipe.geometry import (
    Frame,
    Intrinsics,
    PointCloud,
    Pose,
    compose,
    inverse,
    pose_distance,
    quat_slerp,
    scale_pose,
    transform_point,
    transform_points,
)

ATOL = 1e-9


# ---------------------------------------------------------------------------
# oracle


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def pose_to_hom(p: Pose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(p.q)
    m[:3, 3] = p.t
    return m


def random_pose(rng) -> Pose:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(q, rng.uniform(-2, 2, size=3))


def test_oracle_sanity_identity():
    m = pose_to_hom(Pose())
    assert np.array_equal(m, np.eye(4))


def test_oracle_sanity_yaw_90():
    p = Pose.from_axis_angle((0, 0, 1), math.pi / 2)
    m = pose_to_hom(p)
    assert np.allclose(m[:3, :3] @ [1, 0, 0], [0, 1, 0], atol=ATOL)


# ---------------------------------------------------------------------------
# constructor invariants


def test_quaternion_normalized_and_canonical():
    p = Pose((2.0, 0.0, 0.0, 0.0), (0, 0, 0))
    assert abs(np.linalg.norm(p.q) - 1.0) <= ATOL
    n = Pose((-1.0, 0.0, 0.0, 0.0), (0, 0, 0))
    assert n.q[0] >= 0


def test_canonicalization_negates_all_components():
    p = Pose((-0.5, 0.5, -0.5, 0.5), (0, 0, 0))
    assert p.q[0] >= 0
    assert np.allclose(p.q, [0.5, -0.5, 0.5, -0.5], atol=ATOL)


def test_construction_idempotent_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = random_pose(rng)
        again = Pose(p.q, p.t)
        assert np.array_equal(again.q, p.q)
        assert np.array_equal(again.t, p.t)


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        Pose((np.nan, 0, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        Pose((1, 0, 0, 0), (np.inf, 0, 0))
    with pytest.raises(ValueError):
        Pose((0.0, 0.0, 0.0, 0.0), (0, 0, 0))


def test_pose_arrays_immutable():
    p = Pose()
    with pytest.raises(ValueError):
        p.q[0] = 2.0
    with pytest.raises(ValueError):
        p.t[0] = 2.0


# ---------------------------------------------------------------------------
# compose / inverse / transform_point vs the oracle


def test_compose_identity_left():
    rng = np.random.default_rng(1)
    p = random_pose(rng)
    r = compose(Pose(), p)
    assert np.allclose(r.q, p.q, atol=ATOL)
    assert np.allclose(r.t, p.t, atol=ATOL)


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = random_pose(rng)
        r = compose(p, inverse(p))
        assert np.allclose(r.q, [1, 0, 0, 0], atol=ATOL)
        assert np.allclose(r.t, 0, atol=ATOL)


def test_compose_matches_matrix_oracle_100_pairs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        got = pose_to_hom(compose(a, b))
        want = pose_to_hom(a) @ pose_to_hom(b)
        assert np.abs(got - want).max() <= ATOL


def test_inverse_matches_matrix_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = random_pose(rng)
        got = pose_to_hom(inverse(p))
        want = np.linalg.inv(pose_to_hom(p))
        assert np.abs(got - want).max() <= 1e-9


def test_transform_point_identity():
    assert np.array_equal(transform_point(Pose(), (1.0, 2.0, 3.0)), [1, 2, 3])


def test_transform_point_pure_translation():
    p = Pose(t=(0, 0, 0.5))
    assert np.allclose(transform_point(p, (0, 0, 0)), [0, 0, 0.5], atol=0)


def test_transform_point_matches_matrix_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p = random_pose(rng)
        x = rng.uniform(-2, 2, size=3)
        want = (pose_to_hom(p) @ np.append(x, 1.0))[:3]
        assert np.abs(transform_point(p, x) - want).max() <= ATOL


def test_transform_points_batch_matches_single():
    rng = np.random.default_rng(6)
    p = random_pose(rng)
    xs = rng.uniform(-1, 1, size=(32, 3))
    batch = transform_points(p, xs)
    for x, got in zip(xs, batch):
        assert np.allclose(got, transform_point(p, x), atol=ATOL)


def test_compose_associative():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert np.allclose(left.q, right.q, atol=ATOL)
        assert np.allclose(left.t, right.t, atol=ATOL)


def test_compose_applies_b_then_a():
    rng = np.random.default_rng(8)
    a, b = random_pose(rng), random_pose(rng)
    x = rng.uniform(-1, 1, size=3)
    assert np.allclose(
        transform_point(compose(a, b), x),
        transform_point(a, transform_point(b, x)),
        atol=ATOL,
    )


def test_double_cover_same_transform():
    # w = 0 quaternions cannot be canonicalized by the w-sign rule; q and -q
    # must still act identically on points
    q = np.array([0.0, 1.0, 0.0, 0.0])
    x = np.array([0.3, -0.2, 0.9])
    a = transform_point(Pose(q, (0, 0, 0)), x)
    b = transform_point(Pose(-q, (0, 0, 0)), x)
    assert np.allclose(a, b, atol=ATOL)


# ---------------------------------------------------------------------------
# pose_distance


def test_pose_distance_same_pose():
    rng = np.random.default_rng(9)
    p = random_pose(rng)
    assert pose_distance(p, p) == (0.0, 0.0)


def test_pose_distance_translation_only():
    p = Pose(t=(0, 0, 0))
    q = Pose(t=(1.0, 0, 0))
    terr, rerr = pose_distance(p, q)
    assert terr == pytest.approx(1.0, abs=ATOL)
    assert rerr == 0.0


def test_pose_distance_double_cover_zero():
    q = np.array([0.0, 0.0, 1.0, 0.0])
    a, b = Pose(q, (0, 0, 0)), Pose(-q, (0, 0, 0))
    _, rerr = pose_distance(a, b)
    assert rerr <= 1e-7


def test_pose_distance_known_angle():
    a = Pose()
    b = Pose.from_axis_angle((0, 0, 1), 0.75)
    _, rerr = pose_distance(a, b)
    assert rerr == pytest.approx(0.75, abs=1e-9)


def test_pose_distance_symmetric():
    rng = np.random.default_rng(10)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        assert pose_distance(a, b) == pose_distance(b, a)


# ---------------------------------------------------------------------------
# scale_pose / slerp


def test_scale_pose_zero_is_bitwise_identity():
    rng = np.random.default_rng(11)
    p = random_pose(rng)
    s = scale_pose(p, 0.0)
    assert np.array_equal(s.q, Pose().q)
    assert np.array_equal(s.t, Pose().t)


def test_scale_pose_one_is_bitwise_input():
    rng = np.random.default_rng(12)
    p = random_pose(rng)
    s = scale_pose(p, 1.0)
    assert np.array_equal(s.q, p.q)
    assert np.array_equal(s.t, p.t)


def test_scale_pose_half_angle_and_translation():
    p = Pose.from_axis_angle((0, 0, 1), 1.0, t=(0.4, 0, 0))
    s = scale_pose(p, 0.5)
    _, rerr = pose_distance(Pose(), s)
    assert rerr == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(s.t, (0.2, 0, 0), atol=ATOL)


def test_slerp_endpoints_and_midpoint():
    a = Pose().q
    b = Pose.from_axis_angle((1, 0, 0), 1.2).q
    assert np.allclose(quat_slerp(a, b, 0.0), a, atol=ATOL)
    assert np.allclose(quat_slerp(a, b, 1.0), b, atol=ATOL)
    mid = quat_slerp(a, b, 0.5)
    want = Pose.from_axis_angle((1, 0, 0), 0.6).q
    assert np.allclose(mid, want, atol=ATOL)


# ---------------------------------------------------------------------------
# serialization


def test_pose7_round_trip():
    rng = np.random.default_rng(13)
    for _ in range(50):
        p = random_pose(rng)
        r = Pose.from_list(json.loads(json.dumps(p.to_list())))
        terr, _ = pose_distance(p, r)
        assert terr <= 1e-6
        assert min(np.abs(r.q - p.q).max(), np.abs(r.q + p.q).max()) <= 1e-6


def test_pose7_layout():
    p = Pose.from_axis_angle((0, 0, 1), 0.0, t=(1, 2, 3))
    assert p.to_list() == [1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_compose_inverse_property(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    # inverse(a b) == inverse(b) inverse(a)
    lhs = pose_to_hom(inverse(compose(a, b)))
    rhs = pose_to_hom(compose(inverse(b), inverse(a)))
    assert np.abs(lhs - rhs).max() <= 1e-9


# ---------------------------------------------------------------------------
# intrinsics and point clouds


def test_intrinsics_validation():
    Intrinsics(width=64, height=48, fx=40, fy=40, cx=31.5, cy=23.5, depth_scale=0.001)
    with pytest.raises(ValueError):
        Intrinsics(width=64, height=48, fx=0, fy=40, cx=31.5, cy=23.5, depth_scale=0.001)
    with pytest.raises(ValueError):
        Intrinsics(width=64, height=48, fx=40, fy=40, cx=64, cy=23.5, depth_scale=0.001)
    with pytest.raises(ValueError):
        Intrinsics(width=64, height=48, fx=40, fy=40, cx=31.5, cy=23.5, depth_scale=0)


def test_intrinsics_dict_round_trip():
    i = Intrinsics(width=64, height=48, fx=40, fy=41, cx=31.5, cy=23.5, depth_scale=0.001)
    assert Intrinsics.from_dict(i.to_dict()) == i


def test_pointcloud_invariants():
    xyz = np.zeros((3, 3))
    rgb = np.full((3, 3), 0.5)
    PointCloud(xyz, rgb, Frame.WORLD)
    with pytest.raises(ValueError):
        PointCloud(xyz, rgb + 1.0, Frame.WORLD)
    with pytest.raises(ValueError):
        PointCloud(xyz * np.nan, rgb, Frame.WORLD)


def test_pointcloud_transformed_matches_transform_points():
    rng = np.random.default_rng(14)
    p = random_pose(rng)
    xyz = rng.uniform(-1, 1, size=(10, 3))
    rgb = rng.uniform(0, 1, size=(10, 3))
    c = PointCloud(xyz, rgb, Frame.CAMERA)
    out = c.transformed(p, Frame.WORLD)
    assert out.frame == Frame.WORLD
    assert np.allclose(out.xyz, transform_points(p, xyz), atol=0)
    assert np.array_equal(out.rgb, rgb)
