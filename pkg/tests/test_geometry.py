import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prepmanip import geometry as G
from prepmanip.cloud import LabeledCloud
from prepmanip.errors import DegenerateInput, ZeroAxis


def quat_matrix_oracle(q):
    # independent of prepmanip.geometry.quat_to_matrix
    q = q / np.linalg.norm(q)
    w, v = q[0], q[1:]
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return (w * w - v @ v) * np.eye(3) + 2 * np.outer(v, v) + 2 * w * K


def random_pose(rng):
    return G.Pose(G.random_rotation(rng), rng.normal(size=3))


seeds = st.integers(0, 2**32 - 1)


def test_compose_identity_and_translations():
    rng = np.random.default_rng(0)
    P = random_pose(rng)
    assert G.compose(G.Pose.identity(), P).allclose(P, atol=0)
    out = G.compose(G.Pose.from_translation(1, 0, 0), G.Pose.from_translation(0, 2, 0))
    assert np.array_equal(out.t, [1.0, 2.0, 0.0])
    assert np.array_equal(out.R, np.eye(3))


def test_compose_associative_against_matrix_products():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = (a @ b) @ c
        right = a @ (b @ c)
        assert left.allclose(right, atol=1e-9)
        oracle = a.matrix() @ b.matrix() @ c.matrix()
        assert np.max(np.abs(left.matrix() - oracle)) <= 1e-9


def test_compose_acts_as_nested_application():
    rng = np.random.default_rng(2)
    a, b = random_pose(rng), random_pose(rng)
    x = rng.normal(size=(10, 3))
    assert np.allclose((a @ b).apply(x), a.apply(b.apply(x)), atol=1e-12)


def test_inverse():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = random_pose(rng)
        assert (p.inverse() @ p).allclose(G.Pose.identity(), atol=1e-9)


def test_transform_points_examples():
    cloud = LabeledCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [0, 1], [0.2, 0.7])
    assert np.array_equal(G.transform_points(G.Pose.identity(), cloud).points, cloud.points)
    moved = G.transform_points(G.Pose.from_translation(1, 0, 0), cloud)
    assert np.array_equal(moved.points[0], [1.0, 0.0, 0.0])
    assert np.array_equal(moved.labels, cloud.labels)
    assert np.array_equal(moved.scores, cloud.scores)
    turned = G.transform_points(G.Pose.from_rotation(G.rot_z(np.pi / 2)), cloud)
    assert np.allclose(turned.points[1], [0.0, 1.0, 0.0], atol=1e-15)


@settings(max_examples=50)
@given(seeds)
def test_transform_points_round_trip(seed):
    rng = np.random.default_rng(seed)
    T = random_pose(rng)
    cloud = LabeledCloud(rng.uniform(-1, 1, size=(64, 3)), rng.integers(0, 5, 64))
    back = G.transform_points(T.inverse(), G.transform_points(T, cloud))
    assert np.max(np.abs(back.points - cloud.points)) <= 1e-9
    assert np.array_equal(back.labels, cloud.labels)


def test_geodesic_examples():
    assert G.geodesic_distance(np.eye(3), np.eye(3)) == 0.0
    assert G.geodesic_distance(G.rot_z(np.pi / 2), np.eye(3)) == pytest.approx(np.pi / 2, abs=1e-12)
    assert G.geodesic_distance(G.rot_x(np.pi), np.eye(3)) == pytest.approx(np.pi, abs=1e-12)


def test_geodesic_matches_quaternion_angle():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        qa, qb = rng.normal(size=4), rng.normal(size=4)
        qa /= np.linalg.norm(qa)
        qb /= np.linalg.norm(qb)
        Ra, Rb = quat_matrix_oracle(qa), quat_matrix_oracle(qb)
        oracle = 2.0 * np.arccos(min(1.0, abs(qa @ qb)))
        d = G.geodesic_distance(Ra, Rb)
        assert abs(d - oracle) <= 1e-9
        assert d == pytest.approx(G.geodesic_distance(Rb, Ra), abs=1e-12)


def test_anticipatory_rotation_examples():
    R = G.random_rotation(5)
    Rg = G.random_rotation(6)
    assert np.allclose(G.anticipatory_gripper_rotation(R, R, Rg), Rg, atol=1e-12)
    out = G.anticipatory_gripper_rotation(np.eye(3), G.rot_z(np.pi / 2), np.eye(3))
    assert np.allclose(out, G.rot_z(-np.pi / 2), atol=1e-12)


def test_anticipatory_rotation_relative_frame_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        Ri, Rf, Rg = (G.random_rotation(rng) for _ in range(3))
        out = G.anticipatory_gripper_rotation(Ri, Rf, Rg)
        assert np.max(np.abs(Ri.T @ out - Rf.T @ Rg)) <= 1e-9
        assert G.is_rotation(out)
        # swapped arguments undo the mapping
        back = G.anticipatory_gripper_rotation(Rf, Ri, out)
        assert np.max(np.abs(back - Rg)) <= 1e-9


def test_reorient_gripper_pose():
    rng = np.random.default_rng(8)
    To, Tg = random_pose(rng), random_pose(rng)
    assert G.reorient_gripper_pose(To, To, Tg).allclose(Tg, atol=1e-12)
    dt = np.array([0.1, -0.2, 0.3])
    shifted = G.reorient_gripper_pose(G.Pose(To.R, To.t + dt), To, Tg)
    assert np.allclose(shifted.t, Tg.t + dt, atol=1e-12)
    assert np.allclose(shifted.R, Tg.R, atol=1e-12)
    for _ in range(1000):
        Tr, To, Tg = (random_pose(rng) for _ in range(3))
        out = G.reorient_gripper_pose(Tr, To, Tg)
        assert (Tr.inverse() @ out).allclose(To.inverse() @ Tg, atol=1e-9)


def test_rot6d_examples():
    assert np.array_equal(G.rot6d_decode([1, 0, 0, 0, 1, 0]), np.eye(3))
    assert np.allclose(G.rot6d_decode([2, 0, 0, 0, 3, 0]), np.eye(3), atol=0)
    with pytest.raises(DegenerateInput):
        G.rot6d_decode([0, 0, 0, 0, 1, 0])
    with pytest.raises(DegenerateInput):
        G.rot6d_decode([1, 0, 0, 2, 0, 0])


def test_rot6d_decode_random_inputs_are_rotations():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        R = G.rot6d_decode(rng.normal(size=6))
        assert G.is_rotation(R)


@settings(max_examples=200)
@given(seeds)
def test_rot6d_round_trip(seed):
    R = G.random_rotation(seed)
    assert np.max(np.abs(G.rot6d_decode(G.rot6d_encode(R)) - R)) <= 1e-9


def test_perturb_within_cone():
    axis = np.array([0.0, 0.0, -1.0])
    assert np.array_equal(G.perturb_within_cone([0, 0, -3], 0.0, 1), axis)
    rng = np.random.default_rng(10)
    limit = np.deg2rad(10)
    angles = np.array([G.angle_between(G.perturb_within_cone(axis, limit, rng), axis)
                       for _ in range(10_000)])
    assert np.all(angles <= limit + 1e-12)
    # uniform on the cap: cos(angle) uniform on [cos(limit), 1]
    u = (1 - np.cos(angles)) / (1 - np.cos(limit))
    assert abs(u.mean() - 0.5) < 0.02
    assert np.array_equal(G.perturb_within_cone(axis, limit, 42), G.perturb_within_cone(axis, limit, 42))
    with pytest.raises(ZeroAxis):
        G.perturb_within_cone([0, 0, 1e-12], 0.1, 0)


def test_random_rotation_deterministic_and_valid():
    assert np.array_equal(G.random_rotation(3), G.random_rotation(3))
    assert G.is_rotation(G.random_rotation(3))


def test_rotation_between():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a, b = rng.normal(size=3), rng.normal(size=3)
        R = G.rotation_between(a, b)
        assert np.allclose(R @ (a / np.linalg.norm(a)), b / np.linalg.norm(b), atol=1e-9)
    R = G.rotation_between([1, 0, 0], [-1, 0, 0])
    assert np.allclose(R @ [1, 0, 0], [-1, 0, 0], atol=1e-12)
    assert np.allclose(R @ [0, 0, 1], [0, 0, 1], atol=1e-12)
