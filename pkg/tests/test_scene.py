import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prepmanip import geometry as G
from prepmanip.cloud import Part
from prepmanip.errors import BadShapeParams, EmptyScene
from prepmanip.scene import (CLOUD_SIZE, PITCH, TABLE_X, TABLE_Y, Category, ObjectState, TaskKind,
                             TASK_OF, TableScene, export_object_ply, generate_object, home_pose, lowest_decile,
                             place_on_table, render_partial_cloud, scene_surface, spawn_scene, support_fraction,
                             zbuffer_visible)

categories = st.sampled_from(list(Category))


def zbuffer_oracle(points, pitch=PITCH, margin=0.2):
    # per-cell argmax of z by plain dictionary bookkeeping
    best = {}
    for i, (x, y, z) in enumerate(points):
        if not (TABLE_X[0] - margin <= x < TABLE_X[1] + margin and TABLE_Y[0] - margin <= y < TABLE_Y[1] + margin):
            continue
        if z <= -0.05:
            continue
        key = (int(np.floor((x - TABLE_X[0] + margin) / pitch)), int(np.floor((y - TABLE_Y[0] + margin) / pitch)))
        if key not in best or z > points[best[key], 2]:
            best[key] = i
    return best


def test_plate_points_within_radius_and_fixed():
    obj = generate_object(Category.PLATE, {"radius": 0.10, "thickness": 0.01}, seed=0)
    assert np.all(np.hypot(obj.points[:, 0], obj.points[:, 1]) <= 0.10 + 1e-12)
    assert np.all(obj.labels == Part.FIXED)
    assert np.allclose(obj.functional_axis, [0, 0, 1])


def test_bottle_cap_is_movable_with_prismatic_joint():
    obj = generate_object(Category.BOTTLE, {"height": 0.15, "radius": 0.015}, seed=1)
    j = obj.joint
    lo, hi = j.limits
    assert lo == 0.0
    mov = obj.points[obj.labels == Part.MOVABLE]
    fixed = obj.points[obj.labels == Part.FIXED]
    cap_height = mov[:, 2].max() - j.origin[2]
    assert hi == pytest.approx(cap_height, abs=1e-9)
    # cap points sit above the neck, body points below it
    assert mov[:, 2].min() >= j.origin[2] - 1e-9
    assert fixed[:, 2].max() <= j.origin[2] + 1e-9
    assert np.allclose(j.axis, obj.functional_axis)


def test_lighter_button_travel():
    obj = generate_object(Category.LIGHTER, seed=2)
    assert obj.joint.limits == (0.0, 0.004)


def test_generation_deterministic():
    a = generate_object(Category.BOWL, seed=5)
    b = generate_object(Category.BOWL, seed=5)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)


def test_bad_shape_params():
    with pytest.raises(BadShapeParams):
        generate_object(Category.PLATE, {"radius": 0.2, "thickness": 0.01})
    with pytest.raises(BadShapeParams):
        generate_object(Category.THIN_BOX, {"size_x": 0.1, "size_y": 0.1, "thickness": 0.05})
    with pytest.raises(BadShapeParams):
        generate_object(Category.PLATE, {"radius": 0.1})


@settings(max_examples=25, deadline=None)
@given(categories, st.integers(0, 10_000))
def test_canonical_frame_lowest_decile_at_zero(cat, seed):
    obj = generate_object(cat, seed=seed)
    assert abs(lowest_decile(obj.points)[:, 2].mean()) < 1e-12
    assert np.linalg.norm(obj.functional_axis) == pytest.approx(1.0)


def test_plate_spawn_flat_and_inside():
    obj = generate_object(Category.PLATE, seed=3)
    for seed in range(20):
        scene = spawn_scene(TaskKind.PLATE_LIFTING, obj, seed)
        pts = scene.target.world_points()
        assert pts[:, 2].min() >= -1e-9 and pts[:, 2].max() <= 0.02 + 1e-9
        assert np.all((pts[:, 0] > TABLE_X[0]) & (pts[:, 0] < TABLE_X[1]))
        assert np.all((pts[:, 1] > TABLE_Y[0]) & (pts[:, 1] < TABLE_Y[1]))


def test_bottle_lies_on_side():
    obj = generate_object(Category.BOTTLE, seed=4)
    for seed in range(10):
        scene = spawn_scene(TaskKind.ARTICULATED, obj, seed)
        assert abs(scene.target.world_axis()[2]) <= 1e-6


def test_spawn_yaws_distinct():
    obj = generate_object(Category.THIN_BOX, seed=0)
    yaws = set()
    for seed in range(100):
        R = spawn_scene(TaskKind.EDGE_PUSHING, obj, seed).target.pose.R
        yaws.add(round(float(np.arctan2(R[1, 0], R[0, 0])), 12))
    assert len(yaws) == 100


def test_grippers_parked_at_home():
    scene = spawn_scene(TaskKind.PLATE_LIFTING, generate_object(Category.PLATE, seed=0), 0)
    assert set(scene.grippers) == {"assistant", "primary"}
    assert np.allclose(scene.grippers["assistant"].pose.t, [-0.8, 0, 0.4])
    assert np.allclose(scene.grippers["primary"].pose.t, [0.8, 0, 0.4])
    R = home_pose("primary").R
    assert np.allclose(R[:, 2], np.cross(R[:, 0], R[:, 1]))


def test_empty_scene_raises():
    scene = spawn_scene(TaskKind.PLATE_LIFTING, generate_object(Category.PLATE, seed=0), 0)
    scene = TableScene(scene.task_kind, [], scene.grippers)
    with pytest.raises(EmptyScene):
        render_partial_cloud(scene)


def test_flat_box_shows_only_top_face():
    box = generate_object(Category.THIN_BOX, {"size_x": 0.12, "size_y": 0.10, "thickness": 0.01}, seed=0)
    scene = spawn_scene(TaskKind.EDGE_PUSHING, box, 0)
    pts, _ = scene_surface(scene)
    vis = set(zbuffer_visible(pts).tolist())
    assert vis == set(zbuffer_oracle(pts).values())
    top = scene.target.pose.t[2] + 0.01
    cloud = render_partial_cloud(scene)
    obj_pts = cloud.points[cloud.object_mask()]
    # rendered points are float32-rounded copies of top-face samples
    assert np.all(np.abs(obj_pts[:, 2] - top) < 1e-6)


def test_small_box_under_large_box_is_hidden():
    big = generate_object(Category.THIN_BOX, {"size_x": 0.25, "size_y": 0.25, "thickness": 0.01}, seed=0)
    small = generate_object(Category.THIN_BOX, {"size_x": 0.08, "size_y": 0.08, "thickness": 0.01}, seed=1)
    place_on_table(small, np.eye(3), (0.0, 0.0))
    place_on_table(big, np.eye(3), (0.0, 0.0))
    big.pose = G.Pose(np.eye(3), big.pose.t + [0, 0, 0.05])
    scene = spawn_scene(TaskKind.EDGE_PUSHING, small, 0)
    scene.objects = [small, big]
    pts, _ = scene_surface(scene)
    n_small = len(small.render_points)
    vis = zbuffer_visible(pts)
    assert set(vis.tolist()) == set(zbuffer_oracle(pts).values())
    assert not np.any(vis < n_small)
    cloud = render_partial_cloud(scene)
    assert np.all(cloud.points[cloud.object_mask(), 2] > 0.05)


@settings(max_examples=20, deadline=None)
@given(categories, st.integers(0, 10_000), st.integers(0, 10_000))
def test_render_size_and_fidelity(cat, obj_seed, scene_seed):
    scene = spawn_scene(TASK_OF[cat], generate_object(cat, seed=obj_seed), scene_seed)
    cloud = render_partial_cloud(scene)
    assert len(cloud) == CLOUD_SIZE
    assert np.all(np.isfinite(cloud.points))
    surf, _ = scene_surface(scene)
    d = np.min(np.linalg.norm(cloud.points[:, None, :] - surf[None, ::3, :], axis=-1), axis=1)
    assert np.all(d <= PITCH)


@settings(max_examples=20, deadline=None)
@given(categories, st.integers(0, 10_000))
def test_on_table_lowest_decile_at_table_height(cat, seed):
    scene = spawn_scene(TASK_OF[cat], generate_object(cat, seed=seed), seed)
    obj = scene.target
    assert obj.state == ObjectState.ON_TABLE
    assert abs(lowest_decile(obj.world_points())[:, 2].mean()) <= 1e-3
    assert support_fraction(obj) == 1.0


def test_export_object_ply(tmp_path):
    obj = generate_object(Category.BOTTLE, seed=0)
    path = tmp_path / "bottle.ply"
    export_object_ply(obj, path)
    text = path.read_text().splitlines()
    assert "element vertex 2048" in text
    assert "property int part" in text
    body = text[text.index("end_header") + 1:]
    assert len(body) == 2048
    assert sorted({int(line.split()[-1]) for line in body}) == [0, 1]
