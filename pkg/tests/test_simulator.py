import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prepmanip import geometry as G
from prepmanip import simulator as S
from prepmanip.cloud import Part
from prepmanip.errors import NotAPlate
from prepmanip.scene import (Attachment, Category, ObjectState, TaskKind, TASK_OF, generate_object, home_pose,
                             place_on_table, spawn_scene)

DOWN = G.frame_from_axes(np.array([0.0, 0.0, -1.0]), np.array([0.0, 1.0, 0.0]))
# forward -x (toward the table), jaws spread vertically
SIDE = G.frame_from_axes(np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))


def box_scene(size=0.1, thickness=0.01, xy=(0.0, 0.0)):
    box = generate_object(Category.THIN_BOX, {"size_x": size, "size_y": size, "thickness": thickness}, seed=0)
    scene = spawn_scene(TaskKind.EDGE_PUSHING, box, 0)
    place_on_table(scene.target, np.eye(3), xy)
    return scene


def overhanging_plate_scene():
    plate = generate_object(Category.PLATE, {"radius": 0.10, "thickness": 0.01}, seed=0)
    scene = spawn_scene(TaskKind.PLATE_LIFTING, plate, 0)
    place_on_table(scene.target, np.eye(3), (0.35, 0.0))
    return scene


def support_oracle(obj):
    # lowest 10% of points by height, counted inside the footprint one by one
    pts = obj.world_points()
    k = int(np.ceil(0.1 * len(pts)))
    low = pts[np.argsort(pts[:, 2], kind="stable")[:k]]
    inside = [(-0.4 <= x <= 0.4) and (-0.6 <= y <= 0.6) for x, y, _ in low]
    return sum(inside) / len(inside)


def closing_oracle(points, pose, spec):
    n, pos, neg = 0, False, False
    for p in points:
        local = pose.R.T @ (p - pose.t)
        if 0 <= local[0] <= spec.finger_depth and abs(local[1]) <= spec.max_opening / 2 \
                and abs(local[2]) <= spec.finger_height / 2:
            n += 1
            pos |= local[1] > 0
            neg |= local[1] < 0
    return n, pos and neg


# ---------------------------------------------------------------- grasp

def test_grasp_far_away_is_no_contact():
    scene = box_scene()
    out = S.attempt_grasp(scene, "primary", G.Pose(DOWN, np.array([0.0, 0.0, 1.0])))
    assert out.kind == S.Outcome.NO_CONTACT


def test_grasp_through_table_collides():
    scene = box_scene()
    spec = scene.grippers["primary"].spec
    # fingertips 1 cm below the table top, away from the box
    t = np.array([0.0, 0.3, -0.01 + spec.finger_depth])
    out = S.attempt_grasp(scene, "primary", G.Pose(DOWN, t))
    assert out.kind == S.Outcome.COLLISION
    assert out.scene is scene


def test_grasp_straddling_plate_edge_attaches():
    scene = overhanging_plate_scene()
    spec = scene.grippers["primary"].spec
    target = G.Pose(SIDE, np.array([0.455, 0.0, 0.005]))
    out = S.attempt_grasp(scene, "primary", target)
    assert out.kind == S.Outcome.OK
    g = out.scene.grippers["primary"]
    assert g.attachment is not None and g.attachment.object_index == 0
    n, split = closing_oracle(scene.target.world_points(), g.pose, spec)
    assert n >= 5 and split
    assert out.scene.target.state == ObjectState.GRASPED
    # the stored relative pose reproduces the object pose
    assert (g.pose @ g.attachment.relative).allclose(out.scene.target.pose, atol=1e-12)


def test_grasp_on_non_target_part_collides():
    obj = generate_object(Category.BOTTLE, seed=0)
    scene = spawn_scene(TaskKind.ARTICULATED, obj, 0)
    cap = scene.target.world_points()[scene.target.labels == Part.MOVABLE].mean(axis=0)
    spec = scene.grippers["assistant"].spec
    target = G.Pose(DOWN, cap + np.array([0.0, 0.0, spec.finger_depth / 2]))
    # the assistant may only close on the fixed body during articulated tasks
    out = S.attempt_grasp(scene, "assistant", target)
    assert out.kind in (S.Outcome.COLLISION, S.Outcome.UNSTABLE, S.Outcome.NO_CONTACT)
    assert out.scene.grippers["assistant"].attachment is None


# ---------------------------------------------------------------- push

def pusher_behind_box(scene, gap=0.002):
    spec = scene.grippers["assistant"].spec
    xmin = scene.target.world_points()[:, 0].min()
    # home frame: the gripper's z axis is world +x, fingers are finger_height thick along it
    tip = np.array([xmin - spec.finger_height / 2 - gap, 0.0, 0.005])
    return G.Pose(DOWN, tip - spec.finger_depth * DOWN[:, 0])


def test_push_without_contact():
    scene = box_scene()
    pose = G.Pose(DOWN, np.array([0.0, 0.4, 0.1]))
    h = scene.state_hash()
    out = S.push(scene, "assistant", pose, [1.0, 0.0, 0.0], 0.1)
    assert out.kind == S.Outcome.NO_CONTACT
    assert out.scene.state_hash() == h


def test_push_translates_box():
    scene = box_scene()
    before = scene.target.centroid()
    out = S.push(scene, "assistant", pusher_behind_box(scene), [1.0, 0.0, 0.0], 0.10)
    assert out.kind == S.Outcome.OK
    shift = out.scene.target.centroid() - before
    assert shift == pytest.approx([0.10, 0.0, 0.0], abs=1e-12)
    assert support_oracle(out.scene.target) == 1.0
    assert np.array_equal(out.scene.target.pose.R, scene.target.pose.R)


def test_push_past_edge_falls():
    scene = box_scene()
    # 60% of the 0.1 m box beyond x = 0.4 puts its center at 0.41
    out = S.push(scene, "assistant", pusher_behind_box(scene), [1.0, 0.0, 0.0], 0.41)
    assert out.kind == S.Outcome.FALLEN
    assert out.scene.target.state == ObjectState.FALLEN
    assert support_oracle(out.scene.target) < 0.5


def test_push_argument_checks():
    scene = box_scene()
    pose = pusher_behind_box(scene)
    with pytest.raises(ValueError):
        S.push(scene, "assistant", pose, [1.0, 0.0, 0.1], 0.1)
    with pytest.raises(ValueError):
        S.push(scene, "assistant", pose, [1.0, 0.0, 0.0], 0.6)
    with pytest.raises(ValueError):
        S.push(scene, "assistant", pose, [1.0, 0.0, 0.0], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.005, 0.5), st.floats(-0.03, 0.03))
def test_push_never_leaves_unsupported_object_on_table(distance, y):
    scene = box_scene(xy=(0.0, y))
    out = S.push(scene, "assistant", pusher_behind_box(scene), [1.0, 0.0, 0.0], distance)
    obj = out.scene.target
    if obj.state == ObjectState.ON_TABLE:
        assert support_oracle(obj) >= 0.5


# ---------------------------------------------------------------- carry

def grasped_plate():
    scene = overhanging_plate_scene()
    out = S.attempt_grasp(scene, "primary", G.Pose(SIDE, np.array([0.455, 0.0, 0.005])))
    assert out.kind == S.Outcome.OK
    return out.scene


def test_move_free_gripper():
    scene = box_scene()
    target = G.Pose(DOWN, np.array([0.5, 0.3, 0.3]))
    out = S.move_gripper(scene, "primary", target)
    assert out.kind == S.Outcome.OK
    assert out.scene.grippers["primary"].pose.allclose(target, atol=1e-12)
    assert out.scene.target.pose.allclose(scene.target.pose, atol=0)


def test_lift_attached_plate():
    scene = grasped_plate()
    before = scene.target.centroid()
    out = S.lift(scene, "primary", 0.15)
    assert out.kind == S.Outcome.OK
    assert out.scene.target.centroid() - before == pytest.approx([0, 0, 0.15], abs=1e-9)
    assert S.check_success(out.scene, TaskKind.PLATE_LIFTING)


def test_one_sided_grasp_is_unstable_on_lift():
    scene = overhanging_plate_scene()
    # jaw center 1 cm above the plate middle: every point lies on the -y side
    pose = G.Pose(SIDE, np.array([0.455, 0.0, 0.015]))
    n, split = closing_oracle(scene.target.world_points(), pose, scene.grippers["primary"].spec)
    assert n >= 5 and not split
    scene = scene.copy()
    scene.grippers["primary"].pose = pose
    scene.grippers["primary"].attachment = Attachment(0, pose.inverse() @ scene.target.pose)
    scene.target.state = ObjectState.GRASPED
    out = S.lift(scene, "primary", 0.1)
    assert out.kind == S.Outcome.UNSTABLE
    assert out.scene.grippers["primary"].attachment is None
    assert out.scene.target.state in (ObjectState.ON_TABLE, ObjectState.FALLEN)


def test_move_into_table_collides():
    scene = box_scene()
    out = S.move_gripper(scene, "primary", G.Pose(DOWN, np.array([0.0, 0.3, 0.01])))
    assert out.kind == S.Outcome.COLLISION
    assert out.scene is scene


# ---------------------------------------------------------------- press

def test_press_plate_rim_tilts_far_side_up():
    plate = generate_object(Category.PLATE, {"radius": 0.10, "thickness": 0.01}, seed=0)
    scene = spawn_scene(TaskKind.PLATE_LIFTING, plate, 0)
    place_on_table(scene.target, np.eye(3), (0.0, 0.0))
    spec = scene.grippers["assistant"].spec
    tip = np.array([-0.095, 0.0, 0.01])
    out = S.press(scene, "assistant", G.Pose(DOWN, tip - spec.finger_depth * DOWN[:, 0]))
    assert out.kind == S.Outcome.OK
    pts = out.scene.target.world_points()
    far = pts[pts[:, 0] > 0.09]
    assert far[:, 2].min() > 0.03
    assert pts[:, 2].min() >= -1e-9


def test_press_rejects_non_plate():
    scene = box_scene()
    with pytest.raises(NotAPlate):
        S.press(scene, "assistant", G.Pose(DOWN, np.array([0.0, 0.0, 0.05])))


# ---------------------------------------------------------------- joints

def bottle_scene(raise_by=0.0):
    obj = generate_object(Category.BOTTLE, {"height": 0.16, "radius": 0.015}, seed=0)
    scene = spawn_scene(TaskKind.ARTICULATED, obj, 3)
    o = scene.target
    o.pose = G.Pose(o.pose.R, o.pose.t + [0.0, 0.0, raise_by])
    return scene


def test_actuate_on_fixed_part_is_no_contact():
    scene = bottle_scene()
    obj = scene.target
    pts = obj.world_points()
    mov = pts[obj.labels == Part.MOVABLE]
    fixed = pts[obj.labels == Part.FIXED]
    far = fixed[np.argmax(np.min(np.linalg.norm(fixed[:, None] - mov[None], axis=-1), axis=1))]
    out = S.actuate_joint(scene, "primary", far, obj.joint_free_direction(), 0.02)
    assert out.kind == S.Outcome.NO_CONTACT


def test_actuate_cap_full_range():
    # held up as after reorientation, so the palm clears the table
    scene = bottle_scene(raise_by=0.1)
    obj = scene.target
    free = obj.joint_free_direction()
    mov = obj.world_points()[obj.labels == Part.MOVABLE]
    tip = mov[np.argmax(mov @ free)]
    out = S.actuate_joint(scene, "primary", tip, free, obj.joint.range)
    assert out.kind == S.Outcome.JOINT_MOVED
    assert out.delta == pytest.approx(obj.joint.range, abs=1e-12)
    assert out.scene.target.joint.value == pytest.approx(obj.joint.limits[1])
    # movable points follow the joint, fixed points stay put
    before, after = obj.world_points(), out.scene.target.world_points()
    m = obj.labels == Part.MOVABLE
    assert np.allclose(after[m] - before[m], obj.joint.range * free, atol=1e-12)
    assert np.array_equal(after[~m], before[~m])
    assert S.check_success(out.scene, TaskKind.ARTICULATED)


def test_actuate_perpendicular_is_gated():
    scene = bottle_scene()
    obj = scene.target
    free = obj.joint_free_direction()
    mov = obj.world_points()[obj.labels == Part.MOVABLE]
    side = np.cross(free, [0.0, 0.0, 1.0])
    out = S.actuate_joint(scene, "primary", mov[0], side / np.linalg.norm(side), 0.02)
    assert out.kind == S.Outcome.NO_CONTACT


# ---------------------------------------------------------------- success

@pytest.mark.parametrize("cat", list(Category))
def test_untouched_scene_is_not_success(cat):
    scene = spawn_scene(TASK_OF[cat], generate_object(cat, seed=0), 0)
    assert not S.check_success(scene, TASK_OF[cat])


def test_joint_threshold():
    scene = bottle_scene().copy()
    j = scene.target.joint
    j.value = 0.25 * j.range
    assert S.check_success(scene, TaskKind.ARTICULATED)
    j.value = 0.15 * j.range
    assert not S.check_success(scene, TaskKind.ARTICULATED)


def test_plate_held_by_assistant_is_not_success():
    scene = overhanging_plate_scene().copy()
    g = scene.grippers["assistant"]
    scene.target.pose = G.Pose(np.eye(3), np.array([0.0, 0.0, 0.2]))
    g.attachment = Attachment(0, g.pose.inverse() @ scene.target.pose)
    scene.target.state = ObjectState.GRASPED
    assert scene.target.centroid()[2] >= 0.1
    assert not S.check_success(scene, TaskKind.PLATE_LIFTING)


# ---------------------------------------------------------------- properties

grasp_targets = st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(-0.02, 0.2),
                          st.integers(0, 2**31 - 1))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(Category)), grasp_targets)
def test_grasp_outcomes_conserve_and_collisions_are_pure(cat, target):
    x, y, z, seed = target
    scene = spawn_scene(TASK_OF[cat], generate_object(cat, seed=seed % 50), seed)
    h = scene.state_hash()
    pose = G.Pose(G.random_rotation(seed), np.array([x, y, z]))
    out = S.attempt_grasp(scene, "primary", pose)
    assert scene.state_hash() == h
    if out.kind == S.Outcome.COLLISION:
        assert out.scene.state_hash() == h
    for a, b in zip(scene.objects, out.scene.objects):
        assert len(a.world_points()) == len(b.world_points())
        assert np.array_equal(a.labels, b.labels)
    again = S.attempt_grasp(scene, "primary", pose)
    assert again.kind == out.kind and again.scene.state_hash() == out.scene.state_hash()


def test_home_pose_left_handed_check():
    R = home_pose("assistant").R
    assert G.is_rotation(R)
