"""Quasi-static kinematic stepping: grasp, push, press, carry, joint actuation.

Every operation returns an :class:`ActionOutcome` holding a *new* scene; the
input scene is never mutated. Collision outcomes hand back the input scene
itself, so they are side-effect free by construction.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as G
from .cloud import Part
from .config import SimConfig
from .errors import NotAPlate
from .scene import (Attachment, Category, PressState, ObjectState, TaskKind, gripper_body_local, gripper_boxes, gripper_shell_local,
                    in_footprint, place_on_table, support_fraction, to_gripper_frame)

DEFAULT_SIM = SimConfig()


class Outcome(str, enum.Enum):
    OK = "Ok"
    NO_CONTACT = "NoContact"
    COLLISION = "Collision"
    UNSTABLE = "Unstable"
    JOINT_MOVED = "JointMoved"
    FALLEN = "Fallen"


@dataclass
class ActionOutcome:
    kind: Outcome
    scene: object
    delta: float = 0.0
    detail: str = ""

    @property
    def ok(self):
        return self.kind in (Outcome.OK, Outcome.JOINT_MOVED)


# actuation sign: gripper forward axis = sign * motion direction
ACTUATION_SIGN = {Category.BOTTLE: -1.0, Category.LIGHTER: 1.0}
# world direction the jaws spread along while actuating (cap: beside it; button: above/below)
ACTUATION_SPREAD = {Category.BOTTLE: (0.0, 0.0, 1.0), Category.LIGHTER: None}


def grasp_pose_from_action(action, spec, avoid_table=True):
    """Gripper pose that centers the closing region on the contact point.

    For downward approaches the pose backs off along its forward axis just
    enough to keep the fingers above the table top.
    """
    x = action.R[:, 0]
    pose = G.Pose(action.R, action.t - x * spec.finger_depth / 2)
    if avoid_table and x[2] < -0.2:
        body = pose.apply(gripper_body_local(spec))
        low = body[in_footprint(body[:, :2]), 2]
        if len(low) and low.min() < 0.0:
            pose = G.Pose(action.R, pose.t + x * (low.min() / -x[2]))
    return pose


def tip_pose_from_action(action, spec):
    """Gripper pose whose fingertips touch the contact point (pushing, pressing)."""
    return G.Pose(action.R, action.t - action.R[:, 0] * spec.finger_depth)


def default_target_labels(scene, gripper_id):
    if scene.task_kind == TaskKind.ARTICULATED and gripper_id == "assistant":
        return (int(Part.FIXED),)
    return (int(Part.FIXED), int(Part.MOVABLE))


def _table_hits(points, cfg):
    z = points[..., 2]
    slab = (z < -cfg.table_tolerance) & (z > -cfg.table_thickness)
    return slab & in_footprint(points.reshape(-1, 3)[:, :2]).reshape(points.shape[:-1])


def _other(scene, gid):
    return next(g for n, g in scene.grippers.items() if n != gid)


def _attached_index(g):
    return None if g.attachment is None else g.attachment.object_index


def _reach(spec):
    """Radius around the gripper origin enclosing every box."""
    return max(float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
               for lo, hi in gripper_boxes(spec).values()) + 1e-6


def _near_any(pts, centers, radius):
    hits = cKDTree(pts).query_ball_point(centers, radius)
    mask = np.zeros(len(pts), dtype=bool)
    for h in hits:
        mask[h] = True
    return mask


def _collision(scene, gid, poses, cfg, solid_labels=None, skip_objects=()):
    """First reason any of ``poses`` (list) collides, else None.

    Checks table penetration, object points inside palm/finger boxes, and the
    other gripper's body. ``solid_labels`` restricts which object points count.
    """
    g = scene.grippers[gid]
    spec = g.spec
    boxes = gripper_boxes(spec)
    body = gripper_body_local(spec)
    R = poses[0].R
    same_rot = all(np.array_equal(p.R, R) for p in poses)
    ts = np.stack([p.t for p in poses])
    if same_rot:
        if _table_hits((body @ R.T)[None] + ts[:, None, :], cfg).any():
            return "table"
    elif any(_table_hits(p.apply(body), cfg).any() for p in poses):
        return "table"
    own = _attached_index(g)
    reach = _reach(spec)
    for i, obj in enumerate(scene.objects):
        if obj.state == ObjectState.FALLEN or i == own or i in skip_objects:
            continue
        pts = obj.world_points()
        if solid_labels is not None:
            pts = pts[np.isin(obj.labels, solid_labels)]
        pts = pts[_near_any(pts, ts, reach)]
        if len(pts) == 0:
            continue
        if same_rot:
            # points in each pose's frame differ only by a translation
            local = (pts[None, :, :] - ts[:, None, :]) @ R
        else:
            local = np.stack([to_gripper_frame(pts, p) for p in poses])
        for name in ("palm", "finger_l", "finger_r"):
            lo, hi = boxes[name]
            if np.all((local >= lo) & (local <= hi), axis=-1).any():
                return "object"
    other = _other(scene, gid)
    pad = cfg.gripper_clearance
    if np.min(np.linalg.norm(ts - other.pose.t, axis=1)) > reach + _reach(other.spec) + pad:
        return None
    other_body = other.pose.apply(gripper_body_local(other.spec))
    for p in poses:
        local = to_gripper_frame(other_body, p)
        for name in ("palm", "finger_l", "finger_r"):
            lo, hi = boxes[name]
            if np.all((local >= lo - pad) & (local <= hi + pad), axis=-1).any():
                return "gripper"
    return None


def approach_poses(target, cfg):
    x = target.R[:, 0]
    offsets = np.arange(cfg.approach_standoff, 0.0, -cfg.approach_step)
    return [G.Pose(target.R, target.t - s * x) for s in offsets] + [target]


def _closing_contents(obj, pose, spec, labels):
    lo, hi = gripper_boxes(spec)["closing"]
    local = to_gripper_frame(obj.world_points(), pose)
    mask = np.all((local >= lo) & (local <= hi), axis=1) & np.isin(obj.labels, labels)
    return local, mask


def grasp_holds(obj, pose, spec, cfg, labels=(0, 1)):
    """Attach predicate: enough points in the closing region on both finger sides."""
    local, mask = _closing_contents(obj, pose, spec, labels)
    y = local[mask, 1]
    return bool(mask.sum() >= cfg.min_grasp_points and (y > 0).any() and (y < 0).any())


def _center_jaws(obj, pose, spec, rounds=3):
    """Shift ``pose`` along its opening axis so the jaws straddle the object's
    cross-section (a floating-jaw gripper closing on the part it reaches)."""
    for _ in range(rounds):
        local, mask = _closing_contents(obj, pose, spec, (0, 1))
        if not mask.any():
            break
        y = local[mask, 1]
        shift = 0.5 * (y.max() + y.min())
        if abs(shift) < 1e-6:
            break
        pose = G.Pose(pose.R, pose.t + pose.R[:, 1] * shift)
    return pose


def attempt_grasp(scene, gripper_id, target, target_labels=None, cfg=DEFAULT_SIM):
    """Approach ``target`` along the forward axis and try to close on an object.

    The jaws are centered on the reached cross-section before the approach is
    swept for collisions; the attach test runs at the centered pose.
    """
    if not (np.all(np.isfinite(target.R)) and np.all(np.isfinite(target.t))):
        raise ValueError("target pose must be finite")
    labels = default_target_labels(scene, gripper_id) if target_labels is None else tuple(target_labels)
    g = scene.grippers[gripper_id]
    spec = g.spec
    held_by_other = _attached_index(_other(scene, gripper_id))
    best, best_n = None, 0
    for i, obj in enumerate(scene.objects):
        if obj.state == ObjectState.FALLEN or i == held_by_other:
            continue
        n = int(_closing_contents(obj, target, spec, (0, 1))[1].sum())
        if n > best_n:
            best, best_n = i, n
    pose = target if best is None else _center_jaws(scene.objects[best], target, spec)
    if _collision(scene, gripper_id, approach_poses(pose, cfg), cfg):
        return ActionOutcome(Outcome.COLLISION, scene, detail="approach")
    new = scene.copy()
    ng = new.grippers[gripper_id]
    ng.pose = pose
    if best is None or best_n < cfg.min_grasp_points:
        return ActionOutcome(Outcome.NO_CONTACT, new)
    obj = new.objects[best]
    _, mask = _closing_contents(obj, pose, spec, (0, 1))
    if (mask & ~np.isin(obj.labels, labels)).any():
        return ActionOutcome(Outcome.COLLISION, scene, detail="non-target part")
    if not grasp_holds(obj, pose, spec, cfg, labels):
        return ActionOutcome(Outcome.UNSTABLE, new)
    ng.attachment = Attachment(best, pose.inverse() @ obj.pose)
    obj.state = ObjectState.GRASPED
    return ActionOutcome(Outcome.OK, new)


def _drop(scene, idx, cfg):
    obj = scene.objects[idx]
    if support_fraction(obj) >= cfg.support_threshold:
        place_on_table(obj, obj.pose.R, obj.pose.t[:2])
    else:
        obj.state = ObjectState.FALLEN
    if scene.press is not None and scene.press.object_index == idx:
        scene.press = None


def _rotation_log(R):
    cos = np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), 0.0
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.linalg.norm(axis) < 1e-6:
        # near a half turn the antisymmetric part vanishes
        M = (R + np.eye(3)) / 2
        axis = M[:, int(np.argmax(np.diag(M)))]
    return axis / np.linalg.norm(axis), angle


def interpolate_poses(a, b, steps):
    axis, angle = _rotation_log(b.R @ a.R.T)
    out = []
    for k in range(1, steps + 1):
        f = k / steps
        out.append(G.Pose(G.axis_angle(axis, f * angle) @ a.R, a.t + f * (b.t - a.t)))
    out[-1] = b
    return out


def move_gripper(scene, gripper_id, target, steps=None, cfg=DEFAULT_SIM):
    """Carry the gripper (and any attached object, rigidly) to ``target``."""
    g = scene.grippers[gripper_id]
    path = interpolate_poses(g.pose, target, steps or cfg.carry_steps)
    if _collision(scene, gripper_id, path, cfg):
        return ActionOutcome(Outcome.COLLISION, scene)
    att = g.attachment
    if att is not None:
        canon = scene.objects[att.object_index].canonical_points()
        for p in path:
            if _table_hits((p @ att.relative).apply(canon), cfg).any():
                return ActionOutcome(Outcome.COLLISION, scene, detail="carried object")
    new = scene.copy()
    ng = new.grippers[gripper_id]
    ng.pose = target
    if att is None:
        return ActionOutcome(Outcome.OK, new)
    obj = new.objects[att.object_index]
    obj.pose = target @ att.relative
    if new.press is not None and new.press.object_index == att.object_index:
        new.press = None
    if not grasp_holds(obj, target, g.spec, cfg, default_target_labels(new, gripper_id)):
        ng.attachment = None
        _drop(new, att.object_index, cfg)
        return ActionOutcome(Outcome.UNSTABLE, new)
    return ActionOutcome(Outcome.OK, new)


def lift(scene, gripper_id, dz, cfg=DEFAULT_SIM):
    g = scene.grippers[gripper_id]
    return move_gripper(scene, gripper_id, G.Pose(g.pose.R, g.pose.t + np.array([0.0, 0.0, dz])), cfg=cfg)


def _first_contact(body, pts, d, tol, distance):
    """Smallest travel s in [0, distance] bringing any body point within ``tol``
    of any object point when swept along unit ``d``; None if never."""
    u, v = G.orthonormal_basis(d)
    plane = np.stack([u, v], axis=1)
    near = cKDTree(body @ plane).sparse_distance_matrix(cKDTree(pts @ plane), tol, output_type="ndarray")
    if len(near) == 0:
        return None
    a = pts[near["j"]] @ d - body[near["i"]] @ d
    half = np.sqrt(np.maximum(tol * tol - near["v"] ** 2, 0.0))
    valid = a + half >= 0.0
    if not valid.any():
        return None
    best = max(0.0, float(np.min(np.maximum(a[valid] - half[valid], 0.0))))
    return None if best > distance else best


def push(scene, gripper_id, contact_pose, direction, distance, cfg=DEFAULT_SIM):
    """Sweep the gripper from ``contact_pose`` along a horizontal direction;
    objects translate by the travel remaining after first contact."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(d[2]) > 1e-6:
        raise ValueError("push direction must be horizontal")
    d = G.unit(d)
    if not 0.0 < distance <= 0.5:
        raise ValueError("push distance must lie in (0, 0.5]")
    if _collision(scene, gripper_id, [contact_pose], cfg, solid_labels=()):
        return ActionOutcome(Outcome.COLLISION, scene)
    g = scene.grippers[gripper_id]
    body = contact_pose.apply(gripper_shell_local(g.spec))
    hit, s_hit = None, None
    for i, obj in enumerate(scene.objects):
        if obj.state != ObjectState.ON_TABLE:
            continue
        s = _first_contact(body, obj.world_points(), d, cfg.push_contact_tol, distance)
        if s is not None and (s_hit is None or s < s_hit):
            hit, s_hit = i, s
    if hit is None:
        return ActionOutcome(Outcome.NO_CONTACT, scene)
    new = scene.copy()
    new.grippers[gripper_id].pose = G.Pose(contact_pose.R, contact_pose.t + distance * d)
    obj = new.objects[hit]
    obj.pose = G.Pose(obj.pose.R, obj.pose.t + (distance - s_hit) * d)
    if support_fraction(obj) < cfg.support_threshold:
        obj.state = ObjectState.FALLEN
        return ActionOutcome(Outcome.FALLEN, new)
    return ActionOutcome(Outcome.OK, new)


def press(scene, gripper_id, contact_pose, cfg=DEFAULT_SIM):
    """Press a plate rim down with the fingertips; the plate tilts about the
    table contact line under the pressed rim, raising the far side."""
    obj = scene.target
    if obj is None or obj.category != Category.PLATE:
        raise NotAPlate("press applies to plates only")
    if obj.state != ObjectState.ON_TABLE or scene.press is not None:
        return ActionOutcome(Outcome.NO_CONTACT, scene, detail="plate not free")
    if _collision(scene, gripper_id, [contact_pose], cfg, solid_labels=()):
        return ActionOutcome(Outcome.COLLISION, scene)
    spec = scene.grippers[gripper_id].spec
    x = contact_pose.R[:, 0]
    if G.angle_between(x, [0.0, 0.0, -1.0]) > cfg.press_cone:
        return ActionOutcome(Outcome.NO_CONTACT, scene, detail="not pressing down")
    tip = contact_pose.t + spec.finger_depth * x
    pts = obj.world_points()
    dist = np.linalg.norm(pts - tip, axis=1)
    j = int(np.argmin(dist))
    radius = obj.shape_params["radius"]
    canon = obj.canonical_points()[j]
    if dist[j] > cfg.press_contact_radius or np.hypot(canon[0], canon[1]) < cfg.press_rim_fraction * radius:
        return ActionOutcome(Outcome.NO_CONTACT, scene, detail="not on rim")
    center = obj.pose.t
    u = tip[:2] - center[:2]
    u = np.array([u[0], u[1], 0.0]) / np.linalg.norm(u)
    pivot = np.array([center[0], center[1], 0.0]) + radius * u
    Rp = G.axis_angle(np.cross([0.0, 0.0, 1.0], u), cfg.press_angle)
    tilt = G.Pose(Rp, pivot - Rp @ pivot)
    new = scene.copy()
    new.objects[0].pose = tilt @ obj.pose
    new.grippers[gripper_id].pose = contact_pose
    new.press = PressState(gripper_id, 0)
    return ActionOutcome(Outcome.OK, new)


def actuation_frame(category, motion_dir):
    """Gripper frame for driving a joint: forward axis along the signed motion,
    jaws spread horizontally (bottle) or vertically (lighter)."""
    category = Category(category)
    x = ACTUATION_SIGN.get(category, 1.0) * G.unit(motion_dir)
    ref = ACTUATION_SPREAD.get(category)
    if ref is None:
        # spread vertically
        y = np.array([0.0, 0.0, 1.0]) - x[2] * x
    else:
        y = np.cross(x, ref)
    if np.linalg.norm(y) < 1e-6:
        y = G.orthonormal_basis(x)[0]
    return G.frame_from_axes(x, y)


def actuation_motion(category, orientation):
    """Inverse of :func:`actuation_frame`: motion direction implied by a gripper frame."""
    return ACTUATION_SIGN.get(Category(category), 1.0) * np.asarray(orientation)[:, 0]


def actuation_pose(obj, contact_point, motion_dir, spec, orientation=None):
    if orientation is None:
        orientation = actuation_frame(obj.category, motion_dir)
    x = orientation[:, 0]
    return G.Pose(orientation, np.asarray(contact_point, dtype=np.float64) - x * spec.finger_depth / 2)


def actuate_joint(scene, gripper_id, contact_point, motion_dir, travel, orientation=None, cfg=DEFAULT_SIM):
    """Drive the target's joint by ``travel`` projected onto its free direction."""
    obj = scene.target
    if obj is None or obj.joint is None:
        raise ValueError("target object has no articulation")
    contact_point = np.asarray(contact_point, dtype=np.float64)
    mov = obj.world_points()[obj.labels == Part.MOVABLE]
    if len(mov) == 0 or np.min(np.linalg.norm(mov - contact_point, axis=1)) > cfg.joint_contact_radius:
        return ActionOutcome(Outcome.NO_CONTACT, scene, detail="no movable part at contact")
    free = obj.joint_free_direction()
    angle = G.angle_between(motion_dir, free)
    if angle > cfg.joint_angle_gate:
        return ActionOutcome(Outcome.NO_CONTACT, scene, detail="misaligned")
    g = scene.grippers[gripper_id]
    pose = actuation_pose(obj, contact_point, motion_dir, g.spec, orientation)
    if _collision(scene, gripper_id, approach_poses(pose, cfg), cfg, solid_labels=(int(Part.FIXED),)):
        return ActionOutcome(Outcome.COLLISION, scene)
    new = scene.copy()
    j = new.objects[0].joint
    lo, hi = j.limits
    target = float(np.clip(j.value + travel * np.cos(angle), lo, hi))
    delta = target - j.value
    j.value = target
    new.grippers[gripper_id].pose = pose
    return ActionOutcome(Outcome.JOINT_MOVED, new, delta=delta)


def check_success(scene, task_kind, cfg=DEFAULT_SIM):
    task_kind = TaskKind(task_kind)
    obj = scene.target
    if obj is None or obj.state == ObjectState.FALLEN:
        return False
    if task_kind == TaskKind.ARTICULATED:
        j = obj.joint
        return j is not None and (j.value - j.limits[0]) >= cfg.joint_success_fraction * j.range - 1e-12
    att = scene.grippers["primary"].attachment
    if att is None or att.object_index != 0:
        return False
    return bool(obj.centroid()[2] >= cfg.lift_success_height)
