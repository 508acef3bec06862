"""Hand-crafted preparatory strategies, the uniform-random baseline, and the
stage runner that turns any policy into a recorded :class:`Episode`.

Orientation rules are exposed per contact point so that probes (and the
learned pipeline's tests) can reuse them.
"""
from __future__ import annotations

import numpy as np

from . import geometry as G
from . import simulator as S
from .cloud import Part
from .config import HeuristicConfig, SimConfig
from .dataset import Episode, InteractionRecord
from .errors import (NoFixedLink, NoMovableVisible, NoOverhang, NotAPlate, NotGrasped, ObjectNotOnTable,
                     PrepManipError)
from .scene import (BOWL_LIP, EDGE_X, Category, ObjectState, TaskKind, home_pose, render_partial_cloud, spawn_scene)

DOWN = np.array([0.0, 0.0, -1.0])
UP = np.array([0.0, 0.0, 1.0])
EDGE_LINE = np.array([0.0, 1.0, 0.0])
PUSH_DIR = np.array([1.0, 0.0, 0.0])

# canonical left axis for the assistant's pre-grasp and the direction the
# functional axis should face after reorientation
CATEGORY_RULES = {
    Category.BOTTLE: {"left": (0.0, 1.0, 0.0), "face": (1.0, 0.0, 0.0)},
    Category.LIGHTER: {"left": (1.0, 0.0, 0.0), "face": (1.0, 0.0, 0.0)},
    Category.PLATE: {"left": (0.0, 1.0, 0.0), "face": (0.0, 0.0, 1.0)},
    Category.THIN_BOX: {"left": (0.0, 1.0, 0.0), "face": (0.0, 0.0, 1.0)},
    Category.BOWL: {"left": (0.0, 1.0, 0.0), "face": (0.0, 0.0, -1.0)},
}

DEFAULT_HEUR = HeuristicConfig()


def _frame(x0, y0, rng, dev):
    x = G.perturb_within_cone(x0, dev, rng)
    y = G.perturb_within_cone(y0, dev, rng)
    if abs(G.unit(y) @ x) > 0.999:
        y = G.orthonormal_basis(x)[0]
    return G.frame_from_axes(x, y)


def _horizontal(v):
    h = np.array([v[0], v[1], 0.0])
    n = np.linalg.norm(h)
    return h / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])


def _pick(points, rng):
    return np.array(points[int(rng.integers(len(points)))], dtype=np.float64)


def object_points(cloud, labels=(Part.FIXED, Part.MOVABLE)):
    return cloud.points[np.isin(cloud.labels, [int(v) for v in labels])]


def _cloud(scene, cloud):
    return render_partial_cloud(scene) if cloud is None else cloud


# ---------------------------------------------------------------- orientation rules

def pregrasp_frame(obj, rng, cfg=DEFAULT_HEUR):
    left = obj.pose.R @ np.array(CATEGORY_RULES[obj.category]["left"])
    return _frame(DOWN, left, rng, cfg.deviation_max)


def push_frame(rng, cfg=DEFAULT_HEUR):
    return _frame(DOWN, EDGE_LINE, rng, cfg.deviation_max)


def press_frame(obj, point, rng, cfg=DEFAULT_HEUR):
    n = _horizontal(point - obj.pose.t)
    return _frame(DOWN, np.cross(UP, n), rng, cfg.deviation_max)


def plate_grasp_frame(obj, point, rng, cfg=DEFAULT_HEUR):
    # forward along the inward rim normal, closing axis vertical, up axis tangent
    n = _horizontal(point - obj.pose.t)
    x0 = -n
    y0 = np.cross(np.cross(UP, n), x0)
    R = _frame(x0, y0, rng, cfg.deviation_max)
    if R[2, 0] > 0.0:
        # never approach from below the rim: the standoff would sit under the table top
        R = np.diag([1.0, 1.0, -1.0]) @ R @ np.diag([1.0, -1.0, 1.0])
    return R


def edge_grasp_frame(obj, point, rng, cfg=DEFAULT_HEUR):
    if obj.category == Category.BOWL:
        n = _horizontal(point - obj.pose.t)
        a = rng.uniform(0.0, cfg.bowl_tilt_max)
        return _frame(np.cos(a) * UP - np.sin(a) * n, n, rng, cfg.deviation_max)
    return _frame(-PUSH_DIR, UP, rng, cfg.deviation_max)


def aligned_direction(obj, rng, cfg=DEFAULT_HEUR):
    return G.perturb_within_cone(obj.joint_free_direction(), cfg.deviation_max, rng)


# ---------------------------------------------------------------- stage actions

def articulated_pregrasp(scene, seed, cloud=None, cfg=DEFAULT_HEUR):
    """Assistant grasp on a visible fixed-link point, approaching from above."""
    rng = G.as_rng(seed)
    fixed = object_points(_cloud(scene, cloud), (Part.FIXED,))
    if len(fixed) == 0:
        raise NoFixedLink("no fixed-link point is visible")
    p = _pick(fixed, rng)
    return G.Pose(pregrasp_frame(scene.target, rng, cfg), p)


def _held(scene):
    att = scene.grippers["assistant"].attachment
    if att is None:
        raise NotGrasped("the assistant holds no object")
    return scene.objects[att.object_index]


def reorient_target(scene, seed, cfg=DEFAULT_HEUR):
    """Desired object pose: functional axis toward the primary arm, centroid in
    the shared workspace."""
    rng = G.as_rng(seed)
    obj = _held(scene)
    face = np.array(CATEGORY_RULES[obj.category]["face"])
    axis = G.perturb_within_cone(face, cfg.deviation_max, rng)
    R = G.rotation_between(obj.world_axis(), axis) @ obj.pose.R
    c = np.array(cfg.reorient_center) + rng.uniform(-cfg.reorient_jitter, cfg.reorient_jitter, 3)
    return G.Pose(R, c - R @ obj.canonical_points().mean(axis=0))


def reorient_gripper_target(scene, object_target):
    g = scene.grippers["assistant"]
    return G.reorient_gripper_pose(object_target, _held(scene).pose, g.pose)


def articulated_goal_action(scene, seed, cloud=None, cfg=DEFAULT_HEUR, aligned=None):
    """Primary contact on the movable part plus a motion direction.

    With probability ``align_probability`` the direction follows the joint's
    free direction; otherwise it is uniformly random (failure demonstrations).
    """
    rng = G.as_rng(seed)
    mov = object_points(_cloud(scene, cloud), (Part.MOVABLE,))
    if len(mov) == 0:
        raise NoMovableVisible("no movable point is visible")
    p = _pick(mov, rng)
    draw = rng.random() < cfg.align_probability
    if aligned is None:
        aligned = draw
    d = aligned_direction(scene.target, rng, cfg) if aligned else G.random_unit_vector(rng)
    return p, d


def edge_push_action(scene, seed, cloud=None, cfg=DEFAULT_HEUR):
    rng = G.as_rng(seed)
    obj = scene.target
    if obj.state != ObjectState.ON_TABLE:
        raise ObjectNotOnTable("object must rest on the table to be pushed")
    p = _pick(object_points(_cloud(scene, cloud)), rng)
    R = push_frame(rng, cfg)
    distance = EDGE_X - obj.world_points()[:, 0].max() + rng.uniform(0.0, cfg.push_overshoot_max)
    return G.Pose(R, p), PUSH_DIR.copy(), float(np.clip(distance, 0.005, 0.5))


def _edge_candidates(obj, pts, spec, cfg):
    if obj.category == Category.BOWL:
        # the inner jaw hangs below the rim, so it must clear the edge too
        reach = spec.max_opening / 2 + spec.finger_width + BOWL_LIP
    else:
        reach = spec.finger_depth / 2
    cand = pts[pts[:, 0] > EDGE_X + reach + cfg.edge_grasp_margin]
    if len(cand) == 0 or obj.category == Category.BOWL:
        return cand
    # keep contacts near the exposed edge so the palm clears the object
    world = obj.world_points()
    keep = []
    for p in cand:
        slab = world[np.abs(world[:, 1] - p[1]) <= spec.palm_height / 2]
        keep.append(p[0] >= slab[:, 0].max() - spec.finger_depth / 2 + 0.002)
    keep = np.array(keep)
    return cand[keep] if keep.any() else cand


def edge_grasp_action(scene, seed, cloud=None, cfg=DEFAULT_HEUR):
    """Primary grasp on the overhanging part of a pushed object."""
    rng = G.as_rng(seed)
    obj = scene.target
    pts = object_points(_cloud(scene, cloud))
    over = pts[pts[:, 0] > EDGE_X]
    if len(over) == 0:
        raise NoOverhang("no object point overhangs the table edge")
    cand = _edge_candidates(obj, pts, scene.grippers["primary"].spec, cfg)
    p = _pick(cand if len(cand) else over, rng)
    return G.Pose(edge_grasp_frame(obj, p, rng, cfg), p)


def _plate(scene):
    obj = scene.target
    if obj is None or obj.category != Category.PLATE:
        raise NotAPlate("plate actions need a plate")
    return obj


def plate_press_action(scene, seed, cloud=None, cfg=DEFAULT_HEUR):
    rng = G.as_rng(seed)
    obj = _plate(scene)
    pts = object_points(_cloud(scene, cloud))
    local = obj.pose.inverse().apply(pts)
    r = np.hypot(local[:, 0], local[:, 1])
    R = obj.shape_params["radius"]
    rim = pts[r >= 0.9 * R]
    if len(rim) == 0:
        rim = pts[r >= 0.6 * R]
    p = _pick(rim if len(rim) else pts, rng)
    return G.Pose(press_frame(obj, p, rng, cfg), p)


def plate_grasp_action(scene, seed, cloud=None, cfg=DEFAULT_HEUR):
    """Primary grasp among the highest 10% of visible plate points."""
    rng = G.as_rng(seed)
    obj = _plate(scene)
    pts = object_points(_cloud(scene, cloud))
    top = pts[pts[:, 2] >= np.quantile(pts[:, 2], 0.9)]
    p = _pick(top, rng)
    return G.Pose(plate_grasp_frame(obj, p, rng, cfg), p)


def plate_actions(scene, seed, cfg=DEFAULT_HEUR, sim=S.DEFAULT_SIM):
    """Press pose for the assistant, then the primary grasp chosen on the pressed plate."""
    rng = G.as_rng(seed)
    press = plate_press_action(scene, rng, cfg=cfg)
    out = S.press(scene, "assistant", S.tip_pose_from_action(press, scene.grippers["assistant"].spec), sim)
    return press, plate_grasp_action(out.scene, rng, cfg=cfg)


# ---------------------------------------------------------------- policies

class HeuristicPolicy:
    name = "heuristic"

    def __init__(self, cfg=DEFAULT_HEUR):
        self.cfg = cfg

    def anticipate(self, scene, cloud, rng):
        return None

    def pre_action(self, scene, cloud, rng, anticipated=None):
        task = scene.task_kind
        if task == TaskKind.ARTICULATED:
            return articulated_pregrasp(scene, rng, cloud, self.cfg), None
        if task == TaskKind.EDGE_PUSHING:
            pose, d, dist = edge_push_action(scene, rng, cloud, self.cfg)
            return pose, {"direction": d, "distance": dist}
        return plate_press_action(scene, rng, cloud, self.cfg), None

    def reorient(self, scene, cloud, rng):
        return reorient_gripper_target(scene, reorient_target(scene, rng, self.cfg))

    def goal_action(self, scene, cloud, rng):
        task = scene.task_kind
        if task == TaskKind.ARTICULATED:
            p, d = articulated_goal_action(scene, rng, cloud, self.cfg)
            return G.Pose(S.actuation_frame(scene.target.category, d), p)
        if task == TaskKind.EDGE_PUSHING:
            return edge_grasp_action(scene, rng, cloud, self.cfg)
        return plate_grasp_action(scene, rng, cloud, self.cfg)


class RandomPolicy:
    """Uniform-random actions: random visible object point, Haar orientation,
    random horizontal push."""
    name = "random"

    def __init__(self, cfg=DEFAULT_HEUR):
        self.cfg = cfg

    def anticipate(self, scene, cloud, rng):
        return None

    def _point(self, cloud, rng):
        pts = object_points(cloud)
        return _pick(pts if len(pts) else cloud.points, rng)

    def pre_action(self, scene, cloud, rng, anticipated=None):
        pose = G.Pose(G.random_rotation(rng), self._point(cloud, rng))
        if scene.task_kind == TaskKind.EDGE_PUSHING:
            a = rng.uniform(0.0, 2 * np.pi)
            return pose, {"direction": np.array([np.cos(a), np.sin(a), 0.0]),
                          "distance": float(rng.uniform(0.005, 0.5))}
        return pose, None

    def reorient(self, scene, cloud, rng):
        obj = _held(scene)
        R = G.random_rotation(rng)
        c = np.array(self.cfg.reorient_center) + rng.uniform(-self.cfg.reorient_jitter, self.cfg.reorient_jitter, 3)
        target = G.Pose(R, c - R @ obj.canonical_points().mean(axis=0))
        return reorient_gripper_target(scene, target)

    def goal_action(self, scene, cloud, rng):
        return G.Pose(G.random_rotation(rng), self._point(cloud, rng))


# ---------------------------------------------------------------- stage execution

def execute_pre(scene, action, push=None, sim=S.DEFAULT_SIM):
    """Assistant's preparatory contact: grasp + lift, push + retract, or press."""
    spec = scene.grippers["assistant"].spec
    task = scene.task_kind
    if task == TaskKind.ARTICULATED:
        out = S.attempt_grasp(scene, "assistant", S.grasp_pose_from_action(action, spec), cfg=sim)
        if not out.ok:
            return out
        return S.lift(out.scene, "assistant", DEFAULT_HEUR.assistant_lift, cfg=sim)
    if task == TaskKind.EDGE_PUSHING:
        out = S.push(scene, "assistant", S.tip_pose_from_action(action, spec), push["direction"],
                     push["distance"], cfg=sim)
        if out.ok:
            # the pusher withdraws to its parking pose before the primary acts
            out.scene.grippers["assistant"].pose = home_pose("assistant")
        return out
    return S.press(scene, "assistant", S.tip_pose_from_action(action, spec), cfg=sim)


def execute_goal(scene, action, sim=S.DEFAULT_SIM, final_lift=None):
    """Primary's goal action; returns the outcome of its last sub-step."""
    spec = scene.grippers["primary"].spec
    if scene.task_kind == TaskKind.ARTICULATED:
        cat = scene.target.category
        return S.actuate_joint(scene, "primary", action.t, S.actuation_motion(cat, action.R),
                               sim.actuation_travel, orientation=action.R, cfg=sim)
    out = S.attempt_grasp(scene, "primary", S.grasp_pose_from_action(action, spec), cfg=sim)
    if not out.ok:
        return out
    return S.lift(out.scene, "primary", DEFAULT_HEUR.final_lift if final_lift is None else final_lift, cfg=sim)


def _to_object(obj_pose, action):
    inv = obj_pose.inverse()
    return inv.apply(action.t), inv.R @ action.R


def run_episode(task_kind, obj, scene_seed, policy, seed=None, sim=S.DEFAULT_SIM, probes=0,
                episode_id=None, probe_cfg=DEFAULT_HEUR):
    """Run the staged task with ``policy`` and record everything.

    Any failing outcome (or policy precondition error) ends the episode as a
    failure; later stages are simply absent.
    """
    task_kind = TaskKind(task_kind)
    rng = np.random.default_rng(scene_seed if seed is None else seed)
    scene = spawn_scene(task_kind, obj, scene_seed)
    ep = Episode(episode_id or f"{obj.category.value}-{obj.seed}-{scene_seed}-{policy.name}",
                 task_kind, obj.category, dict(obj.shape_params), int(obj.seed), int(scene_seed), policy.name)
    cloud0 = render_partial_cloud(scene)
    ep.observations["initial"] = cloud0
    ep.object_poses["init"] = scene.target.pose
    init_scene = scene
    exec_scene = None

    def fail(kind):
        ep.outcomes.append(kind)
        ep.success = False

    try:
        anticipated = policy.anticipate(scene, cloud0, rng)
        if anticipated is not None:
            ep.action_goal_anticipatory = anticipated
            ep.stages.append("anticipate")
        action, push = policy.pre_action(scene, cloud0, rng, anticipated)
        ep.action_pre, ep.push = action, push
        ep.stages.append("pre")
        out = execute_pre(scene, action, push, sim)
        ep.outcomes.append(out.kind.value)
        if not out.ok:
            ep.success = False
            return _finish(ep, init_scene, exec_scene, probes, probe_cfg, sim, rng)
        scene = out.scene
        if task_kind == TaskKind.ARTICULATED:
            ep.observations["grasped"] = render_partial_cloud(scene)
            ep.object_poses["grasped"] = scene.target.pose
            ep.gripper_poses["assistant_grasped"] = scene.grippers["assistant"].pose
            ep.stages.append("reorient")
            target = policy.reorient(scene, ep.observations["grasped"], rng)
            out = S.move_gripper(scene, "assistant", target, cfg=sim)
            ep.outcomes.append(out.kind.value)
            if not out.ok:
                ep.success = False
                return _finish(ep, init_scene, exec_scene, probes, probe_cfg, sim, rng)
            scene = out.scene
        exec_scene = scene
        ep.object_poses["fin"] = scene.target.pose
        ep.gripper_poses["assistant_fin"] = scene.grippers["assistant"].pose
        if task_kind == TaskKind.ARTICULATED:
            ep.reorient = scene.target.pose @ ep.object_poses["init"].inverse()
        cloud = render_partial_cloud(scene)
        ep.observations["execution"] = cloud
        ep.stages.append("goal")
        action = policy.goal_action(scene, cloud, rng)
        ep.action_goal = action
        out = execute_goal(scene, action, sim)
        ep.outcomes.append(out.kind.value)
        ep.gripper_poses["primary_fin"] = out.scene.grippers["primary"].pose
        ep.success = bool(out.ok and S.check_success(out.scene, task_kind, sim))
    except PrepManipError as exc:
        fail(type(exc).__name__)
    return _finish(ep, init_scene, exec_scene, probes, probe_cfg, sim, rng)


def _finish(ep, init_scene, exec_scene, probes, cfg, sim, rng):
    if ep.action_pre is not None:
        p, R = _to_object(ep.object_poses["init"], ep.action_pre)
        ep.interactions.append(InteractionRecord("pre", p, R, ep.success))
    if ep.action_goal is not None:
        p, R = _to_object(ep.object_poses["fin"], ep.action_goal)
        ep.interactions.append(InteractionRecord("goal", p, R, ep.success))
    if probes:
        ep.interactions += probe_interactions(init_scene, exec_scene, ep, probes, rng, cfg, sim)
    return ep


def run_heuristic_episode(task_kind, obj, seed, cfg=DEFAULT_HEUR, sim=S.DEFAULT_SIM, probes=0):
    return run_episode(task_kind, obj, seed, HeuristicPolicy(cfg), sim=sim, probes=probes)


def run_random_episode(task_kind, obj, seed, sim=S.DEFAULT_SIM):
    return run_episode(task_kind, obj, seed, RandomPolicy(), sim=sim)


# ---------------------------------------------------------------- probes

def goal_frame_at(scene, point, rng, cfg=DEFAULT_HEUR):
    """Heuristic primary orientation for an arbitrary contact point."""
    obj = scene.target
    if scene.task_kind == TaskKind.ARTICULATED:
        return S.actuation_frame(obj.category, aligned_direction(obj, rng, cfg))
    if scene.task_kind == TaskKind.EDGE_PUSHING:
        return edge_grasp_frame(obj, point, rng, cfg)
    return plate_grasp_frame(obj, point, rng, cfg)


def pre_frame_at(scene, point, rng, cfg=DEFAULT_HEUR):
    obj = scene.target
    if scene.task_kind == TaskKind.ARTICULATED:
        return pregrasp_frame(obj, rng, cfg)
    if scene.task_kind == TaskKind.EDGE_PUSHING:
        return push_frame(rng, cfg)
    return press_frame(obj, point, rng, cfg)


def _goal_probe(scene, point, rng, cfg, sim):
    action = G.Pose(goal_frame_at(scene, point, rng, cfg), point)
    try:
        out = execute_goal(scene, action, sim)
    except PrepManipError:
        return action, False
    return action, bool(out.ok and S.check_success(out.scene, scene.task_kind, sim))


def _pre_probe(scene, point, rng, cfg, sim):
    action = G.Pose(pre_frame_at(scene, point, rng, cfg), point)
    push = None
    if scene.task_kind == TaskKind.EDGE_PUSHING:
        d = EDGE_X - scene.target.world_points()[:, 0].max() + rng.uniform(0.0, cfg.push_overshoot_max)
        push = {"direction": PUSH_DIR.copy(), "distance": float(np.clip(d, 0.005, 0.5))}
    policy = HeuristicPolicy(cfg)
    try:
        out = execute_pre(scene, action, push, sim)
        if not out.ok:
            return action, False
        s = out.scene
        if scene.task_kind == TaskKind.ARTICULATED:
            out = S.move_gripper(s, "assistant", policy.reorient(s, None, rng), cfg=sim)
            if not out.ok:
                return action, False
            s = out.scene
        goal = policy.goal_action(s, render_partial_cloud(s), rng)
        out = execute_goal(s, goal, sim)
    except PrepManipError:
        return action, False
    return action, bool(out.ok and S.check_success(out.scene, scene.task_kind, sim))


def probe_interactions(init_scene, exec_scene, ep, n, rng, cfg=DEFAULT_HEUR, sim=S.DEFAULT_SIM):
    """Try ``n`` heuristic-oriented contacts per stage at random visible object
    points; the empirical success of these tries backs the affordance labels."""
    records = []
    stages = [("pre", init_scene, ep.observations.get("initial"), _pre_probe)]
    if exec_scene is not None:
        stages.append(("goal", exec_scene, ep.observations.get("execution"), _goal_probe))
    for stage, scene, cloud, fn in stages:
        pts = object_points(cloud)
        if len(pts) == 0:
            continue
        pose = scene.target.pose
        for _ in range(n):
            p = _pick(pts, rng)
            action, ok = fn(scene, p, rng, cfg, sim)
            q, R = _to_object(pose, action)
            records.append(InteractionRecord(stage, q, R, ok, "probe"))
    return records
