"""Procedural objects, the two-gripper table scene, and top-down partial-cloud rendering."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geometry as G
from . import shapes
from .cloud import LabeledCloud, Part, write_ply
from .config import GripperSpec
from .errors import BadShapeParams, EmptyScene, PlacementInfeasible

TABLE_X = (-0.4, 0.4)
TABLE_Y = (-0.6, 0.6)
EDGE_X = 0.4
PITCH = 0.004
# camera window: table footprint plus a margin so overhanging parts stay visible
VIEW_MARGIN = 0.2
CLOUD_SIZE = 256
RENDER_SPACING = 0.002
HOME = {"assistant": (-0.8, 0.0, 0.4), "primary": (0.8, 0.0, 0.4)}


class Category(str, enum.Enum):
    PLATE = "Plate"
    BOTTLE = "Bottle"
    THIN_BOX = "ThinBox"
    BOWL = "Bowl"
    LIGHTER = "Lighter"


class TaskKind(str, enum.Enum):
    ARTICULATED = "Articulated"
    EDGE_PUSHING = "EdgePushing"
    PLATE_LIFTING = "PlateLifting"


class ObjectState(str, enum.Enum):
    ON_TABLE = "OnTable"
    GRASPED = "Grasped"
    FALLEN = "Fallen"


TASK_OF = {
    Category.PLATE: TaskKind.PLATE_LIFTING,
    Category.BOTTLE: TaskKind.ARTICULATED,
    Category.LIGHTER: TaskKind.ARTICULATED,
    Category.THIN_BOX: TaskKind.EDGE_PUSHING,
    Category.BOWL: TaskKind.EDGE_PUSHING,
}

# (name, low, high) per category
SHAPE_RANGES = {
    Category.PLATE: {"radius": (0.06, 0.12), "thickness": (0.005, 0.02)},
    Category.BOTTLE: {"height": (0.10, 0.20), "radius": (0.012, 0.018)},
    Category.THIN_BOX: {"size_x": (0.08, 0.25), "size_y": (0.08, 0.25), "thickness": (0.005, 0.02)},
    Category.BOWL: {"radius": (0.05, 0.10)},
    Category.LIGHTER: {"length": (0.05, 0.08)},
}

BOWL_WALL = 0.003
# flat flange around the rim; the bowl rests on it
BOWL_LIP = 0.007
LIGHTER_WIDTH = 0.025
LIGHTER_DEPTH = 0.014
LIGHTER_TRAVEL = 0.004


class JointKind(str, enum.Enum):
    REVOLUTE = "Revolute"
    PRISMATIC = "Prismatic"


@dataclass
class ArticulationJoint:
    kind: JointKind
    axis: np.ndarray
    origin: np.ndarray
    limits: tuple
    value: float = 0.0

    def __post_init__(self):
        self.axis = G.unit(self.axis)
        self.origin = np.asarray(self.origin, dtype=np.float64)
        lo, hi = self.limits
        if not hi > lo:
            raise ValueError("joint limits need hi > lo")
        if not lo <= self.value <= hi:
            raise ValueError("joint value outside limits")

    @property
    def range(self):
        return self.limits[1] - self.limits[0]

    def local_transform(self, value=None):
        """Canonical-frame motion of the movable part at ``value``."""
        v = self.value if value is None else value
        if self.kind == JointKind.PRISMATIC:
            return G.Pose(np.eye(3), v * self.axis)
        R = G.axis_angle(self.axis, v)
        return G.Pose(R, self.origin - R @ self.origin)


@dataclass
class ObjectModel:
    category: Category
    shape_params: dict
    seed: int
    points: np.ndarray
    labels: np.ndarray
    render_points: np.ndarray
    render_labels: np.ndarray
    functional_axis: np.ndarray
    joint: Optional[ArticulationJoint] = None
    pose: G.Pose = field(default_factory=G.Pose.identity)
    state: ObjectState = ObjectState.ON_TABLE

    def copy(self):
        # canonical point arrays are never mutated, so they are shared
        joint = None if self.joint is None else replace(self.joint)
        return replace(self, joint=joint)

    def canonical_points(self, dense=False):
        pts = self.render_points if dense else self.points
        labels = self.render_labels if dense else self.labels
        if self.joint is None or self.joint.value == 0.0:
            return pts
        mov = labels == Part.MOVABLE
        out = pts.copy()
        out[mov] = self.joint.local_transform().apply(pts[mov])
        return out

    def world_points(self, dense=False):
        return self.pose.apply(self.canonical_points(dense))

    def world_axis(self):
        return self.pose.R @ self.functional_axis

    def joint_free_direction(self):
        """World direction in which the joint value increases (prismatic joints)."""
        return self.pose.R @ self.joint.axis

    def centroid(self):
        return self.world_points().mean(axis=0)


def _check_params(category, params):
    ranges = SHAPE_RANGES[category]
    for name, (lo, hi) in ranges.items():
        if name not in params:
            raise BadShapeParams(f"{category.value} needs parameter {name!r}")
        v = params[name]
        if not (np.isfinite(v) and lo - 1e-12 <= v <= hi + 1e-12):
            raise BadShapeParams(f"{category.value}.{name}={v} outside [{lo}, {hi}]")
    extra = set(params) - set(ranges)
    if extra:
        raise BadShapeParams(f"unknown parameters {sorted(extra)} for {category.value}")


def sample_shape_params(category, seed):
    rng = np.random.default_rng(seed)
    return {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in SHAPE_RANGES[Category(category)].items()}


def _parts(category, p):
    F, M = Part.FIXED, Part.MOVABLE
    joint = None
    if category == Category.PLATE:
        R, t = p["radius"], p["thickness"]
        parts = [(shapes.Disk(R, 0.0), F), (shapes.Disk(R, t), F), (shapes.Frustum(R, R, 0.0, t), F)]
        axis = (0.0, 0.0, 1.0)
    elif category == Category.BOTTLE:
        H, r = p["height"], p["radius"]
        body_top, neck_top = 0.72 * H, 0.82 * H
        rn, rc = 0.6 * r, 0.7 * r
        parts = [
            (shapes.Disk(r, 0.0), F),
            (shapes.Frustum(r, r, 0.0, body_top), F),
            (shapes.Frustum(r, rn, body_top, neck_top), F),
            (shapes.Frustum(rc, rc, neck_top, H), M),
            (shapes.Disk(rc, H), M),
            (shapes.Disk(rc, neck_top, r_in=rn), M),
        ]
        joint = ArticulationJoint(JointKind.PRISMATIC, (0, 0, 1), (0, 0, neck_top), (0.0, H - neck_top))
        axis = (0.0, 0.0, 1.0)
    elif category == Category.THIN_BOX:
        sx, sy, t = p["size_x"], p["size_y"], p["thickness"]
        parts = [(f, F) for f in shapes.box_faces((-sx / 2, -sy / 2, 0.0), (sx / 2, sy / 2, t))]
        axis = (0.0, 0.0, 1.0)
    elif category == Category.BOWL:
        R = p["radius"]
        h = 0.6 * R
        ri, hi = R - BOWL_WALL, h - BOWL_WALL
        # inverted: rim on z = 0, dome up, flat foot on top
        t_foot = np.arcsin(0.35)
        parts = [
            (shapes.SpheroidZone(R, h, t_foot, np.pi / 2), F),
            (shapes.SpheroidZone(ri, hi, 0.0, np.pi / 2), F),
            (shapes.Disk(R * np.sin(t_foot), h * np.cos(t_foot)), F),
            (shapes.Disk(R + BOWL_LIP, 0.0, r_in=ri), F),
        ]
        axis = (0.0, 0.0, -1.0)
    elif category == Category.LIGHTER:
        L = p["length"]
        w, d = LIGHTER_WIDTH, LIGHTER_DEPTH
        bx = 0.010
        parts = [(f, F) for f in shapes.box_faces((-w / 2, -d / 2, 0.0), (w / 2, d / 2, L))]
        parts += [(f, M) for f in shapes.box_faces((w / 2 - bx - 0.002, -bx / 2, L), (w / 2 - 0.002, bx / 2, L + 0.006))]
        joint = ArticulationJoint(JointKind.PRISMATIC, (0, 0, -1), (0, 0, L), (0.0, LIGHTER_TRAVEL))
        axis = (0.0, 0.0, 1.0)
    else:
        raise BadShapeParams(f"unknown category {category}")
    return parts, np.asarray(axis, dtype=np.float64), joint


def generate_object(category, shape_params=None, seed=0, n_points=2048):
    """Procedural object in its canonical frame (lowest-decile centroid at z = 0)."""
    category = Category(category)
    params = sample_shape_params(category, seed) if shape_params is None else dict(shape_params)
    _check_params(category, params)
    parts, axis, joint = _parts(category, params)
    rng = np.random.default_rng(seed)
    pts, labels = shapes.sample_surface(parts, n_points, rng)
    dense, dense_labels = shapes.grid_surface(parts, RENDER_SPACING)
    z = pts[:, 2]
    k = max(1, int(np.ceil(0.1 * len(z))))
    shift = np.array([0.0, 0.0, -np.sort(z)[:k].mean()])
    if joint is not None:
        joint.origin = joint.origin + shift
    return ObjectModel(category, params, int(seed), pts + shift, labels, dense + shift, dense_labels,
                       axis, joint)


@dataclass
class Attachment:
    object_index: int
    relative: G.Pose  # gripper -> object


@dataclass
class Gripper:
    name: str
    pose: G.Pose
    spec: GripperSpec = field(default_factory=GripperSpec)
    attachment: Optional[Attachment] = None

    @property
    def label(self):
        return Part.GRIPPER_ASSISTANT if self.name == "assistant" else Part.GRIPPER_PRIMARY

    def copy(self):
        return replace(self)


@dataclass
class PressState:
    gripper: str
    object_index: int


@dataclass
class TableScene:
    task_kind: TaskKind
    objects: list
    grippers: dict
    seed: int = 0
    press: Optional[PressState] = None

    def copy(self):
        return TableScene(self.task_kind, [o.copy() for o in self.objects],
                          {k: g.copy() for k, g in self.grippers.items()}, self.seed,
                          None if self.press is None else replace(self.press))

    @property
    def target(self):
        return self.objects[0] if self.objects else None

    def gripper(self, gid):
        return self.grippers[gid]

    def state_hash(self):
        h = hashlib.sha256()
        for o in self.objects:
            h.update(o.pose.matrix().tobytes())
            h.update(o.state.value.encode())
            if o.joint is not None:
                h.update(np.float64(o.joint.value).tobytes())
        for name in sorted(self.grippers):
            g = self.grippers[name]
            h.update(name.encode())
            h.update(g.pose.matrix().tobytes())
            if g.attachment is not None:
                h.update(np.int64(g.attachment.object_index).tobytes())
                h.update(g.attachment.relative.matrix().tobytes())
        h.update(b"press" if self.press else b"-")
        return h.hexdigest()


def home_pose(name):
    # forward axis down, left axis along world y
    R = G.frame_from_axes(np.array([0.0, 0.0, -1.0]), np.array([0.0, 1.0, 0.0]))
    return G.Pose(R, np.array(HOME[name]))


def resting_rotation(category, yaw):
    category = Category(category)
    if category == Category.BOTTLE:
        rest = G.rot_y(np.pi / 2)
    elif category == Category.LIGHTER:
        rest = G.rot_x(np.pi / 2)
    else:
        rest = np.eye(3)
    return G.rot_z(yaw) @ rest


def lowest_decile(points):
    k = max(1, int(np.ceil(0.1 * len(points))))
    return points[np.argsort(points[:, 2], kind="stable")[:k]]


def in_footprint(xy, margin=0.0):
    xy = np.atleast_2d(xy)
    return ((xy[:, 0] >= TABLE_X[0] + margin) & (xy[:, 0] <= TABLE_X[1] - margin)
            & (xy[:, 1] >= TABLE_Y[0] + margin) & (xy[:, 1] <= TABLE_Y[1] - margin))


def support_fraction(obj):
    low = lowest_decile(obj.world_points())
    return float(np.mean(in_footprint(low[:, :2])))


def place_on_table(obj, R, xy):
    pts = obj.canonical_points() @ R.T
    z = -pts[:, 2].min()
    obj.pose = G.Pose(R, np.array([xy[0], xy[1], z]))
    obj.state = ObjectState.ON_TABLE
    return obj


def spawn_scene(task_kind, obj, seed, position_jitter=0.05, gripper_spec=None):
    """Place ``obj`` near the table center in a stable resting pose with a uniform yaw."""
    task_kind = TaskKind(task_kind)
    rng = np.random.default_rng(seed)
    yaw = rng.uniform(0.0, 2 * np.pi)
    xy = rng.uniform(-position_jitter, position_jitter, 2)
    obj = obj.copy()
    if obj.joint is not None:
        obj.joint.value = obj.joint.limits[0]
    place_on_table(obj, resting_rotation(obj.category, yaw), xy)
    if not np.all(in_footprint(obj.world_points()[:, :2], margin=0.05)):
        raise PlacementInfeasible("object does not fit the table with a 0.05 m margin")
    spec = gripper_spec or GripperSpec()
    grippers = {n: Gripper(n, home_pose(n), spec) for n in ("assistant", "primary")}
    return TableScene(task_kind, [obj], grippers, int(seed))


# ---------------------------------------------------------------- gripper geometry

def gripper_boxes(spec):
    """Named boxes (lo, hi) in the gripper frame: palm, two fingers, closing region."""
    h = spec.max_opening / 2
    w = spec.finger_width
    return {
        "palm": (np.array([-spec.palm_depth, -(h + w), -spec.palm_height / 2]),
                 np.array([0.0, h + w, spec.palm_height / 2])),
        "finger_l": (np.array([0.0, h, -spec.finger_height / 2]),
                     np.array([spec.finger_depth, h + w, spec.finger_height / 2])),
        "finger_r": (np.array([0.0, -(h + w), -spec.finger_height / 2]),
                     np.array([spec.finger_depth, -h, spec.finger_height / 2])),
        "closing": (np.array([0.0, -h, -spec.finger_height / 2]),
                    np.array([spec.finger_depth, h, spec.finger_height / 2])),
    }


_SAMPLE_CACHE = {}


def _box_lattice(lo, hi, spacing):
    axes = [np.linspace(lo[i], hi[i], max(2, int(np.ceil((hi[i] - lo[i]) / spacing)) + 1)) for i in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return g


def gripper_body_local(spec, spacing=0.005):
    """Lattice samples filling the palm and finger boxes (gripper frame)."""
    key = (spec, spacing, "body")
    if key not in _SAMPLE_CACHE:
        boxes = gripper_boxes(spec)
        _SAMPLE_CACHE[key] = np.concatenate(
            [_box_lattice(*boxes[n], spacing) for n in ("palm", "finger_l", "finger_r")])
    return _SAMPLE_CACHE[key]


def gripper_shell_local(spec, spacing=0.005):
    """Boundary subset of :func:`gripper_body_local` (enough for sweep contact)."""
    key = (spec, spacing, "shell")
    if key not in _SAMPLE_CACHE:
        boxes = gripper_boxes(spec)
        out = []
        for n in ("palm", "finger_l", "finger_r"):
            lo, hi = boxes[n]
            g = _box_lattice(lo, hi, spacing)
            out.append(g[np.any(np.isclose(g, lo) | np.isclose(g, hi), axis=1)])
        _SAMPLE_CACHE[key] = np.concatenate(out)
    return _SAMPLE_CACHE[key]


def gripper_surface_local(spec):
    key = (spec, RENDER_SPACING, "surface")
    if key not in _SAMPLE_CACHE:
        boxes = gripper_boxes(spec)
        faces = []
        for n in ("palm", "finger_l", "finger_r"):
            faces += shapes.box_faces(*boxes[n])
        _SAMPLE_CACHE[key] = np.concatenate([f.grid(RENDER_SPACING) for f in faces])
    return _SAMPLE_CACHE[key]


def points_in_box(points, pose, lo, hi, pad=0.0):
    local = (np.asarray(points) - pose.t) @ pose.R
    return np.all((local >= lo - pad) & (local <= hi + pad), axis=-1)


def to_gripper_frame(points, pose):
    return (np.asarray(points) - pose.t) @ pose.R


# ---------------------------------------------------------------- rendering

def farthest_point_order(points, n):
    """Deterministic farthest-point sampling; starts at the first point."""
    m = len(points)
    n = min(n, m)
    order = np.empty(n, dtype=np.int64)
    dist = np.full(m, np.inf)
    idx = 0
    for i in range(n):
        order[i] = idx
        d = np.sum((points - points[idx]) ** 2, axis=1)
        np.minimum(dist, d, out=dist)
        idx = int(np.argmax(dist))
    return order


def scene_surface(scene, include_table=False):
    """Dense labeled surface samples of everything the camera could see."""
    pts, labels = [], []
    for obj in scene.objects:
        if obj.state == ObjectState.FALLEN:
            continue
        pts.append(obj.world_points(dense=True))
        labels.append(obj.render_labels)
    for g in scene.grippers.values():
        local = gripper_surface_local(g.spec)
        pts.append(g.pose.apply(local))
        labels.append(np.full(len(local), int(g.label)))
    if include_table:
        xs = np.arange(TABLE_X[0] + PITCH / 2, TABLE_X[1], PITCH)
        ys = np.arange(TABLE_Y[0] + PITCH / 2, TABLE_Y[1], PITCH)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        tp = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
        pts.append(tp)
        labels.append(np.full(len(tp), int(Part.TABLE)))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(pts), np.concatenate(labels)


def zbuffer_visible(points, pitch=PITCH):
    """Indices of the highest point per orthographic top-down cell inside the view window."""
    x0, x1 = TABLE_X[0] - VIEW_MARGIN, TABLE_X[1] + VIEW_MARGIN
    y0, y1 = TABLE_Y[0] - VIEW_MARGIN, TABLE_Y[1] + VIEW_MARGIN
    inside = ((points[:, 0] >= x0) & (points[:, 0] < x1) & (points[:, 1] >= y0)
              & (points[:, 1] < y1) & (points[:, 2] > -0.05))
    idx = np.nonzero(inside)[0]
    if len(idx) == 0:
        return idx
    ny = int(np.ceil((y1 - y0) / pitch))
    cx = np.floor((points[idx, 0] - x0) / pitch).astype(np.int64)
    cy = np.floor((points[idx, 1] - y0) / pitch).astype(np.int64)
    cell = cx * ny + cy
    order = np.lexsort((-points[idx, 2], cell))
    cell_sorted = cell[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    return idx[order[first]]


def render_partial_cloud(scene, n_points=CLOUD_SIZE, include_table=False):
    pts, labels = scene_surface(scene, include_table)
    vis = zbuffer_visible(pts)
    if len(vis) == 0:
        raise EmptyScene("no visible surface points")
    vp = pts[vis].astype(np.float32).astype(np.float64)
    vl = labels[vis]
    canon = np.lexsort((vp[:, 2], vp[:, 1], vp[:, 0]))
    vp, vl = vp[canon], vl[canon]
    order = farthest_point_order(vp, n_points)
    if len(order) < n_points:
        order = np.resize(order, n_points)
    return LabeledCloud(vp[order], vl[order])


def export_object_ply(obj, path, world=False):
    pts = obj.world_points() if world else obj.canonical_points()
    write_ply(path, pts, ints={"part": obj.labels})
