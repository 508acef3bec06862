"""Episodes, affordance ground truth, on-disk storage and object splits."""
from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as G
from .cloud import LabeledCloud, score_colors, write_ply
from .errors import BadSplit, CorruptManifest, IncompleteTrajectory, InsufficientData
from .scene import Category, TaskKind

MAGIC = b"BPMC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIII")
DEFAULT_K = 16
OBSERVATION_STAGES = ("initial", "grasped", "execution")


class Stage(str, enum.Enum):
    GOAL = "Goal"
    ANTICIPATORY = "Anticipatory"
    PRE = "Pre"


@dataclass
class InteractionRecord:
    """One tried contact, expressed in the object's canonical frame."""
    stage: str  # "goal" or "pre"
    point: np.ndarray
    rotation: np.ndarray
    success: bool
    source: str = "executed"

    def to_json(self):
        return {"stage": self.stage, "point": [float(v) for v in self.point],
                "rotation": [float(v) for v in np.asarray(self.rotation).reshape(-1)],
                "success": bool(self.success), "source": self.source}

    @classmethod
    def from_json(cls, d):
        return cls(d["stage"], np.array(d["point"], dtype=np.float64),
                   np.array(d["rotation"], dtype=np.float64).reshape(3, 3), bool(d["success"]), d["source"])


@dataclass
class Episode:
    id: str
    task_kind: TaskKind
    category: Category
    shape_params: dict
    object_seed: int
    scene_seed: int
    policy: str = "heuristic"
    observations: dict = field(default_factory=dict)
    action_pre: Optional[G.Pose] = None
    action_goal: Optional[G.Pose] = None
    action_goal_anticipatory: Optional[G.Pose] = None
    push: Optional[dict] = None
    reorient: Optional[G.Pose] = None
    object_poses: dict = field(default_factory=dict)
    gripper_poses: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)
    success: bool = False
    interactions: list = field(default_factory=list)

    @property
    def object_key(self):
        return (self.category.value, int(self.object_seed))


class AffordanceMap:
    def __init__(self, cloud, scores, stage):
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if scores.shape[0] != len(cloud):
            raise ValueError("one score per point required")
        if np.any(~np.isfinite(scores)) or np.any(scores < 0) or np.any(scores > 1):
            raise ValueError("scores must lie in [0, 1]")
        self.cloud = cloud
        self.scores = scores
        self.stage = Stage(stage)

    def to_ply(self, path):
        write_ply(path, self.cloud.points, floats={"score": self.scores},
                  ints={"part": self.cloud.labels}, colors=score_colors(self.scores))


# ---------------------------------------------------------------- ground truth

def _records(episodes, stage):
    kind = "pre" if Stage(stage) == Stage.PRE else "goal"
    pts, succ, eid = [], [], []
    for rank, ep in enumerate(sorted(episodes, key=lambda e: e.id)):
        for r in ep.interactions:
            if r.stage == kind:
                pts.append(r.point)
                succ.append(r.success)
                eid.append(rank)
    return (np.array(pts, dtype=np.float64).reshape(-1, 3), np.array(succ, dtype=np.float64),
            np.array(eid, dtype=np.int64))


def knn_scores(query, points, success, episode_rank, k=DEFAULT_K):
    """Success fraction over the k nearest records; ties broken by episode order."""
    # records sorted by (episode rank, index) let a stable sort break distance ties
    pre = np.lexsort((np.arange(len(points)), episode_rank))
    points, success = points[pre], success[pre]
    out = np.empty(len(query))
    for start in range(0, len(query), 64):
        q = query[start:start + 64]
        d = np.sum((q[:, None, :] - points[None, :, :]) ** 2, axis=-1)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        out[start:start + 64] = success[nearest].mean(axis=1)
    return out


def critic_scores(query, points, success, steps=100, hidden=16, lr=0.01, seed=0):
    """Success probability from a small point-conditioned MLP fit to the records
    with a squared-error loss; the short schedule keeps it about as smooth as
    the k-NN average."""
    from . import autodiff as A
    from . import nn
    center, scale = points.mean(axis=0), points.std(axis=0).max() + 1e-9
    x = (points - center) / scale
    y = success.reshape(-1, 1)
    ps = nn.ParamSet()
    nn.init_mlp(ps, "critic", [3, hidden, hidden, 1], np.random.default_rng(seed))
    opt = nn.Adam(lr)
    for _ in range(steps):
        err = A.sub(nn.mlp(ps, "critic", x, 3, A.sigmoid), y)
        loss = A.mean(A.mul(err, err))
        ps.zero_grad()
        loss.backward()
        opt.step(ps)
    return nn.mlp(ps, "critic", (query - center) / scale, 3, A.sigmoid).data[:, 0]


def build_affordance_gt(episodes, cloud, object_pose, stage, k=DEFAULT_K, backend="knn"):
    """Per-point smoothed success probability over ``cloud``.

    Records from all ``episodes`` (same object) live in the object's canonical
    frame; ``object_pose`` maps that frame into the cloud's world frame.
    Non-object points (table, grippers) score 0. ``backend`` is "knn" or
    "critic".
    """
    pts, succ, rank = _records(episodes, stage)
    if len(pts) < k:
        raise InsufficientData(f"need {k} interaction records, have {len(pts)}")
    scores = np.zeros(len(cloud))
    mask = cloud.object_mask()
    if mask.any():
        local = object_pose.inverse().apply(cloud.points[mask])
        if backend == "knn":
            scores[mask] = knn_scores(local, pts, succ, rank, k)
        elif backend == "critic":
            scores[mask] = np.clip(critic_scores(local, pts, succ), 0.0, 1.0)
        else:
            raise ValueError(f"unknown backend {backend!r}")
    return AffordanceMap(cloud, scores, stage)


def anticipatory_transform(ep):
    """Pose mapping the execution-stage world frame back to the initial one."""
    if "init" not in ep.object_poses or "fin" not in ep.object_poses:
        raise IncompleteTrajectory(f"episode {ep.id} lacks initial/final object poses")
    return ep.object_poses["init"] @ ep.object_poses["fin"].inverse()


def map_to_anticipatory(gt, T_fin_to_init):
    """Carry each execution-stage score to its point in the initial frame."""
    moved = G.transform_points(T_fin_to_init, gt.cloud)
    return AffordanceMap(moved, gt.scores.copy(), Stage.ANTICIPATORY)


def anticipatory_orientation_gt(ep):
    if ep.action_goal is None or "init" not in ep.object_poses or "fin" not in ep.object_poses:
        raise IncompleteTrajectory(f"episode {ep.id} has no complete goal trajectory")
    return G.anticipatory_gripper_rotation(ep.object_poses["init"].R, ep.object_poses["fin"].R,
                                           ep.action_goal.R)


def anticipatory_goal_action(ep):
    """Goal contact and orientation expressed in the initial scene frame."""
    T = anticipatory_transform(ep)
    return G.Pose(anticipatory_orientation_gt(ep), T.apply(ep.action_goal.t))


# ---------------------------------------------------------------- storage

def encode_cloud(points):
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    return HEADER.pack(MAGIC, FORMAT_VERSION, pts.shape[0], 0) + pts.tobytes()


def decode_cloud(blob):
    if len(blob) < HEADER.size:
        raise CorruptManifest("cloud file shorter than its header")
    magic, version, n, _ = HEADER.unpack_from(blob)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise CorruptManifest("bad cloud header")
    if len(blob) != HEADER.size + 12 * n:
        raise CorruptManifest("cloud payload size does not match header")
    return np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(n, 3).astype(np.float64)


def _pose(p):
    return None if p is None else p.to_list()


def _unpose(v):
    return None if v is None else G.Pose.from_list(v)


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=1)
        fh.write("\n")


def save_episode(ep, directory):
    os.makedirs(directory, exist_ok=True)
    clouds = {}
    for name, cloud in sorted(ep.observations.items()):
        blob = encode_cloud(cloud.points)
        fname = f"{name}.bin"
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(blob)
        clouds[name] = {"file": fname, "sha256": hashlib.sha256(blob).hexdigest(),
                        "labels": [int(v) for v in cloud.labels]}
    manifest = {
        "format_version": FORMAT_VERSION,
        "id": ep.id,
        "task_kind": ep.task_kind.value,
        "category": ep.category.value,
        "shape_params": {k: float(v) for k, v in ep.shape_params.items()},
        "object_seed": int(ep.object_seed),
        "scene_seed": int(ep.scene_seed),
        "policy": ep.policy,
        "clouds": clouds,
        "action_pre": _pose(ep.action_pre),
        "action_goal": _pose(ep.action_goal),
        "action_goal_anticipatory": _pose(ep.action_goal_anticipatory),
        "push": None if ep.push is None else {"direction": [float(v) for v in ep.push["direction"]],
                                               "distance": float(ep.push["distance"])},
        "reorient": _pose(ep.reorient),
        "object_poses": {k: v.to_list() for k, v in ep.object_poses.items()},
        "gripper_poses": {k: v.to_list() for k, v in ep.gripper_poses.items()},
        "stages": list(ep.stages),
        "outcomes": list(ep.outcomes),
        "success": bool(ep.success),
        "interactions": [r.to_json() for r in ep.interactions],
    }
    write_json(os.path.join(directory, "manifest.json"), manifest)
    return directory


def load_episode(directory):
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            m = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptManifest(f"unreadable manifest in {directory}") from exc
    obs = {}
    for name, info in m["clouds"].items():
        with open(os.path.join(directory, info["file"]), "rb") as fh:
            blob = fh.read()
        if hashlib.sha256(blob).hexdigest() != info["sha256"]:
            raise CorruptManifest(f"checksum mismatch for {info['file']}")
        obs[name] = LabeledCloud(decode_cloud(blob), info["labels"])
    push = m["push"]
    if push is not None:
        push = {"direction": np.array(push["direction"]), "distance": push["distance"]}
    return Episode(
        id=m["id"], task_kind=TaskKind(m["task_kind"]), category=Category(m["category"]),
        shape_params=m["shape_params"], object_seed=m["object_seed"], scene_seed=m["scene_seed"],
        policy=m["policy"], observations=obs,
        action_pre=_unpose(m["action_pre"]), action_goal=_unpose(m["action_goal"]),
        action_goal_anticipatory=_unpose(m["action_goal_anticipatory"]), push=push,
        reorient=_unpose(m["reorient"]),
        object_poses={k: G.Pose.from_list(v) for k, v in m["object_poses"].items()},
        gripper_poses={k: G.Pose.from_list(v) for k, v in m["gripper_poses"].items()},
        stages=m["stages"], outcomes=m["outcomes"], success=m["success"],
        interactions=[InteractionRecord.from_json(r) for r in m["interactions"]],
    )


def load_corpus(root):
    """All episodes under ``root/episodes`` sorted by id."""
    base = os.path.join(root, "episodes")
    if not os.path.isdir(base):
        raise FileNotFoundError(f"no episodes directory under {root}")
    return [load_episode(os.path.join(base, d)) for d in sorted(os.listdir(base))]


# ---------------------------------------------------------------- splits

@dataclass
class SplitManifest:
    # category -> {"train": [object seeds], "unseen": [object seeds]}
    assignments: dict
    ratio: int = 3
    seed: int = 0

    def split_of(self, category, object_seed):
        entry = self.assignments[Category(category).value]
        if object_seed in entry["train"]:
            return "train"
        if object_seed in entry["unseen"]:
            return "unseen"
        raise BadSplit(f"object {object_seed} is not in the split")

    def objects(self, category, split):
        if split not in ("train", "unseen"):
            raise BadSplit(f"unknown split {split!r}")
        return list(self.assignments[Category(category).value][split])

    def to_json(self):
        return {"ratio": self.ratio, "seed": self.seed, "assignments": self.assignments}

    @classmethod
    def from_json(cls, d):
        return cls(d["assignments"], d["ratio"], d["seed"])


def make_split(categories, ratio=3, seed=0, objects_per_category=20):
    """Deterministic train/unseen assignment of object shape seeds at ratio:1."""
    if ratio < 1 or objects_per_category < 2:
        raise BadSplit("need ratio >= 1 and at least two objects per category")
    out = {}
    order = [c.value for c in Category]
    for cat in sorted(Category(c).value for c in categories):
        # per-category stream keyed on the enum position so subsets agree
        rng = np.random.default_rng([int(seed), order.index(cat)])
        seeds = sorted(int(s) for s in rng.choice(1_000_000, objects_per_category, replace=False))
        rng.shuffle(seeds)
        n_train = int(round(objects_per_category * ratio / (ratio + 1)))
        out[cat] = {"train": sorted(seeds[:n_train]), "unseen": sorted(seeds[n_train:])}
    return SplitManifest(out, ratio, int(seed))
