"""Dataclass configs. Every threshold the simulator or learner uses lives here."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 0.04
    finger_depth: float = 0.03
    finger_height: float = 0.02
    finger_width: float = 0.006
    palm_depth: float = 0.04
    palm_height: float = 0.04


@dataclass(frozen=True)
class SimConfig:
    gripper: GripperSpec = field(default_factory=GripperSpec)
    approach_standoff: float = 0.15
    approach_step: float = 0.005
    min_grasp_points: int = 5
    table_tolerance: float = 0.001
    table_thickness: float = 0.05
    gripper_clearance: float = 0.005
    push_contact_tol: float = 0.004
    support_threshold: float = 0.5
    joint_contact_radius: float = 0.008
    joint_angle_gate: float = float(np.deg2rad(30.0))
    joint_success_fraction: float = 0.2
    lift_success_height: float = 0.10
    press_angle: float = float(np.deg2rad(12.0))
    press_rim_fraction: float = 0.6
    press_cone: float = float(np.deg2rad(30.0))
    press_contact_radius: float = 0.008
    actuation_travel: float = 0.04
    carry_steps: int = 10


@dataclass(frozen=True)
class HeuristicConfig:
    deviation_max: float = float(np.deg2rad(10.0))
    align_probability: float = 0.7
    push_overshoot_max: float = 0.06
    edge_grasp_margin: float = 0.005
    assistant_lift: float = 0.10
    final_lift: float = 0.15
    reorient_center: tuple = (0.15, 0.0, 0.25)
    reorient_jitter: float = 0.02
    bowl_tilt_max: float = float(np.deg2rad(45.0))
    probes_per_stage: int = 8

    def __post_init__(self):
        if not 0.0 <= self.deviation_max <= np.pi / 4:
            raise ValueError("deviation_max must lie in [0, pi/4]")


@dataclass(frozen=True)
class ModelConfig:
    point_hidden: int = 64
    point_out: int = 128
    task_dim: int = 32
    head_hidden: int = 128
    rot_feat_dim: int = 32
    latent_dim: int = 8
    cvae_hidden: int = 128


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch_size: int = 8
    lr: float = 1e-3
    w_aff: float = 1.0
    w_ori: float = 1.0
    w_kl: float = 0.01
    w_pose: float = 1.0
    seed: int = 0
    use_anticipatory: bool = True
    use_pose_predictor: bool = True
    log_every: int = 100


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def config_hash(obj):
    """SHA-256 of the canonical JSON encoding of a (nested) dataclass or dict."""
    data = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else obj
    blob = json.dumps(data, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()


def from_dict(cls, data):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if dataclasses.is_dataclass(f.default_factory() if f.default_factory is not dataclasses.MISSING else None):
            value = from_dict(type(f.default_factory()), value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment needs; serialized into every output manifest."""
    task_kinds: tuple = ("PlateLifting",)
    categories: tuple = ("Plate",)
    n_success: int = 200
    n_fail: int = 200
    attempt_factor: int = 50
    probes: int = 8
    gt_k: int = 16
    split_seed: int = 0
    split_ratio: int = 3
    objects_per_category: int = 20
    seed: int = 0
    out: str = "runs/default"
    sim: SimConfig = field(default_factory=SimConfig)
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
