"""Affordance networks, pose predictor, reorient actor, losses, training and rollout."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as A
from . import geometry as G
from . import nn
from .cloud import LabeledCloud
from .config import ModelConfig, TrainConfig, config_hash, to_dict
from .dataset import (AffordanceMap, Stage, anticipatory_orientation_gt, anticipatory_transform,
                      build_affordance_gt, map_to_anticipatory)
from .errors import DegenerateInput, InsufficientData
from .heuristics import run_episode
from .scene import EDGE_X, TaskKind

log = logging.getLogger(__name__)

TASK_IDS = {TaskKind.ARTICULATED: 0, TaskKind.EDGE_PUSHING: 1, TaskKind.PLATE_LIFTING: 2}
IDENTITY_POSE9 = np.concatenate([nn.IDENTITY_ROT6D, np.zeros(3)])
EDGE_GRASP_OVERHANG = 0.025


def _bcast(v, n):
    """[B, D] -> [B, n, D]."""
    return A.broadcast_to(A.reshape(v, (v.shape[0], 1, v.shape[1])), (v.shape[0], n, v.shape[1]))


def _rows(feats, idx):
    return A.getitem(feats, (np.arange(feats.shape[0]), np.asarray(idx, dtype=np.int64)))


class GoalAffordanceNet:
    def __init__(self, ps, rng, cfg, fp_dim):
        self.ps = ps
        cond = fp_dim + cfg.task_dim
        nn.init_mlp(ps, "goal.aff", [cond, cfg.head_hidden, cfg.head_hidden // 2, 1], rng)
        self.ori = nn.CvaeHead(ps, rng, "goal.ori", 6, cond, cfg.latent_dim, cfg.cvae_hidden, nn.IDENTITY_ROT6D)

    def scores(self, fp, fl):
        x = A.concat([fp, _bcast(fl, fp.shape[1])], axis=-1)
        return A.reshape(nn.mlp(self.ps, "goal.aff", x, 3, A.sigmoid), fp.shape[:2])

    def condition(self, fp_point, fl):
        return A.concat([fp_point, fl], axis=-1)


class PreAffordanceNet:
    def __init__(self, ps, rng, cfg, fp_dim):
        self.ps = ps
        goal = fp_dim + cfg.rot_feat_dim
        nn.init_mlp(ps, "pre.aff", [fp_dim + cfg.task_dim + goal, cfg.head_hidden, cfg.head_hidden // 2, 1], rng)
        self.ori = nn.CvaeHead(ps, rng, "pre.ori", 6, fp_dim + cfg.task_dim + goal, cfg.latent_dim,
                               cfg.cvae_hidden, nn.IDENTITY_ROT6D)

    def scores(self, fp, fl, goal_feat):
        n = fp.shape[1]
        x = A.concat([fp, _bcast(fl, n), _bcast(goal_feat, n)], axis=-1)
        return A.reshape(nn.mlp(self.ps, "pre.aff", x, 3, A.sigmoid), fp.shape[:2])

    def condition(self, fp_point, fl, goal_feat):
        return A.concat([fp_point, fl, goal_feat], axis=-1)


class PrepModel:
    """All heads on one shared encoder, task table and rotation-feature MLP."""

    def __init__(self, cfg=ModelConfig(), seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params = ps = nn.ParamSet()
        self.encoder = nn.PointSetEncoder(ps, rng, cfg.point_hidden, cfg.point_out)
        self.task = nn.TaskEmbedding(ps, rng, len(TASK_IDS), cfg.task_dim)
        fp_dim = 2 * cfg.point_out
        nn.init_mlp(ps, "rotfeat", [6, cfg.rot_feat_dim, cfg.rot_feat_dim], rng)
        self.goal = GoalAffordanceNet(ps, rng, cfg, fp_dim)
        self.pre = PreAffordanceNet(ps, rng, cfg, fp_dim)
        pose_cond = 2 * (fp_dim + cfg.rot_feat_dim) + cfg.point_out
        self.pose = nn.CvaeHead(ps, rng, "pose", 9, pose_cond, cfg.latent_dim, cfg.cvae_hidden, IDENTITY_POSE9)
        self.actor = nn.CvaeHead(ps, rng, "actor", 9, 2 * cfg.point_out, cfg.latent_dim, cfg.cvae_hidden,
                                 IDENTITY_POSE9)

    def rot_feature(self, rot6d):
        return A.relu(nn.mlp(self.params, "rotfeat", A.as_tensor(rot6d), 2))

    def goal_feature(self, fp_goal, rot6d_goal):
        return A.concat([fp_goal, self.rot_feature(rot6d_goal)], axis=-1)


# ---------------------------------------------------------------- losses

def affordance_loss(s_pred, s_gt):
    return A.mean(A.tabs(A.sub(s_pred, np.asarray(s_gt, dtype=np.float64))))


def balanced_affordance_loss(s_pred, s_gt, threshold=0.5):
    """Absolute error averaged separately over high-score and low-score points,
    then over the two groups; plain MAE when one group is empty."""
    s_gt = np.asarray(s_gt, dtype=np.float64)
    pos = s_gt >= threshold
    n_pos, n = int(pos.sum()), pos.size
    if n_pos == 0 or n_pos == n:
        return affordance_loss(s_pred, s_gt)
    w = np.where(pos, 0.5 * n / n_pos, 0.5 * n / (n - n_pos))
    return A.mean(A.mul(A.tabs(A.sub(s_pred, s_gt)), w))


def orientation_loss(d, d_star):
    """Geodesic angle; ``d`` may be a Tensor of matrices or raw rot6d [.., 6]."""
    d = A.as_tensor(d)
    if d.shape[-1] == 6:
        d = nn.rot6d_to_matrix(d)
    return nn.geodesic_loss(d, d_star)


def kl_loss(mu, logvar):
    return nn.kl_divergence(mu, logvar)


def pose_loss(M, M_star, mu, logvar, kl_weight=1.0):
    """Rotation geodesic + mean absolute translation error + weighted KL.

    ``M`` is [.., 9] (rot6d then translation); ``M_star`` is (R*, t*).
    """
    M = A.as_tensor(M)
    R_star, t_star = M_star
    rot = orientation_loss(M[..., :6], R_star)
    trans = A.mean(A.tabs(A.sub(M[..., 6:], np.asarray(t_star, dtype=np.float64))))
    return A.add(A.add(rot, trans), A.mul(kl_loss(mu, logvar), kl_weight))


# ---------------------------------------------------------------- training samples

@dataclass
class Sample:
    episode_id: str
    task_id: int
    init_pts: np.ndarray
    gt_ant: np.ndarray
    gt_pre: np.ndarray
    exec_pts: np.ndarray = None
    gt_exec: np.ndarray = None
    own_goal: bool = False
    goal_conds: list = field(default_factory=list)       # [(index, R)] goal contacts on the initial cloud
    goal_exec_oris: list = field(default_factory=list)   # [(index, R)] on the execution cloud
    pre_oris: list = field(default_factory=list)         # [(index, R)] on the initial cloud
    grasped_pts: np.ndarray = None
    obj_motion: tuple = None        # (R, t) of T^obj
    grip_motion: tuple = None       # (R, t) assistant relative motion

    def goal_condition(self, rng):
        if not self.goal_conds:
            return None
        return self.goal_conds[0] if self.own_goal else self.goal_conds[rng.integers(len(self.goal_conds))]


def _nearest(points, p, mask=None):
    d = np.sum((points - p) ** 2, axis=1)
    if mask is not None and mask.any():
        d = np.where(mask, d, np.inf)
    return int(np.argmin(d))


def transfer_scores(src_points, src_scores, dst_cloud):
    """Give every object point of ``dst_cloud`` the score of its nearest source point."""
    out = np.zeros(len(dst_cloud))
    mask = dst_cloud.object_mask()
    if mask.any():
        d = np.sum((dst_cloud.points[mask][:, None] - src_points[None]) ** 2, axis=-1)
        out[mask] = src_scores[np.argmin(d, axis=1)]
    return out


def _success_records(group, stage, limit, rng):
    recs = [r for ep in sorted(group, key=lambda e: e.id) for r in ep.interactions if r.stage == stage and r.success]
    if len(recs) > limit:
        recs = [recs[i] for i in sorted(rng.choice(len(recs), limit, replace=False))]
    return recs


def prepare_samples(episodes, k=16, max_conditions=64, seed=0):
    """Turn episodes into training samples.

    Ground-truth maps aggregate interaction records over every episode of
    the same object. Episodes that stopped before the execution stage still
    supervise the initial-cloud heads; their goal conditioning comes from
    successful goal records of the same object mapped into the initial frame.
    """
    rng = np.random.default_rng(seed)
    by_object = defaultdict(list)
    for ep in episodes:
        by_object[ep.object_key].append(ep)
    goal_pool = {key: _success_records(g, "goal", max_conditions, rng) for key, g in sorted(by_object.items())}
    samples = []
    for ep in sorted(episodes, key=lambda e: e.id):
        group = by_object[ep.object_key]
        init = ep.observations["initial"]
        T_init = ep.object_poses["init"]
        im = init.object_mask()
        has_exec = "execution" in ep.observations and "fin" in ep.object_poses
        try:
            pre = build_affordance_gt(group, init, T_init, Stage.PRE, k)
            if has_exec:
                exe, T_fin = ep.observations["execution"], ep.object_poses["fin"]
                gt = build_affordance_gt(group, exe, T_fin, Stage.GOAL, k)
                ant = map_to_anticipatory(gt, anticipatory_transform(ep))
                gt_ant = transfer_scores(ant.cloud.points, ant.scores, init)
            else:
                gt_ant = build_affordance_gt(group, init, T_init, Stage.GOAL, k).scores
        except InsufficientData:
            continue
        s = Sample(ep.id, TASK_IDS[ep.task_kind], init.points, gt_ant, pre.scores)
        if has_exec:
            s.exec_pts, s.gt_exec = exe.points, gt.scores
        if ep.action_goal is not None and ep.success:
            p_ant = anticipatory_transform(ep).apply(ep.action_goal.t)
            s.goal_conds.append((_nearest(init.points, p_ant, im), anticipatory_orientation_gt(ep)))
            s.own_goal = True
        for r in goal_pool[ep.object_key]:
            s.goal_conds.append((_nearest(init.points, T_init.apply(r.point), im), T_init.R @ r.rotation))
        em = exe.object_mask() if has_exec else None
        for r in ep.interactions:
            if not r.success:
                continue
            if r.stage == "goal" and has_exec:
                s.goal_exec_oris.append((_nearest(exe.points, T_fin.apply(r.point), em), T_fin.R @ r.rotation))
            elif r.stage == "pre":
                s.pre_oris.append((_nearest(init.points, T_init.apply(r.point), im), T_init.R @ r.rotation))
        if ep.success and ep.task_kind == TaskKind.ARTICULATED and "grasped" in ep.observations:
            s.grasped_pts = ep.observations["grasped"].points
            s.obj_motion = (ep.reorient.R, ep.reorient.t)
            ga, gf = ep.gripper_poses["assistant_grasped"], ep.gripper_poses["assistant_fin"]
            s.grip_motion = (gf.R @ ga.R.T, gf.t - ga.t)
        samples.append(s)
    return samples


# ---------------------------------------------------------------- loss assembly

def _ori_term(head, fp, fl, rows, latent, rng, extra=None):
    """cVAE orientation loss over rows of (batch index, (point index, R*))."""
    b_idx = np.array([b for b, _ in rows])
    p_idx = np.array([r[0] for _, r in rows])
    R_star = np.stack([r[1] for _, r in rows])
    parts = [A.getitem(fp, (b_idx, p_idx)), A.getitem(fl, b_idx)]
    if extra is not None:
        parts.append(A.getitem(extra, b_idx))
    target = np.stack([G.rot6d_encode(R) for R in R_star])
    out, mu, lv = head.forward(target, A.concat(parts, axis=-1), rng.standard_normal((len(rows), latent)))
    return orientation_loss(out, R_star), kl_loss(mu, lv)


def _pick(items, rng):
    return items[rng.integers(len(items))]


def batch_losses(model, batch, rng, cfg=TrainConfig(), heads=("goal", "pre", "pose")):
    """Per-term losses for a list of samples; each value is a scalar Tensor."""
    tasks = np.array([s.task_id for s in batch])
    fl = model.task(tasks)
    latent = model.cfg.latent_dim
    terms = {}
    fp_i, fo_i = model.encoder.encode(np.stack([s.init_pts for s in batch]))
    conds = [s.goal_condition(rng) for s in batch]

    if "goal" in heads:
        terms["aff_ant"] = balanced_affordance_loss(model.goal.scores(fp_i, fl), np.stack([s.gt_ant for s in batch]))
        ex = [b for b, s in enumerate(batch) if s.exec_pts is not None]
        if ex:
            fp_e, _ = model.encoder.encode(np.stack([batch[b].exec_pts for b in ex]))
            fl_e = A.getitem(fl, np.array(ex))
            terms["aff_goal"] = balanced_affordance_loss(model.goal.scores(fp_e, fl_e), np.stack([batch[b].gt_exec for b in ex]))
            rows = [(j, _pick(batch[b].goal_exec_oris, rng)) for j, b in enumerate(ex) if batch[b].goal_exec_oris]
            if rows:
                terms["ori_goal"], terms["kl_goal"] = _ori_term(model.goal.ori, fp_e, fl_e, rows, latent, rng)
        rows = [(b, c) for b, c in enumerate(conds) if c is not None]
        if rows:
            terms["ori_ant"], terms["kl_ant"] = _ori_term(model.goal.ori, fp_i, fl, rows, latent, rng)

    rows = [b for b, c in enumerate(conds) if c is not None]
    if ("pre" in heads or "pose" in heads) and rows:
        b_idx = np.array(rows)
        g_idx = np.array([conds[b][0] for b in rows])
        g_rot = np.stack([G.rot6d_encode(conds[b][1]) for b in rows])
        gfeat = model.goal_feature(A.getitem(fp_i, (b_idx, g_idx)), g_rot)
        if not cfg.use_anticipatory:
            gfeat = A.mul(gfeat, 0.0)
    if "pre" in heads and rows:
        fp_sel, fl_sel = A.getitem(fp_i, b_idx), A.getitem(fl, b_idx)
        s_pre = model.pre.scores(fp_sel, fl_sel, gfeat)
        terms["aff_pre"] = balanced_affordance_loss(s_pre, np.stack([batch[b].gt_pre for b in rows]))
        ori_rows = [(j, _pick(batch[b].pre_oris, rng)) for j, b in enumerate(rows) if batch[b].pre_oris]
        if ori_rows:
            terms["ori_pre"], terms["kl_pre"] = _ori_term(model.pre.ori, fp_sel, fl_sel, ori_rows, latent, rng,
                                                          extra=gfeat)
    if "pose" in heads and rows:
        pos = [j for j, b in enumerate(rows) if batch[b].obj_motion is not None and batch[b].own_goal
               and batch[b].pre_oris]
        if pos:
            sel = [rows[j] for j in pos]
            # the executed pre-grasp is the first successful pre record
            p_idx = np.array([batch[b].pre_oris[0][0] for b in sel])
            p_rot = np.stack([G.rot6d_encode(batch[b].pre_oris[0][1]) for b in sel])
            pfeat = model.goal_feature(A.getitem(fp_i, (np.array(sel), p_idx)), p_rot)
            cond = A.concat([A.getitem(gfeat, np.array(pos)), pfeat, A.getitem(fo_i, np.array(sel))], axis=-1)
            terms["pose"] = _motion_term(model.pose, cond, [batch[b].obj_motion for b in sel], latent, rng, cfg)
            # the actor sees O' built from the recorded object motion
            moved = np.stack([batch[b].init_pts @ batch[b].obj_motion[0].T + batch[b].obj_motion[1] for b in sel])
            _, fo_moved = model.encoder.encode(moved)
            _, fo_grasp = model.encoder.encode(np.stack([batch[b].grasped_pts for b in sel]))
            terms["actor"] = _motion_term(model.actor, A.concat([fo_moved, fo_grasp], axis=-1),
                                          [batch[b].grip_motion for b in sel], latent, rng, cfg)
    return terms


def _motion_term(head, cond, motions, latent, rng, cfg):
    R_star = np.stack([m[0] for m in motions])
    t_star = np.stack([m[1] for m in motions])
    target = np.concatenate([np.stack([G.rot6d_encode(R) for R in R_star]), t_star], axis=1)
    out, mu, lv = head.forward(target, cond, rng.standard_normal((len(motions), latent)))
    return pose_loss(out, (R_star, t_star), mu, lv, cfg.w_kl / cfg.w_pose)


def total_loss(terms, cfg=TrainConfig()):
    total = A.Tensor(0.0)
    for name, v in terms.items():
        if name.startswith("aff"):
            w = cfg.w_aff
        elif name.startswith("kl"):
            w = cfg.w_kl
        elif name.startswith("ori"):
            w = cfg.w_ori
        else:
            w = cfg.w_pose
        total = A.add(total, A.mul(v, w))
    return total


@dataclass
class TrainResult:
    model: PrepModel
    history: list
    config_hash: str


def train(samples, cfg=TrainConfig(), model_cfg=ModelConfig(), heads=("goal", "pre", "pose"), model=None):
    """Adam on the weighted loss sum; returns the model and per-step totals."""
    if not samples:
        raise InsufficientData("no training samples")
    model = model or PrepModel(model_cfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = nn.Adam(cfg.lr)
    history = []
    for step in range(cfg.steps):
        idx = rng.choice(len(samples), size=min(cfg.batch_size, len(samples)), replace=False)
        batch = [samples[i] for i in sorted(idx)]
        terms = batch_losses(model, batch, rng, cfg, heads)
        for name, v in terms.items():
            nn.check_finite(v.data, batch_id=step, what=f"{name} loss")
        loss = total_loss(terms, cfg)
        nn.check_finite(loss.data, batch_id=step)
        model.params.zero_grad()
        loss.backward()
        opt.step(model.params)
        history.append(float(loss.data))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f %s", step, history[-1],
                     " ".join(f"{k}={float(v.data):.3f}" for k, v in sorted(terms.items())))
    return TrainResult(model, history, config_hash({"train": to_dict(cfg), "model": to_dict(model_cfg)}))


def save_model(directory, model, train_cfg, extra=None):
    cfg = {"train": to_dict(train_cfg), "model": to_dict(model.cfg)}
    return nn.save_checkpoint(directory, model.params, cfg, config_hash(cfg), extra)


def load_model(directory):
    from .config import from_dict
    arrays, manifest = nn.load_checkpoint(directory)
    mcfg = from_dict(ModelConfig, manifest["config"]["model"])
    tcfg = from_dict(TrainConfig, manifest["config"]["train"])
    model = PrepModel(mcfg, tcfg.seed)
    model.params.load_arrays(arrays)
    return model, tcfg, manifest


# ---------------------------------------------------------------- inference

def _decode_rotation(v):
    try:
        return G.rot6d_decode(v)
    except DegenerateInput:
        return np.eye(3)


def _select(points, scores, mask, rng=None, top_fraction=None):
    """Argmax over candidate points after a canonical sort (lowest index wins ties),
    or a uniform draw from the top fraction."""
    cand = np.nonzero(mask)[0] if mask.any() else np.arange(len(points))
    order = cand[np.lexsort((points[cand, 2], points[cand, 1], points[cand, 0]))]
    if top_fraction is None or rng is None:
        return int(order[np.argmax(scores[order])])
    k = max(1, int(np.ceil(top_fraction * len(order))))
    best = order[np.argsort(-scores[order], kind="stable")[:k]]
    return int(best[rng.integers(len(best))])


def _latent(model, rng, n=1):
    return np.zeros((n, model.cfg.latent_dim)) if rng is None else rng.standard_normal((n, model.cfg.latent_dim))


def _encode(model, cloud):
    fp, fo = model.encoder.encode(cloud.points[None])
    return fp, fo


def predict_goal_affordance(model, cloud, task, rng=None, mode="eval"):
    """Goal scores, chosen contact p_goal and decoded orientation d_goal."""
    fp, _ = _encode(model, cloud)
    fl = model.task([TASK_IDS[TaskKind(task)]])
    scores = np.clip(model.goal.scores(fp, fl).data[0], 0.0, 1.0)
    idx = _select(cloud.points, scores, cloud.object_mask(), rng, 0.05 if mode == "sample" else None)
    cond = model.goal.condition(fp[:, idx], fl)
    d = _decode_rotation(model.goal.ori.decode(_latent(model, rng), cond).data[0])
    return AffordanceMap(cloud, scores, Stage.GOAL), cloud.points[idx].copy(), d


def _goal_condition(model, fp, cloud, p_goal, d_goal, use_goal=True):
    g_idx = _nearest(cloud.points, p_goal, cloud.object_mask())
    gfeat = model.goal_feature(fp[:, g_idx], G.rot6d_encode(d_goal)[None])
    return gfeat if use_goal else A.mul(gfeat, 0.0)


def predict_pre_affordance(model, cloud, task, p_goal, d_goal, rng=None, use_goal=True):
    fp, _ = _encode(model, cloud)
    fl = model.task([TASK_IDS[TaskKind(task)]])
    gfeat = _goal_condition(model, fp, cloud, p_goal, d_goal, use_goal)
    scores = np.clip(model.pre.scores(fp, fl, gfeat).data[0], 0.0, 1.0)
    idx = _select(cloud.points, scores, cloud.object_mask())
    cond = model.pre.condition(fp[:, idx], fl, gfeat)
    d = _decode_rotation(model.pre.ori.decode(_latent(model, rng), cond).data[0])
    return AffordanceMap(cloud, scores, Stage.PRE), G.Pose(d, cloud.points[idx].copy())


def _pose9(v):
    return G.Pose(_decode_rotation(v[:6]), v[6:9])


def predict_object_pose(model, cloud, p_goal, d_goal, a_pre, rng=None, use_goal=True):
    fp, fo = _encode(model, cloud)
    gfeat = _goal_condition(model, fp, cloud, p_goal, d_goal, use_goal)
    pfeat = _goal_condition(model, fp, cloud, a_pre.t, a_pre.R)
    cond = A.concat([gfeat, pfeat, fo], axis=-1)
    return _pose9(model.pose.decode(_latent(model, rng), cond).data[0])


def predict_reorient_motion(model, moved_cloud, grasped_cloud, rng=None):
    """Relative assistant motion (R_m, t_m): new pose = (R_m R, t + t_m)."""
    _, fo_m = _encode(model, moved_cloud)
    _, fo_g = _encode(model, grasped_cloud)
    return _pose9(model.actor.decode(_latent(model, rng), A.concat([fo_m, fo_g], axis=-1)).data[0])


def apply_motion(motion, gripper_pose):
    return G.Pose(motion.R @ gripper_pose.R, gripper_pose.t + motion.t)


class LearnedPolicy:
    """Runs the four stages with one shared parameter set."""
    name = "learned"

    def __init__(self, model, use_anticipatory=True, use_pose_predictor=True, mode="eval"):
        self.model = model
        self.use_anticipatory = use_anticipatory
        self.use_pose_predictor = use_pose_predictor
        self.mode = mode
        self.trace = []
        self._ctx = {}

    def _note(self, stage):
        self.trace.append((stage, id(self.model.params), self.model.params.checksum()))

    def anticipate(self, scene, cloud, rng):
        self._note("anticipate")
        _, p, d = predict_goal_affordance(self.model, cloud, scene.task_kind, rng, self.mode)
        self._ctx = {"cloud0": cloud, "goal": G.Pose(d, p)}
        return G.Pose(d, p)

    def pre_action(self, scene, cloud, rng, anticipated=None):
        self._note("pre")
        goal = anticipated or self._ctx["goal"]
        _, a_pre = predict_pre_affordance(self.model, cloud, scene.task_kind, goal.t, goal.R, rng,
                                          self.use_anticipatory)
        self._ctx["pre"] = a_pre
        if scene.task_kind == TaskKind.EDGE_PUSHING:
            obj = cloud.points[cloud.object_mask()]
            ref = goal.t[0] if self.use_anticipatory else obj[:, 0].max()
            dist = float(np.clip(EDGE_X + EDGE_GRASP_OVERHANG - ref, 0.005, 0.5))
            return a_pre, {"direction": np.array([1.0, 0.0, 0.0]), "distance": dist}
        return a_pre, None

    def reorient(self, scene, cloud, rng):
        self._note("reorient")
        cloud0, goal, a_pre = self._ctx["cloud0"], self._ctx["goal"], self._ctx["pre"]
        if self.use_pose_predictor:
            T = predict_object_pose(self.model, cloud0, goal.t, goal.R, a_pre, rng, self.use_anticipatory)
            moved = G.transform_points(T, cloud0)
        else:
            moved = cloud0
        motion = predict_reorient_motion(self.model, moved, cloud, rng)
        return apply_motion(motion, scene.grippers["assistant"].pose)

    def goal_action(self, scene, cloud, rng):
        self._note("goal")
        _, p, d = predict_goal_affordance(self.model, cloud, scene.task_kind, rng, self.mode)
        return G.Pose(d, p)


def rollout(task_kind, obj, scene_seed, model, seed=None, use_anticipatory=True, use_pose_predictor=True):
    """Episode produced by the learned stages; failures end the episode."""
    policy = LearnedPolicy(model, use_anticipatory, use_pose_predictor)
    ep = run_episode(task_kind, obj, scene_seed, policy, seed=seed)
    ep.policy = "learned" if use_anticipatory and use_pose_predictor else "learned-ablated"
    return ep, policy
