"""Command-line orchestration: data generation, training, evaluation, affordance export."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import pipeline as P
from .config import RunConfig, TrainConfig, config_hash, from_dict, to_dict
from .dataset import (SplitManifest, Stage, load_corpus, make_split, save_episode, write_json)
from .errors import BadSplit, MissingCheckpoint, PrepManipError, QuotaUnreachable
from .heuristics import run_episode, run_heuristic_episode, run_random_episode, HeuristicPolicy
from .scene import TASK_OF, Category, TaskKind, generate_object, render_partial_cloud, spawn_scene

log = logging.getLogger("prepmanip")

PURPOSES = {"gen": 0, "eval": 1, "export": 2}


def derive_seed(root, purpose, *keys):
    """Counter-based child seed so every policy sees the same scene seeds."""
    ss = np.random.SeedSequence(int(root), spawn_key=(PURPOSES[purpose],) + tuple(int(k) for k in keys))
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def category_index(cat):
    return [c for c in Category].index(Category(cat))


def run_manifest(cfg):
    """Serializable run config; the output root is left out so reruns elsewhere match."""
    d = to_dict(cfg)
    d.pop("out", None)
    return d


def split_for(cfg):
    return make_split([c for c in Category], cfg.split_ratio, cfg.split_seed, cfg.objects_per_category)


# ---------------------------------------------------------------- gen-data

def gen_data(cfg, category, out=None, progress=False):
    """Heuristic episodes on training objects until the success/failure quotas fill.

    Attempts run without probes; kept episodes are replayed with probes
    (same seeds, so the executed part is identical).
    """
    out = out or cfg.out
    cat = Category(category)
    task = TASK_OF[cat]
    split = split_for(cfg)
    objects = [generate_object(cat, seed=s) for s in split.objects(cat, "train")]
    need = {True: cfg.n_success, False: cfg.n_fail}
    kept = {True: [], False: []}
    cap = cfg.attempt_factor * max(1, cfg.n_success + cfg.n_fail)
    attempts = 0
    t0 = time.time()
    while need[True] > len(kept[True]) or need[False] > len(kept[False]):
        if attempts >= cap:
            raise QuotaUnreachable(
                f"{cat.value}: {len(kept[True])}/{cfg.n_success} successes and "
                f"{len(kept[False])}/{cfg.n_fail} failures after {attempts} attempts")
        obj = objects[attempts % len(objects)]
        seed = derive_seed(cfg.seed, "gen", category_index(cat), attempts)
        attempts += 1
        ep = run_heuristic_episode(task, obj, seed, cfg.heuristic, cfg.sim)
        if len(kept[ep.success]) >= need[ep.success]:
            continue
        if cfg.probes:
            ep = run_heuristic_episode(task, obj, seed, cfg.heuristic, cfg.sim, probes=cfg.probes)
        save_episode(ep, os.path.join(out, "episodes", ep.id))
        kept[ep.success].append(ep.id)
        if progress and (len(kept[True]) + len(kept[False])) % 50 == 0:
            log.info("%s: %d ok / %d fail after %d attempts (%.0fs)", cat.value, len(kept[True]),
                     len(kept[False]), attempts, time.time() - t0)
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "split.json"), split.to_json())
    path = os.path.join(out, "manifest.json")
    manifest = {"run_config": run_manifest(cfg), "config_hash": config_hash(run_manifest(cfg)), "categories": {}}
    if os.path.isfile(path):
        with open(path) as fh:
            manifest["categories"] = json.load(fh).get("categories", {})
    manifest["categories"][cat.value] = {
        "task_kind": task.value, "attempts": attempts,
        "n_success": len(kept[True]), "n_fail": len(kept[False]),
        "success": sorted(kept[True]), "fail": sorted(kept[False])}
    write_json(path, manifest)
    return manifest


# ---------------------------------------------------------------- train

def load_corpora(dirs):
    episodes = []
    for d in dirs:
        episodes += load_corpus(d)
    return episodes


def train_command(cfg, data_dirs, out):
    episodes = load_corpora(data_dirs)
    samples = P.prepare_samples(episodes, cfg.gt_k, seed=cfg.train.seed)
    log.info("%d episodes, %d training samples", len(episodes), len(samples))
    t0 = time.time()
    result = P.train(samples, cfg.train, cfg.model)
    cats = sorted({ep.category.value for ep in episodes})
    extra = {"run_config": run_manifest(cfg), "categories": cats, "n_samples": len(samples),
             "final_loss": result.history[-1], "seconds": round(time.time() - t0, 1)}
    P.save_model(out, result.model, cfg.train, extra)
    return result


def load_trained(checkpoint):
    model, tcfg, manifest = P.load_model(checkpoint)
    cfg = from_dict(RunConfig, manifest["extra"].get("run_config", {}))
    return model, cfg, manifest


# ---------------------------------------------------------------- eval

def evaluate(model, cfg, categories, split, episodes, seed, use_anticipatory=True, use_pose_predictor=True,
             baselines=True):
    """Per-category success rates on seeded scenes; all policies share the seeds."""
    if split not in ("seen", "unseen"):
        raise BadSplit(f"unknown split {split!r}")
    manifest = split_for(cfg)
    rows = []
    for cat in categories:
        cat = Category(cat)
        task = TASK_OF[cat]
        seeds = manifest.objects(cat, "train" if split == "seen" else "unseen")
        objects = [generate_object(cat, seed=s) for s in seeds]
        res = {"learned": [], "random": [], "heuristic": []}
        for i in range(episodes):
            obj = objects[i % len(objects)]
            sseed = derive_seed(seed, "eval", category_index(cat), i)
            if model is not None:
                ep, _ = P.rollout(task, obj, sseed, model, seed=sseed, use_anticipatory=use_anticipatory,
                                  use_pose_predictor=use_pose_predictor)
                res["learned"].append(bool(ep.success))
            if baselines:
                res["random"].append(bool(run_random_episode(task, obj, sseed, cfg.sim).success))
                res["heuristic"].append(bool(run_heuristic_episode(task, obj, sseed, cfg.heuristic, cfg.sim).success))
        row = {"category": cat.value, "task_kind": task.value, "split": split, "trials": episodes}
        for k, v in res.items():
            if v:
                row[k] = float(np.mean(v))
                row[k + "_outcomes"] = v
        rows.append(row)
    return rows


def format_table(results):
    """Plain-text table; with both splits present each cell reads seen / unseen."""
    cats = sorted({r["category"] for r in results})
    cols = [c for c in ("learned", "random", "heuristic") if any(c in r for r in results)]
    lines = [f"{'category':<10} {'trials':>6} " + " ".join(f"{c:>15}" for c in cols)]
    for cat in cats:
        by = {r["split"]: r for r in results if r["category"] == cat}
        cells = []
        for c in cols:
            vals = [f"{by[s][c]:.2f}" if c in by[s] else "-" for s in ("seen", "unseen") if s in by]
            cells.append(f"{' / '.join(vals):>15}")
        trials = next(iter(by.values()))["trials"]
        lines.append(f"{cat:<10} {trials:>6} " + " ".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------- export-aff

def export_affordance(model, cfg, category, scene_seed, stage, out):
    """Score a freshly spawned scene with the requested head and write a PLY."""
    cat = Category(category)
    task = TASK_OF[cat]
    obj = generate_object(cat, seed=split_for(cfg).objects(cat, "train")[0])
    rng = np.random.default_rng(scene_seed)
    stage = Stage(stage)
    scene = spawn_scene(task, obj, scene_seed)
    cloud = render_partial_cloud(scene)
    if stage == Stage.GOAL:
        # goal maps live on the execution-stage cloud
        ep, _ = P.rollout(task, obj, scene_seed, model, seed=scene_seed)
        if "execution" not in ep.observations:
            ep = run_episode(task, obj, scene_seed, HeuristicPolicy(cfg.heuristic), sim=cfg.sim)
        if "execution" not in ep.observations:
            raise PrepManipError(f"scene {scene_seed} never reaches the execution stage")
        amap, _, _ = P.predict_goal_affordance(model, ep.observations["execution"], task, rng)
    elif stage == Stage.ANTICIPATORY:
        amap, _, _ = P.predict_goal_affordance(model, cloud, task, rng)
        amap = P.AffordanceMap(amap.cloud, amap.scores, Stage.ANTICIPATORY)
    else:
        _, p, d = P.predict_goal_affordance(model, cloud, task, rng)
        amap, _ = P.predict_pre_affordance(model, cloud, task, p, d, rng)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    amap.to_ply(out)
    return amap


# ---------------------------------------------------------------- CLI

def load_config(path, overrides):
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
    cfg = from_dict(RunConfig, data)
    return dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def resolve_seed(seed):
    env = os.environ.get("BIPREMAN_SEED")
    return int(env) if env not in (None, "") else seed


def build_parser():
    ap = argparse.ArgumentParser(prog="prepmanip", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate heuristic episodes")
    g.add_argument("--task", choices=[t.value for t in TaskKind])
    g.add_argument("--category", action="append", choices=[c.value for c in Category])
    g.add_argument("--n-success", type=int)
    g.add_argument("--n-fail", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config")

    t = sub.add_parser("train", help="train all heads on one or more corpora")
    t.add_argument("--data", action="append", required=True)
    t.add_argument("--config")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-anticipatory", action="store_true")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="success rates of the trained model and the baselines")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=["seen", "unseen", "both"], default="both")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--category", action="append", choices=[c.value for c in Category])
    e.add_argument("--no-anticipatory", action="store_true")
    e.add_argument("--no-pose-predictor", action="store_true")
    e.add_argument("--out", help="results JSON path")

    x = sub.add_parser("export-aff", help="write a score-colored PLY")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--scene-seed", type=int, required=True)
    x.add_argument("--stage", choices=[s.value for s in Stage], required=True)
    x.add_argument("--category", choices=[c.value for c in Category])
    x.add_argument("--out", required=True)
    return ap


def _gen(args):
    cfg = load_config(args.config, {"n_success": args.n_success, "n_fail": args.n_fail,
                                    "seed": resolve_seed(args.seed), "out": args.out})
    cats = args.category or ([c.value for c, t in TASK_OF.items() if t.value == args.task] if args.task
                             else list(cfg.categories))
    for c in cats:
        if args.task and TASK_OF[Category(c)].value != args.task:
            raise BadSplit(f"category {c} does not belong to task {args.task}")
        m = gen_data(cfg, c, args.out, progress=True)
        info = m["categories"][Category(c).value]
        print(f"{c}: {info['n_success']} success / {info['n_fail']} fail in {info['attempts']} attempts")


def _train(args):
    cfg = load_config(args.config, {"out": args.out})
    tr = cfg.train
    if args.steps is not None:
        tr = dataclasses.replace(tr, steps=args.steps)
    if args.seed is not None or os.environ.get("BIPREMAN_SEED"):
        tr = dataclasses.replace(tr, seed=resolve_seed(args.seed if args.seed is not None else tr.seed))
    if args.no_anticipatory:
        tr = dataclasses.replace(tr, use_anticipatory=False)
    res = train_command(dataclasses.replace(cfg, train=tr), args.data, args.out)
    print(f"trained {tr.steps} steps, final loss {res.history[-1]:.4f}, checkpoint {args.out}")


def _eval(args):
    model, cfg, manifest = load_trained(args.checkpoint)
    cats = args.category or manifest["extra"].get("categories") or list(cfg.categories)
    seed = resolve_seed(args.seed)
    splits = ["seen", "unseen"] if args.split == "both" else [args.split]
    results = []
    for s in splits:
        results += evaluate(model, cfg, cats, s, args.episodes, seed, not args.no_anticipatory,
                            not args.no_pose_predictor)
    print(format_table(results))
    out = args.out or os.path.join(args.checkpoint, f"eval-{args.split}-{seed}.json")
    write_json(out, {"seed": seed, "episodes": args.episodes, "results": results})


def _export(args):
    model, cfg, manifest = load_trained(args.checkpoint)
    cat = args.category or (manifest["extra"].get("categories") or list(cfg.categories))[0]
    amap = export_affordance(model, cfg, cat, args.scene_seed, args.stage, args.out)
    print(f"wrote {len(amap.scores)} points to {args.out}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    handlers = {"gen-data": _gen, "train": _train, "eval": _eval, "export-aff": _export}
    try:
        handlers[args.cmd](args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PrepManipError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
