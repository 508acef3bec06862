"""Full model vs. the variant trained and run without the anticipatory stage, on paired seeds.

Reports per-category success and a one-sided sign test of "the ablation is better".
"""
import argparse
import dataclasses
import logging
import os

import numpy as np
from scipy.stats import binomtest

from prepmanip import harness as Hn
from prepmanip.config import RunConfig


def checkpoint(cfg, data, cats, out, anticipatory):
    if not os.path.isfile(os.path.join(out, "manifest.json")):
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, use_anticipatory=anticipatory))
        Hn.train_command(cfg, [os.path.join(data, c) for c in cats], out)
    return Hn.load_trained(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--category", action="append", default=None)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cats = args.category or ["Bottle", "Lighter"]

    full, cfg, _ = checkpoint(RunConfig(), args.data, cats, os.path.join(args.out, "full"), True)
    ablated, _, _ = checkpoint(RunConfig(), args.data, cats, os.path.join(args.out, "no-anticipatory"), False)
    a = Hn.evaluate(full, cfg, cats, "seen", args.episodes, args.seed, baselines=False)
    b = Hn.evaluate(ablated, cfg, cats, "seen", args.episodes, args.seed, use_anticipatory=False, baselines=False)
    for ra, rb in zip(a, b):
        x, y = np.array(ra["learned_outcomes"]), np.array(rb["learned_outcomes"])
        wins, losses = int(np.sum(y & ~x)), int(np.sum(x & ~y))
        p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
        print(f"{ra['category']:<8} full {x.mean():.2f}  ablated {y.mean():.2f}  "
              f"ablation wins {wins} loses {losses}  p(ablation better) = {p:.3f}")


if __name__ == "__main__":
    main()
