"""Train one model on a set of corpora and report seen/unseen success next to the baselines."""
import argparse
import dataclasses
import json
import logging
import os

from prepmanip import harness as Hn
from prepmanip.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--category", action="append", required=True, help="corpus subdirectory; repeatable")
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = RunConfig()
    cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, steps=args.steps))
    if not os.path.isfile(os.path.join(args.out, "manifest.json")):
        Hn.train_command(cfg, [os.path.join(args.data, c) for c in args.category], args.out)
    model, cfg, _ = Hn.load_trained(args.out)
    results = []
    for split in ("seen", "unseen"):
        results += Hn.evaluate(model, cfg, args.category, split, args.episodes, args.seed)
    print(Hn.format_table(results))
    with open(os.path.join(args.out, f"results-{args.seed}.json"), "w") as fh:
        json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
