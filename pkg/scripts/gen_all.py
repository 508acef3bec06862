"""Generate the default success/failure corpus for every category, one directory each."""
import argparse
import json
import logging
import os
import time

from prepmanip import harness as Hn
from prepmanip.config import RunConfig
from prepmanip.scene import Category


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/data")
    ap.add_argument("--category", action="append", choices=[c.value for c in Category])
    ap.add_argument("--n-success", type=int, default=200)
    ap.add_argument("--n-fail", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = RunConfig(n_success=args.n_success, n_fail=args.n_fail, seed=Hn.resolve_seed(args.seed))
    timing = {}
    for cat in args.category or [c.value for c in Category]:
        t0 = time.time()
        m = Hn.gen_data(cfg, cat, os.path.join(args.out, cat), progress=True)
        timing[cat] = {"seconds": round(time.time() - t0, 1), "attempts": m["categories"][cat]["attempts"]}
        print(f"{cat}: {timing[cat]['seconds']}s, {timing[cat]['attempts']} attempts")
    with open(os.path.join(args.out, "timing.json"), "w") as fh:
        json.dump(timing, fh, indent=1)


if __name__ == "__main__":
    main()
