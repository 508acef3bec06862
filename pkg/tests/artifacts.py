"""Full-size corpora and trained models shared by the slow tests, built once per session.

Set PREPMANIP_TEST_CACHE to a directory to keep them between sessions;
otherwise they live in a pytest temporary directory.
"""
import hashlib
import json
import os
import time

from prepmanip import harness as Hn
from prepmanip.config import RunConfig, TrainConfig

ARTICULATED = ("Bottle", "Lighter")


def tree_digest(root):
    """SHA-256 over every file's relative path and bytes, in sorted order."""
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode() + b"\0")
            with open(path, "rb") as fh:
                h.update(hashlib.sha256(fh.read()).digest())
    return h.hexdigest()


class Artifacts:
    def __init__(self, root):
        self.root = root
        self.cfg = RunConfig()
        self._timing_path = os.path.join(root, "timing.json")
        self.timing = {}
        if os.path.isfile(self._timing_path):
            with open(self._timing_path) as fh:
                self.timing = json.load(fh)
        self._models = {}
        self._evals = {}

    def _record(self, key, seconds):
        self.timing[key] = seconds
        with open(self._timing_path, "w") as fh:
            json.dump(self.timing, fh, indent=1, sort_keys=True)

    def corpus(self, category):
        """Directory holding the default 200 + 200 corpus of one category."""
        out = os.path.join(self.root, "data", category)
        if not os.path.isfile(os.path.join(out, "manifest.json")):
            t0 = time.time()
            Hn.gen_data(self.cfg, category, out)
            self._record(f"gen:{category}", time.time() - t0)
        return out

    def model(self, name):
        """Checkpoint directory: "plate" trains on the plate corpus, "articulated"
        and "articulated-noant" on the bottle and lighter corpora."""
        out = os.path.join(self.root, "models", name)
        if not os.path.isfile(os.path.join(out, "manifest.json")):
            cats = ("Plate",) if name == "plate" else ARTICULATED
            data = [self.corpus(c) for c in cats]
            cfg = self.cfg
            if name.endswith("noant"):
                cfg = RunConfig(train=TrainConfig(use_anticipatory=False))
            Hn.train_command(cfg, data, out)
        return out

    def trained(self, name):
        if name not in self._models:
            self._models[name] = Hn.load_trained(self.model(name))
        return self._models[name]

    def evaluation(self, name, categories, episodes=100, seed=7, use_anticipatory=True):
        """evaluate() rows on seen objects, memoized for the session."""
        key = (name, tuple(categories), episodes, seed, use_anticipatory)
        if key not in self._evals:
            model, cfg, _ = self.trained(name)
            self._evals[key] = Hn.evaluate(model, cfg, categories, "seen", episodes, seed, use_anticipatory)
        return self._evals[key]


# criterion number -> (passed, detail), filled by the acceptance tests
VERDICTS = {}


def verdict(number, passed, detail):
    VERDICTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, detail
