import json
import os

import numpy as np
import pytest

from prepmanip import harness as Hn
from prepmanip.config import RunConfig, SimConfig
from prepmanip.errors import BadSplit, MissingCheckpoint, QuotaUnreachable
from prepmanip.heuristics import run_heuristic_episode
from prepmanip.scene import Category, TaskKind, generate_object

from artifacts import tree_digest

SMALL_RUN = RunConfig(n_success=10, n_fail=10)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "plate"
    assert Hn.main(["gen-data", "--category", "Plate", "--n-success", "10", "--n-fail", "10", "--out", str(out)]) == 0
    return out


def test_gen_data_fills_quota(small_corpus):
    eps = sorted(os.listdir(small_corpus / "episodes"))
    assert len(eps) == 20
    info = json.loads((small_corpus / "manifest.json").read_text())["categories"]["Plate"]
    assert info["n_success"] == 10 and info["n_fail"] == 10
    assert sorted(info["success"] + info["fail"]) == eps


def test_gen_data_manifest_records_run_config(small_corpus):
    manifest = json.loads((small_corpus / "manifest.json").read_text())
    assert manifest["run_config"]["n_success"] == 10
    assert manifest["run_config"]["sim"]["lift_success_height"] == SimConfig().lift_success_height
    split = json.loads((small_corpus / "split.json").read_text())
    assert split


def test_gen_data_rerun_is_byte_identical(small_corpus, tmp_path):
    Hn.gen_data(SMALL_RUN, "Plate", str(tmp_path / "again"))
    assert tree_digest(tmp_path / "again") == tree_digest(small_corpus)


def test_unwinnable_quota_raises():
    cfg = RunConfig(n_success=1, n_fail=0, attempt_factor=5, probes=0, sim=SimConfig(lift_success_height=5.0))
    with pytest.raises(QuotaUnreachable):
        Hn.gen_data(cfg, "Plate", "/nonexistent/never-written")


def test_derived_seeds_are_stable_and_distinct():
    a = [Hn.derive_seed(7, "eval", 0, i) for i in range(100)]
    assert a == [Hn.derive_seed(7, "eval", 0, i) for i in range(100)]
    assert len(set(a)) == 100
    assert Hn.derive_seed(7, "gen", 0, 0) != Hn.derive_seed(7, "eval", 0, 0)


# ---------------------------------------------------------------- eval

def test_eval_rows_hold_requested_trials(artifacts):
    rows = artifacts.evaluation("plate", ["Plate"])
    assert len(rows) == 1
    row = rows[0]
    assert row["trials"] == 100
    for col in ("learned", "random", "heuristic"):
        assert len(row[col + "_outcomes"]) == 100
        assert row[col] == np.mean(row[col + "_outcomes"])


def test_heuristic_column_matches_independent_recompute(artifacts):
    row = artifacts.evaluation("plate", ["Plate"])[0]
    cfg = RunConfig()
    objects = [generate_object(Category.PLATE, seed=s) for s in Hn.split_for(cfg).objects(Category.PLATE, "train")]
    flags = [run_heuristic_episode(TaskKind.PLATE_LIFTING, objects[i % len(objects)],
                                   Hn.derive_seed(7, "eval", Hn.category_index("Plate"), i)).success
             for i in range(100)]
    assert row["heuristic_outcomes"] == flags


def test_eval_twice_gives_identical_tables(artifacts):
    model, cfg, _ = artifacts.trained("plate")
    first = Hn.evaluate(model, cfg, ["Plate"], "unseen", 5, 3)
    second = Hn.evaluate(model, cfg, ["Plate"], "unseen", 5, 3)
    assert first == second
    assert Hn.format_table(first) == Hn.format_table(second)


def test_eval_rejects_unknown_split(artifacts):
    model, cfg, _ = artifacts.trained("plate")
    with pytest.raises(BadSplit):
        Hn.evaluate(model, cfg, ["Plate"], "test", 1, 0)


def test_table_shows_seen_and_unseen():
    rows = [{"category": "Plate", "split": s, "trials": 4, "learned": v, "random": 0.0}
            for s, v in (("seen", 0.5), ("unseen", 0.25))]
    table = Hn.format_table(rows)
    assert "0.50 / 0.25" in table and "0.00 / 0.00" in table


def test_cli_eval_writes_results(artifacts, tmp_path, capsys):
    out = tmp_path / "res.json"
    code = Hn.main(["eval", "--checkpoint", artifacts.model("plate"), "--split", "seen", "--episodes", "3",
                    "--seed", "4", "--out", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert data["seed"] == 4 and data["results"][0]["trials"] == 3
    assert "Plate" in capsys.readouterr().out


# ---------------------------------------------------------------- export and CLI plumbing

@pytest.mark.parametrize("stage", ["Goal", "Anticipatory", "Pre"])
def test_export_writes_256_vertex_ply(artifacts, tmp_path, stage):
    out = tmp_path / f"{stage}.ply"
    code = Hn.main(["export-aff", "--checkpoint", artifacts.model("plate"), "--scene-seed", "5", "--stage", stage,
                    "--out", str(out)])
    assert code == 0
    header = out.read_bytes().split(b"end_header")[0].decode()
    assert "element vertex 256" in header
    assert "property float score" in header or "property double score" in header


def test_missing_checkpoint_exit_code(tmp_path, capsys):
    assert Hn.main(["eval", "--checkpoint", str(tmp_path / "nothing"), "--episodes", "1"]) == 2
    assert "MissingCheckpoint" in capsys.readouterr().err
    with pytest.raises(MissingCheckpoint):
        Hn.load_trained(str(tmp_path / "nothing"))


def test_unreadable_config_exit_code(tmp_path):
    assert Hn.main(["gen-data", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1


def test_quota_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"attempt_factor": 2, "probes": 0, "sim": {"lift_success_height": 5.0}}))
    code = Hn.main(["gen-data", "--category", "Plate", "--n-success", "1", "--n-fail", "0", "--config", str(cfg),
                    "--out", str(tmp_path / "o")])
    assert code == 2


def test_seed_environment_variable_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("BIPREMAN_SEED", "5")
    out = tmp_path / "o"
    assert Hn.main(["gen-data", "--category", "Plate", "--n-success", "1", "--n-fail", "1", "--seed", "0",
                    "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["run_config"]["seed"] == 5
    assert Hn.resolve_seed(0) == 5
    monkeypatch.delenv("BIPREMAN_SEED")
    assert Hn.resolve_seed(0) == 0
