"""Orchestration: corpora on disk, phased runs, staleness, reports."""

import csv
import json

import numpy as np
import pytest

from latentlang.config import ExperimentConfig
from latentlang.errors import ConfigError, ContractError, StalenessError
from latentlang.params import ParameterStore
from latentlang.protocol import LANG, TEST, VAL, TaskDataset
from latentlang import runner


def cfg_of(**over):
    """Micro-scale strings config; overridable per test."""
    base = dict(domain="strings", method="l3", seed=3, n_lang=8, n_val=3,
                n_test=3, k=3, hidden=16, emb=8, interp_steps=10,
                proposal_steps=10, batch_tasks=4, val_budget=2, val_k=2,
                refit_steps=2)
    base.update(over)
    return ExperimentConfig.from_mapping(
        {k: str(v) for k, v in base.items()}).resolve()


def nav_cfg(**over):
    base = dict(domain="nav", method="l3", seed=3, n_lang=6, n_test=2, k=2,
                hidden=16, emb=8, nav_fc=24, nav_epochs=1,
                nav_episodes_per_task=1, nav_steps_per_epoch=6,
                nav_batch_rows=64, nav_prior_steps=10, episode_budget=8,
                metric_episodes=3, finetune_batches=2,
                finetune_batch_episodes=3, map_budget=40)
    base.update(over)
    return ExperimentConfig.from_mapping(
        {k: str(v) for k, v in base.items()}).resolve()


# ---------------------------------------------------------------------------
# corpus files


def test_gen_data_deterministic(tmp_path):
    cfg = cfg_of()
    out = runner.gen_data(cfg, tmp_path)
    first = (out / "tasks.jsonl").read_bytes()
    manifest1 = json.loads((out / "manifest.json").read_text())
    runner.gen_data(cfg, tmp_path)
    assert (out / "tasks.jsonl").read_bytes() == first
    manifest2 = json.loads((out / "manifest.json").read_text())
    assert manifest1["content_hash"] == manifest2["content_hash"]


def test_strings_manifest_records_identity_fraction(tmp_path):
    out = runner.gen_data(cfg_of(), tmp_path)
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["identity_fraction"]) == {LANG, VAL, TEST}
    for frac in manifest["identity_fraction"].values():
        assert 0.0 <= frac <= 1.0


def test_shapes_corpus_split_halves(tmp_path):
    cfg = cfg_of(domain="shapes", n_lang=8, n_val=4, n_test=4, fc=24)
    runner.gen_data(cfg, tmp_path)
    tasks, _ = runner.load_corpus(cfg, tmp_path)
    for split in (VAL, TEST):
        flags = [t.info["novel_concept"] for t in tasks if t.split == split]
        assert sum(flags) == len(flags) // 2


def test_corpus_roundtrip_preserves_tasks(tmp_path):
    for cfg in (cfg_of(), cfg_of(domain="shapes", fc=24), nav_cfg()):
        runner.gen_data(cfg, tmp_path)
        loaded, _ = runner.load_corpus(cfg, tmp_path)
        rebuilt = runner.build_corpus(cfg)
        assert [t.task_id for t in loaded] == [t.task_id for t in rebuilt]
        for a, b in zip(loaded, rebuilt):
            assert a.split == b.split
            assert a.oracle_annotation() == b.oracle_annotation()


def test_load_corpus_detects_tampering(tmp_path):
    cfg = cfg_of()
    out = runner.gen_data(cfg, tmp_path)
    path = out / "tasks.jsonl"
    path.write_text(path.read_text() + "\n")
    with pytest.raises(StalenessError, match="content hash"):
        runner.load_corpus(cfg, tmp_path)


def test_load_corpus_requires_gen(tmp_path):
    with pytest.raises(ConfigError, match="gen-data"):
        runner.load_corpus(cfg_of(seed=99), tmp_path)


# ---------------------------------------------------------------------------
# generator audits


def test_audit_rejects_bad_shape_label(tmp_path):
    cfg = cfg_of(domain="shapes", fc=24)
    runner.gen_data(cfg, tmp_path)
    tasks, _ = runner.load_corpus(cfg, tmp_path)
    victim = next(t for t in tasks if t.split == TEST)
    victim.info["label"] = 1 - victim.info["label"]
    with pytest.raises(ContractError, match="label"):
        runner.audit_corpus("shapes", tasks)


def test_audit_rejects_bad_string_pair(tmp_path):
    cfg = cfg_of()
    runner.gen_data(cfg, tmp_path)
    tasks, _ = runner.load_corpus(cfg, tmp_path)
    t = tasks[0]
    tasks[0] = TaskDataset(t.task_id, [("aaa", "zzz")] + t.examples[1:],
                           t.split, annotation=t.oracle_annotation(),
                           info=t.info)
    with pytest.raises(ContractError, match="inconsistent"):
        runner.audit_corpus("strings", tasks)


def test_nav_record_tamper_rejected_at_load(tmp_path):
    cfg = nav_cfg()
    runner.gen_data(cfg, tmp_path)
    tasks, _ = runner.load_corpus(cfg, tmp_path)
    rec = runner.task_to_json("nav", tasks[0])
    rec["instruction"] = "go to the house"
    with pytest.raises(ContractError, match="instruction"):
        runner.task_from_json("nav", rec)


class MisplacedTreasure:
    """Sampler stub whose maps put the treasure off the described cell."""

    def __init__(self, inner):
        self.task = inner.task
        self._inner = inner

    def sample(self, rng):
        from latentlang.nav.world import GridMap
        grid = self._inner.sample(rng)
        land = [(r, c) for r in range(grid.water.shape[0])
                for c in range(grid.water.shape[1]) if not grid.water[r, c]]
        lm = next((r, c) for k, r, c in grid.landmarks
                  if k == self.task.landmark)
        want = (lm[0] + self.task.offset[0], lm[1] + self.task.offset[1])
        wrong = next(cell for cell in land if cell != want)
        return GridMap(grid.water, grid.landmarks, wrong)


def test_audit_rejects_misplaced_treasure(tmp_path):
    cfg = nav_cfg()
    runner.gen_data(cfg, tmp_path)
    tasks, _ = runner.load_corpus(cfg, tmp_path)
    t = tasks[0]
    tasks[0] = TaskDataset(t.task_id, MisplacedTreasure(t.examples), t.split,
                           annotation=t.oracle_annotation(), info=t.info)
    with pytest.raises(ContractError, match="treasure"):
        runner.audit_corpus("nav", tasks)


# ---------------------------------------------------------------------------
# checkpoints and phases


def test_store_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a, b = ParameterStore(rng), ParameterStore(rng)
    a.add("w1", (3, 4), fan_in=4)
    b.add("w2", (2,), fan_in=2)
    path = tmp_path / "ck.l3ck"
    runner._save_stores(path, {"interp": a, "proposal": b})
    back = runner._load_stores(path)
    assert set(back) == {"interp", "proposal"}
    assert np.array_equal(back["interp"].arrays["w1"], a.arrays["w1"])
    assert np.array_equal(back["proposal"].arrays["w2"], b.arrays["w2"])


def test_pretrain_reuses_checkpoint(tmp_path):
    cfg = cfg_of()
    runner.gen_data(cfg, tmp_path)
    rd = runner.pretrain(cfg, tmp_path)
    stamp = (rd / "checkpoint.l3ck").stat().st_mtime_ns
    runner.pretrain(cfg, tmp_path)
    assert (rd / "checkpoint.l3ck").stat().st_mtime_ns == stamp


def test_pretrain_detects_stale_checkpoint(tmp_path):
    cfg = cfg_of()
    out = runner.gen_data(cfg, tmp_path)
    rd = runner.pretrain(cfg, tmp_path)
    meta = json.loads((rd / "manifest.json").read_text())
    meta["corpus_hash"] = "0" * 16
    (rd / "manifest.json").write_text(json.dumps(meta))
    with pytest.raises(StalenessError, match="trained on corpus"):
        runner.pretrain(cfg, tmp_path)


def test_run_resume_identical_report(tmp_path):
    cfg = cfg_of()
    rep1 = runner.run(cfg, tmp_path)
    rep2 = runner.run(cfg, tmp_path)  # resumes from every artifact
    for key in ("splits", "per_task", "task_ids"):
        assert rep1[key] == rep2[key]


def test_selection_artifacts(tmp_path):
    cfg = cfg_of()
    runner.run(cfg, tmp_path)
    rd = runner.run_dir(cfg, tmp_path)
    selections = json.loads((rd / "selections.json").read_text())
    assert set(selections) == {VAL, TEST}
    for row in selections[TEST]:
        assert {"task_id", "tokens", "loss", "proposal_logprob",
                "fallback"} <= set(row)
    lines = [json.loads(l) for l in
             (rd / "hypotheses.jsonl").read_text().splitlines()]
    assert any(r["selected"] for r in lines)
    picked = {r["task_id"] for r in lines if r["selected"]}
    assert {row["task_id"] for row in selections[TEST]} <= picked


def test_eval_detects_selection_drift(tmp_path):
    cfg = cfg_of()
    runner.run(cfg, tmp_path)
    rd = runner.run_dir(cfg, tmp_path)
    selections = json.loads((rd / "selections.json").read_text())
    selections[TEST][0]["task_id"] = "strings-other-000"
    (rd / "selections.json").write_text(json.dumps(selections))
    with pytest.raises(StalenessError, match="does not match"):
        runner.eval_phase(cfg, tmp_path)


def test_nav_run_writes_curve(tmp_path):
    cfg = nav_cfg()
    rep = runner.run(cfg, tmp_path)
    assert rep["curve_csv"] is not None
    with open(rep["curve_csv"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == runner.CURVE_COLUMNS
    consumed = [int(r["episodes_consumed"]) for r in rows]
    assert consumed == sorted(consumed)
    assert {r["phase"] for r in rows} <= {"concept-learning", "fine-tuning"}


# ---------------------------------------------------------------------------
# curve aggregation


def curve(*points):
    return [{"phase": p, "batch": b, "episodes_consumed": e,
             "mean_reward": m, "ci95_low": m, "ci95_high": m}
            for b, (p, e, m) in enumerate(points)]


def test_aggregate_curves_carries_last_value():
    c1 = curve(("concept-learning", 4, 1.0), ("fine-tuning", 10, 2.0))
    c2 = curve(("concept-learning", 6, 3.0), ("fine-tuning", 12, 5.0))
    rows = runner.aggregate_curves([c1, c2], grid_step=2, boundary=6)
    by_ep = {r["episodes_consumed"]: r for r in rows}
    assert by_ep[4]["mean_reward"] == pytest.approx(1.0)    # only c1 started
    assert by_ep[6]["mean_reward"] == pytest.approx(2.0)    # (1 + 3) / 2
    assert by_ep[12]["mean_reward"] == pytest.approx(3.5)   # (2 + 5) / 2
    assert by_ep[6]["phase"] == "concept-learning"
    assert by_ep[8]["phase"] == "fine-tuning"


def test_aggregate_curves_empty():
    assert runner.aggregate_curves([], grid_step=5, boundary=10) == []
    assert runner.aggregate_curves([[]], grid_step=5, boundary=10) == []


# ---------------------------------------------------------------------------
# report tables


def synth_report(domain, method, seed, scores, corpus_hash="h1"):
    return {"domain": domain, "method": method, "kind": method, "seed": seed,
            "corpus_hash": corpus_hash,
            "splits": {TEST: {"accuracy": float(np.mean(scores))}},
            "per_task": {TEST: list(scores)},
            "task_ids": {TEST: [f"t{i}" for i in range(len(scores))]}}


def test_report_table_single_report_one_row():
    rows, orderings = runner.report_table(
        [synth_report("strings", "l3", 0, [1.0, 0.0])])
    assert len(rows) == 1
    assert rows[0]["metric"] == "accuracy"
    assert orderings == []


def test_report_table_includes_chance_row_for_shapes():
    rows, _ = runner.report_table(
        [synth_report("shapes", "l3", 0, [1.0, 1.0, 0.0, 1.0])])
    random_rows = [r for r in rows if r["method"] == "random"]
    assert len(random_rows) == 1
    assert random_rows[0]["value"] == 0.5


def test_report_table_orders_methods():
    reports = [synth_report("strings", "l3", 0, [1.0] * 30),
               synth_report("strings", "meta", 0, [0.0] * 30)]
    rows, orderings = runner.report_table(reports)
    (pair,) = orderings
    assert pair["verdict"] == "l3 > meta"


def test_report_table_requires_reports():
    with pytest.raises(ConfigError):
        runner.report_table([])


def test_write_table_csv(tmp_path):
    rows, _ = runner.report_table(
        [synth_report("strings", "l3", 0, [1.0, 0.0])])
    path = tmp_path / "table.csv"
    runner.write_table_csv(path, rows)
    with open(path, newline="") as fh:
        got = list(csv.DictReader(fh))
    assert tuple(got[0]) == runner.TABLE_COLUMNS
    assert got[0]["method"] == "l3"
