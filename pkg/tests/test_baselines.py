"""Baseline drivers and the paired bootstrap report comparison."""

import numpy as np
import pytest

from latentlang.baselines import (DOMAIN_KINDS, BaselineConfig, compare,
                                  corpus_fingerprint, evaluate_baseline,
                                  pretrain_baseline, run_baseline)
from latentlang.errors import ComparisonError, ConfigError
from latentlang.protocol import LANG, TEST, VAL, TaskDataset, TrainConfig
from latentlang.strings.corpus import (StringCorpusConfig, build_string_corpus,
                                       identity_fraction,
                                       load_bundled_wordlist)
from latentlang.strings.model import StringsAdapter


@pytest.fixture(scope="module")
def corpus():
    cfg = StringCorpusConfig(n_lang=8, n_val=3, n_test=4)
    return build_string_corpus(11, load_bundled_wordlist(), cfg)


TINY = TrainConfig(interp_steps=8, proposal_steps=8, batch_tasks=4,
                   val_budget=2, val_k=2, refit_steps=2)


def small_adapter():
    return StringsAdapter(hidden=16, emb=8, max_desc_len=10)


# ---------------------------------------------------------------------------
# configuration contracts


def test_kind_must_exist():
    with pytest.raises(ConfigError, match="unknown baseline"):
        BaselineConfig("matched-pretrain")


def test_kind_must_fit_domain():
    BaselineConfig("identity").validate("strings")
    with pytest.raises(ConfigError, match="not defined for domain"):
        BaselineConfig("identity").validate("shapes")
    with pytest.raises(ConfigError, match="not defined for domain"):
        BaselineConfig("rl-scratch").validate("strings")
    for domain, kinds in DOMAIN_KINDS.items():
        for kind in kinds:
            BaselineConfig(kind).validate(domain)


def test_embedding_dim_must_match_scorer(corpus):
    cfg = BaselineConfig("multitask", emb_dim=7)
    with pytest.raises(ConfigError, match="must equal"):
        run_baseline("strings", cfg, corpus, 0, adapter=small_adapter(),
                     train_cfg=TINY)


def test_evaluate_needs_pretrained_store(corpus):
    with pytest.raises(ConfigError, match="pretrained"):
        evaluate_baseline("strings", BaselineConfig("meta"), corpus, 0, {},
                          adapter=small_adapter(), train_cfg=TINY)


# ---------------------------------------------------------------------------
# driver behavior


def test_identity_matches_corpus_fraction(corpus):
    rec = run_baseline("strings", BaselineConfig("identity"), corpus, 0)
    for split in (VAL, TEST):
        assert rec["splits"][split]["accuracy"] == pytest.approx(
            identity_fraction(corpus, split))
    assert rec["task_ids"][TEST] == [t.task_id for t in corpus
                                     if t.split == TEST]


def test_run_equals_pretrain_then_evaluate(corpus):
    cfg = BaselineConfig("meta")
    one = run_baseline("strings", cfg, corpus, 3, adapter=small_adapter(),
                       train_cfg=TINY)
    state = pretrain_baseline("strings", cfg, corpus, 3,
                              adapter=small_adapter(), train_cfg=TINY)
    two = evaluate_baseline("strings", cfg, corpus, 3, state,
                            adapter=small_adapter(), train_cfg=TINY)
    assert one["per_task"] == two["per_task"]
    assert one["splits"] == two["splits"]


def test_multitask_state_roundtrips(corpus):
    cfg = BaselineConfig("multitask")
    state = pretrain_baseline("strings", cfg, corpus, 1,
                              adapter=small_adapter(), train_cfg=TINY)
    assert set(state) == {"store", "task_index", "emb_dim"}
    n_lang = sum(t.split == LANG for t in corpus)
    assert len(state["task_index"]) == n_lang
    rec = evaluate_baseline("strings", cfg, corpus, 1, state,
                            adapter=small_adapter(), train_cfg=TINY)
    assert set(rec["per_task"]) == {VAL, TEST}
    assert all(s in (0.0, 1.0) for s in rec["per_task"][TEST])


def test_record_schema(corpus):
    rec = run_baseline("strings", BaselineConfig("identity"), corpus, 5)
    for key in ("domain", "kind", "method", "seed", "corpus_hash", "splits",
                "per_task", "task_ids", "budgets", "wall_clock_s"):
        assert key in rec


def test_fingerprint_tracks_content(corpus):
    assert corpus_fingerprint(corpus) == corpus_fingerprint(list(corpus))
    bent = [TaskDataset(t.task_id, t.examples, t.split,
                        annotation=("changed",), info=t.info) for t in corpus]
    assert corpus_fingerprint(bent) != corpus_fingerprint(corpus)


# ---------------------------------------------------------------------------
# compare: paired bootstrap orderings


def report_of(method, seed, per_task, corpus_hash="abc", ids=None):
    ids = ids or [f"t{i}" for i in range(len(per_task))]
    return {"method": method, "kind": method, "seed": seed,
            "corpus_hash": corpus_hash,
            "splits": {TEST: {"accuracy": float(np.mean(per_task))}},
            "per_task": {TEST: list(per_task)}, "task_ids": {TEST: ids}}


def test_compare_needs_two_reports():
    with pytest.raises(ComparisonError, match="two reports"):
        compare([report_of("a", 0, [1.0])])


def test_compare_self_is_tie():
    rep = report_of("l3", 0, [1.0, 0.0, 1.0, 0.0])
    table = compare([rep, dict(rep)])
    (pair,) = table["pairs"]
    assert pair["mean_diff"] == 0.0
    assert pair["verdict"] == "tie"
    assert {m["method"] for m in table["methods"]} == {"l3", "l3#2"}


def test_compare_detects_clear_winner():
    n = 40
    a = report_of("good", 0, [1.0] * n)
    b = report_of("bad", 0, [1.0] * 5 + [0.0] * (n - 5))
    table = compare([a, b])
    (pair,) = table["pairs"]
    assert pair["verdict"] == "good > bad"
    assert pair["ci_low"] > 0
    flipped = compare([b, a])
    assert flipped["pairs"][0]["verdict"] == "good > bad"


def test_compare_requires_matched_corpora():
    a = report_of("a", 0, [1.0, 0.0])
    b = report_of("b", 0, [1.0, 1.0], corpus_hash="zzz")
    with pytest.raises(ComparisonError, match="mismatched corpora"):
        compare([a, b])


def test_compare_requires_matched_tasks():
    a = report_of("a", 0, [1.0, 0.0], ids=["t0", "t1"])
    b = report_of("b", 0, [1.0, 0.0], ids=["t0", "t9"])
    with pytest.raises(ComparisonError, match="different task lists"):
        compare([a, b])


def test_compare_requires_matched_seed_sets():
    reps = [report_of("a", 0, [1.0, 0.0]), report_of("a", 1, [1.0, 0.0]),
            report_of("b", 0, [0.0, 0.0])]
    with pytest.raises(ComparisonError, match="mismatched seeds"):
        compare(reps)


def test_compare_pairs_across_seeds():
    reps = [report_of("a", 0, [1.0, 1.0]), report_of("a", 1, [1.0, 0.0]),
            report_of("b", 0, [0.0, 0.0]), report_of("b", 1, [0.0, 0.0])]
    table = compare(reps)
    methods = {m["method"]: m for m in table["methods"]}
    assert methods["a"]["n_scores"] == 4
    assert methods["a"]["mean"] == pytest.approx(0.75)
    (pair,) = table["pairs"]
    assert pair["mean_diff"] == pytest.approx(0.75)


def test_compare_deterministic():
    reps = [report_of("a", 0, [1.0, 0.0, 1.0]),
            report_of("b", 0, [0.0, 1.0, 1.0])]
    t1 = compare(reps, seed=9)
    t2 = compare(reps, seed=9)
    assert t1 == t2
