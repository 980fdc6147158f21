"""String-edit rules, descriptions, and corpus generation."""

import numpy as np
import pytest

from latentlang.errors import AnnotationAccessError, ContractError
from latentlang.protocol import LANG, TEST, VAL
from latentlang.seq import EOS, PAD
from latentlang.strings.corpus import (StringCorpusConfig, WordPools, augment,
                                       build_string_corpus, generate_wordlist,
                                       identity_fraction,
                                       load_bundled_wordlist)
from latentlang.strings.describe import (description_vocab_tokens,
                                         parse_description,
                                         render_description, sample_style)
from latentlang.strings.model import (StringsAdapter, char_vocab, desc_vocab,
                                      identity_metric)
from latentlang.strings.transducer import (ALPHABET, Transducer,
                                           apply_transducer,
                                           parse_formal_tokens,
                                           sample_transducer,
                                           to_formal_tokens)
from oracle_transduce import oracle_apply

RNG = np.random.default_rng


def random_word(rng) -> str:
    n = int(rng.integers(1, 13))
    return "".join(ALPHABET[i] for i in rng.integers(0, 26, size=n))


# ---------------------------------------------------------------------------
# rule engine vs the independent scan oracle


def test_pinned_replace_every_o_with_un():
    t = Transducer("every", "literal", "o", "replace", "un")
    assert apply_transducer(t, "pouching") == "punuching"
    assert apply_transducer(t, "regulation") == "regulatiunn"
    assert apply_transducer(t, "uptakes") == "uptakes"


def test_pinned_description_surface_and_parse():
    t = Transducer("every", "literal", "o", "replace", "un")
    desc = render_description(t, (1, 1, 0))
    assert desc == ["change", "all", "o", "to", "u", "n"]
    assert parse_description(desc) == t


def test_engine_matches_oracle_on_10k_pairs():
    rng = RNG(2024)
    words = load_bundled_wordlist()
    seen_rules = set()
    for i in range(10_000):
        t = sample_transducer(rng)
        seen_rules.add((t.scope, t.target_kind, t.target_char,
                        t.action, t.replacement))
        w = words[int(rng.integers(len(words)))] if i % 2 else random_word(rng)
        want = oracle_apply(t.scope, t.target_kind, t.target_char,
                            t.action, t.replacement, w)
        assert apply_transducer(t, w) == want, (t, w)
    assert len(seen_rules) >= 500


def test_engine_matches_oracle_on_edge_words():
    rng = RNG(7)
    edge = ["a", "z", "aa", "ooo", "bcdfg", "aeiou", "xyzzy"]
    for _ in range(300):
        t = sample_transducer(rng)
        for w in edge:
            want = oracle_apply(t.scope, t.target_kind, t.target_char,
                                t.action, t.replacement, w)
            assert apply_transducer(t, w) == want


def test_sampler_never_emits_noop_literal_replace():
    rng = RNG(11)
    for _ in range(3000):
        t = sample_transducer(rng)
        if t.action == "replace" and t.target_kind == "literal":
            assert t.replacement != t.target_char


def test_rejects_malformed_rules():
    with pytest.raises(ContractError):
        Transducer("sometimes", "literal", "o", "delete", None)
    with pytest.raises(ContractError):
        Transducer("every", "literal", "o", "replace", None)
    with pytest.raises(ContractError):
        Transducer("every", "vowel", "o", "delete", None)
    with pytest.raises(ContractError):
        Transducer("every", "literal", "o", "replace", "o")
    with pytest.raises(ContractError):
        Transducer("every", "literal", "o", "replace", "abc")


# ---------------------------------------------------------------------------
# description round trips


def test_formal_round_trip():
    rng = RNG(5)
    for _ in range(500):
        t = sample_transducer(rng)
        assert parse_formal_tokens(to_formal_tokens(t)) == t


def test_natural_round_trip_all_templates():
    rng = RNG(6)
    for _ in range(300):
        t = sample_transducer(rng)
        for template in range(3):
            for sp in range(2):
                for tp in range(2):
                    desc = render_description(t, (template, sp, tp))
                    assert parse_description(desc) == t, desc


def test_parse_rejects_nonsense():
    assert parse_description(["purple", "monkey"]) is None
    assert parse_description([]) is None
    assert parse_description(["replace", "every", "o"]) is None  # no repl
    assert parse_formal_tokens(["every", "o", "fly"]) is None


def test_vocab_covers_all_rendered_descriptions():
    vocab = set(description_vocab_tokens())
    rng = RNG(8)
    for _ in range(200):
        t = sample_transducer(rng)
        for template in range(3):
            desc = render_description(t, (template, int(rng.integers(2)),
                                          int(rng.integers(2))))
            assert set(desc) <= vocab
        assert set(to_formal_tokens(t)) <= vocab


# ---------------------------------------------------------------------------
# word pools


def test_match_mask_agrees_with_scan():
    words = load_bundled_wordlist()[:800]
    pools = WordPools(words)
    rng = RNG(9)
    for _ in range(50):
        t = sample_transducer(rng)
        mask = pools.match_mask(t)
        for i in (0, 1, 17, 399, 799):
            from oracle_transduce import oracle_positions
            want = bool(oracle_positions(t.scope, t.target_kind,
                                         t.target_char, words[i]))
            assert bool(mask[i]) == want


def test_draw_changing_only_returns_changing_words():
    words = load_bundled_wordlist()[:2000]
    pools = WordPools(words)
    rng = RNG(10)
    for _ in range(100):
        t = sample_transducer(rng)
        i = pools.draw_changing(t, rng, exclude=set())
        if i is not None:
            assert apply_transducer(t, words[i]) != words[i]


def test_wordlist_is_reproducible_from_generator():
    assert load_bundled_wordlist() == generate_wordlist()


def test_wordpools_validation():
    with pytest.raises(ContractError):
        WordPools(["ok", "Bad"])
    with pytest.raises(ContractError):
        WordPools(["dup", "dup"])
    with pytest.raises(ContractError):
        WordPools([""])


# ---------------------------------------------------------------------------
# corpus generation


@pytest.fixture(scope="module")
def small_corpus():
    words = load_bundled_wordlist()
    cfg = StringCorpusConfig(n_lang=150, n_val=60, n_test=60)
    return build_string_corpus(42, words, cfg), words


def test_corpus_counts_and_shape(small_corpus):
    tasks, _ = small_corpus
    by_split = {s: [t for t in tasks if t.split == s]
                for s in (LANG, VAL, TEST)}
    assert [len(by_split[s]) for s in (LANG, VAL, TEST)] == [150, 60, 60]
    for t in tasks:
        assert len(t.examples) == 5
        assert any(x != y for x, y in t.examples)


def test_corpus_revalidates_against_engine(small_corpus):
    tasks, _ = small_corpus
    for t in tasks:
        rule = parse_formal_tokens(t.info["rule"].split())
        assert rule is not None
        for x, y in t.examples:
            assert apply_transducer(rule, x) == y
        assert apply_transducer(rule, t.info["query_in"]) == t.info["query_out"]


def test_corpus_annotations_parse_back_to_their_rule(small_corpus):
    tasks, _ = small_corpus
    for t in tasks:
        rule = parse_formal_tokens(t.info["rule"].split())
        assert parse_description(t.oracle_annotation()) == rule


def test_corpus_identity_fraction_near_target(small_corpus):
    tasks, _ = small_corpus
    for split in (LANG, VAL, TEST):
        assert abs(identity_fraction(tasks, split) - 0.18) <= 0.02


def test_corpus_novel_rule_split_is_exact(small_corpus):
    tasks, _ = small_corpus
    lang_rules = {t.info["rule"] for t in tasks if t.split == LANG}
    for split in (VAL, TEST):
        sub = [t for t in tasks if t.split == split]
        novel = [t for t in sub if t.info["novel_rule"]]
        assert len(novel) == len(sub) // 2
        for t in novel:
            assert t.info["rule"] not in lang_rules
        for t in sub:
            if not t.info["novel_rule"]:
                assert t.info["rule"] in lang_rules


def test_corpus_hides_heldout_annotations(small_corpus):
    tasks, _ = small_corpus
    val = next(t for t in tasks if t.split == VAL)
    with pytest.raises(AnnotationAccessError):
        _ = val.annotation
    lang = next(t for t in tasks if t.split == LANG)
    assert lang.annotation  # training annotations stay readable


def test_corpus_is_deterministic(small_corpus):
    tasks, words = small_corpus
    again = build_string_corpus(
        42, words, StringCorpusConfig(n_lang=150, n_val=60, n_test=60))
    assert len(again) == len(tasks)
    for a, b in zip(tasks, again):
        assert a.task_id == b.task_id
        assert a.examples == b.examples
        assert a.info == b.info
        assert a.oracle_annotation() == b.oracle_annotation()


def test_corpus_formal_mode(small_corpus):
    _, words = small_corpus
    cfg = StringCorpusConfig(n_lang=20, n_val=5, n_test=5,
                             annotation_mode="formal")
    tasks = build_string_corpus(3, words, cfg)
    for t in tasks:
        if t.split == LANG:
            assert parse_formal_tokens(t.annotation) is not None


def test_corpus_rejects_small_wordlist():
    with pytest.raises(ContractError):
        build_string_corpus(1, ["abc", "def"], StringCorpusConfig())


def test_augmentation_multiplies_and_revalidates(small_corpus):
    tasks, words = small_corpus
    lang = [t for t in tasks if t.split == LANG][:40]
    out = augment(lang, 3, seed=17, wordlist=words)
    assert len(out) == 3 * len(lang)
    for t in out:
        rule = parse_formal_tokens(t.info["rule"].split())
        for x, y in t.examples:
            assert apply_transducer(rule, x) == y
        assert parse_description(t.oracle_annotation()) == rule


def test_augmentation_keeps_description_style(small_corpus):
    tasks, words = small_corpus
    lang = [t for t in tasks if t.split == LANG][:25]
    out = augment(lang, 2, seed=23, wordlist=words)
    for t in out:
        rule = parse_formal_tokens(t.info["rule"].split())
        style = tuple(t.info["style"])
        assert t.oracle_annotation() == render_description(rule, style)


def test_identity_metric_matches_identity_fraction(small_corpus):
    tasks, _ = small_corpus
    val = [t for t in tasks if t.split == VAL]
    assert identity_metric(val).mean() == pytest.approx(
        identity_fraction(tasks, VAL))


# ---------------------------------------------------------------------------
# adapter plumbing


def test_adapter_batches_are_well_formed(small_corpus):
    tasks, _ = small_corpus
    lang = [t for t in tasks if t.split == LANG]
    adapter = StringsAdapter(hidden=8, emb=4)
    from latentlang.protocol import TrainConfig
    stream = adapter.interp_batches(lang, None, RNG(0),
                                    TrainConfig(batch_tasks=4))
    b = next(stream)
    assert b["_n"] == 20
    assert b["x"].shape[0] == b["y"].shape[0] == b["pair"].shape[0] == 20
    assert b["desc_enc"].shape[0] == 20
    assert b["desc_dec"].shape[0] == 4
    assert (b["y"] == EOS).any(axis=1).all()
    assert not (b["desc_enc"] == EOS).any()
    # leave-one-out context: rows weight the 4 other examples of the task
    assert np.allclose(b["loo"].sum(axis=1), 1.0)
    assert np.all(np.diag(b["loo"]) == 0.0)
    assert np.allclose(b["task_mean"].sum(axis=1), 1.0)


def test_adapter_encodes_annotations_without_unk(small_corpus):
    tasks, _ = small_corpus
    adapter = StringsAdapter(hidden=8, emb=4)
    from latentlang.seq import UNK
    for t in tasks:
        ids = adapter.encode_annotation(t.oracle_annotation())
        assert UNK not in ids
        assert all(i > UNK for i in ids)


def test_char_vocab_round_trip():
    v = char_vocab()
    ids = v.encode(list("hello"))
    assert v.decode(ids) == list("hello")
    assert len(v) == 4 + 27  # reserved + letters + separator


def test_desc_vocab_has_no_duplicates():
    v = desc_vocab()
    assert len(v) == 4 + len(description_vocab_tokens())
