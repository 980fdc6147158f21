"""Scenes, concepts, captions, and the visual-domain models."""

import numpy as np
import pytest

from latentlang import autodiff as ad
from latentlang.errors import AnnotationAccessError, ContractError
from latentlang.gradcheck import fd_grad, max_rel_err
from latentlang.params import ParameterStore
from latentlang.protocol import LANG, TEST, VAL, TrainConfig
from latentlang.shapes.model import ShapesAdapter, shapes_vocab
from latentlang.shapes.scenes import (COLORS, RELATIONS, SHAPES, AttrSpec,
                                      Entity, Scene, ShapeCorpusConfig,
                                      SpatialConcept, build_shape_corpus,
                                      caption_words, concept_from_record,
                                      concept_to_record, eval_concept,
                                      generate_scene, parse_caption,
                                      render_caption, sample_concept,
                                      scene_from_record, scene_to_record)
from oracle_shapes import oracle_eval

RNG = np.random.default_rng


def _mk_scene(*ents):
    return Scene(tuple(Entity(*e) for e in ents))


def _concept(rel, sc, ss, oc, os):
    return SpatialConcept(rel, AttrSpec(sc, ss), AttrSpec(oc, os))


# ---------------------------------------------------------------------------
# concept semantics


def test_pinned_left_of_example():
    red, blue = COLORS.index("red"), COLORS.index("blue")
    circle, square = SHAPES.index("circle"), SHAPES.index("square")
    scene = _mk_scene((circle, red, 0.5, 0.2, 0.12),
                      (square, blue, 0.5, 0.8, 0.12),
                      (SHAPES.index("bar"), COLORS.index("pink"), 0.2, 0.5, 0.1),
                      (SHAPES.index("ring"), COLORS.index("cyan"), 0.8, 0.5, 0.1))
    left = _concept("left-of", red, circle, blue, square)
    right = _concept("right-of", red, circle, blue, square)
    assert eval_concept(left, scene) is True
    assert eval_concept(right, scene) is False


def test_margin_blocks_narrow_relations():
    red, blue = COLORS.index("red"), COLORS.index("blue")
    scene = _mk_scene((0, red, 0.5, 0.47, 0.11), (1, blue, 0.5, 0.51 + 0.23, 0.11),
                      (2, 3, 0.15, 0.2, 0.11), (3, 4, 0.85, 0.8, 0.11))
    # red is 0.27 left of blue: satisfied; but above/below margins fail
    assert eval_concept(_concept("left-of", red, None, blue, None), scene)
    assert not eval_concept(_concept("above", red, None, blue, None), scene)
    assert not eval_concept(_concept("below", red, None, blue, None), scene)


def test_eval_matches_oracle_on_10k_pairs():
    rng = RNG(77)
    agree = 0
    for i in range(10_000):
        concept, _ = sample_concept(rng)
        # scenes drawn against an unrelated concept exercise both outcomes
        other, _ = sample_concept(rng)
        scene = generate_scene(rng, other, positive=bool(i % 2))
        ents = [(e.shape, e.color, e.row, e.col, e.radius)
                for e in scene.entities]
        want = oracle_eval(concept.relation, concept.subject.color,
                           concept.subject.shape, concept.object.color,
                           concept.object.shape, ents)
        assert eval_concept(concept, scene) == want
        agree += 1
    assert agree == 10_000


def test_generate_scene_respects_sign_and_counts():
    rng = RNG(3)
    counts = set()
    for i in range(400):
        concept, _ = sample_concept(rng)
        positive = bool(i % 2)
        s = generate_scene(rng, concept, positive)
        assert eval_concept(concept, s) is positive
        counts.add(len(s.entities))
    assert counts == {4, 5}


def test_scene_invariants_enforced():
    e = (0, 0, 0.5, 0.5, 0.12)
    with pytest.raises(ContractError):
        _mk_scene(e, e, (1, 1, 0.2, 0.2, 0.1), (2, 2, 0.8, 0.8, 0.1))
    with pytest.raises(ContractError):
        _mk_scene(e, (1, 1, 0.2, 0.2, 0.1), (2, 2, 0.8, 0.8, 0.1))  # only 3
    with pytest.raises(ContractError):
        Entity(0, 0, 0.01, 0.5, 0.12)  # sticks out of the square
    with pytest.raises(ContractError):
        Entity(9, 0, 0.5, 0.5, 0.12)
    with pytest.raises(ContractError):
        AttrSpec(None, None)


# ---------------------------------------------------------------------------
# captions


def test_caption_round_trip_over_entire_concept_space():
    specs = ([AttrSpec(c, s) for c in range(8) for s in range(8)]
             + [AttrSpec(c, None) for c in range(8)]
             + [AttrSpec(None, s) for s in range(8)])
    for rel in RELATIONS:
        for sub in specs:
            for obj in specs:
                concept = SpatialConcept(rel, sub, obj)
                assert parse_caption(render_caption(concept)) == concept


def test_caption_vocabulary_small_and_covering():
    words = caption_words()
    assert len(words) <= 30
    assert len(set(words)) == len(words)
    rng = RNG(1)
    for _ in range(500):
        _, cap = sample_concept(rng)
        assert set(cap) <= set(words)


def test_caption_mean_length_matches_target():
    rng = RNG(6)
    lens = [len(sample_concept(rng)[1]) for _ in range(10_000)]
    assert abs(np.mean(lens) - 12.0) <= 3.0


def test_parse_caption_rejects_nonsense():
    assert parse_caption([]) is None
    assert parse_caption(["a", "red", "circle"]) is None
    assert parse_caption(["a", "red", "circle", "is", "sideways",
                          "a", "square", "."]) is None
    assert parse_caption(["a", "shape", "is", "above", "a", "circle", "."]) is None


# ---------------------------------------------------------------------------
# corpus


@pytest.fixture(scope="module")
def small_corpus():
    return build_shape_corpus(9, ShapeCorpusConfig(n_lang=80, n_val=40,
                                                   n_test=40))


def test_corpus_positives_all_satisfy_concept(small_corpus):
    for t in small_corpus:
        concept = concept_from_record(t.info["concept"])
        for scene in t.examples:
            assert eval_concept(concept, scene)
        assert eval_concept(concept, t.info["query"]) == bool(t.info["label"])


def test_corpus_label_balance_exact(small_corpus):
    for split in (LANG, VAL, TEST):
        labels = [t.info["label"] for t in small_corpus if t.split == split]
        assert sum(labels) == len(labels) // 2


def test_corpus_scene_hashes_disjoint(small_corpus):
    seen = set()
    for t in small_corpus:
        for scene in list(t.examples) + [t.info["query"]]:
            k = scene.key()
            assert k not in seen
            seen.add(k)


def test_corpus_novel_half_shares_no_language_concept(small_corpus):
    def key(t):
        c = t.info["concept"]
        return (c["relation"], tuple(c["subject"]), tuple(c["object"]))

    lang_keys = {key(t) for t in small_corpus if t.split == LANG}
    for split in (VAL, TEST):
        sub = [t for t in small_corpus if t.split == split]
        novel = [t for t in sub if t.info["novel_concept"]]
        assert len(novel) == len(sub) // 2
        for t in novel:
            assert key(t) not in lang_keys
        for t in sub:
            if not t.info["novel_concept"]:
                assert key(t) in lang_keys


def test_corpus_annotations_are_query_blind(small_corpus):
    val = next(t for t in small_corpus if t.split == VAL)
    with pytest.raises(AnnotationAccessError):
        _ = val.annotation
    assert parse_caption(val.oracle_annotation()) == \
        concept_from_record(val.info["concept"])


def test_corpus_deterministic(small_corpus):
    again = build_shape_corpus(9, ShapeCorpusConfig(n_lang=80, n_val=40,
                                                    n_test=40))
    for a, b in zip(small_corpus, again):
        assert a.task_id == b.task_id
        assert a.info["label"] == b.info["label"]
        assert [s.key() for s in a.examples] == [s.key() for s in b.examples]
        assert a.info["query"].key() == b.info["query"].key()


def test_scene_serialization_round_trip(small_corpus):
    t = small_corpus[0]
    for scene in list(t.examples) + [t.info["query"]]:
        rec = scene_to_record(scene)
        back = scene_from_record(rec)
        assert back.key() == scene.key()
        assert np.array_equal(back.raster, scene.raster)
    c = concept_from_record(t.info["concept"])
    assert concept_from_record(concept_to_record(c)) == c


# ---------------------------------------------------------------------------
# raster and model


def test_raster_deterministic_and_binary(small_corpus):
    s = small_corpus[0].examples[0]
    r1 = s.raster
    r2 = Scene(s.entities).raster
    assert np.array_equal(r1, r2)
    assert r1.shape == (32, 32, 8)
    assert set(np.unique(r1)) <= {0, 1}
    # each entity paints only its color channel
    used = {e.color for e in s.entities}
    for ch in range(8):
        assert (r1[:, :, ch].any()) == (ch in used)


def test_rep_deterministic_and_finite_on_empty():
    adapter = ShapesAdapter(hidden=8, emb=4, conv1=2, conv2=3, fc=8)
    store = ParameterStore(RNG(0))
    adapter.init_rep(store)
    tensors = store.tensors()
    zero = np.zeros((2, 32, 32, 8))
    rep = adapter._rep(tensors, zero).data
    assert np.all(np.isfinite(rep))
    assert np.allclose(rep[0], rep[1])


def test_rep_gradient_matches_finite_differences():
    adapter = ShapesAdapter(hidden=4, emb=3, conv1=2, conv2=2, fc=6)
    store = ParameterStore(RNG(4))
    adapter.init_rep(store)
    raster = (RNG(5).random((2, 32, 32, 8)) < 0.1).astype(np.float64)

    def fn(tensors):
        return ad.tsum(ad.tanh(adapter._rep(tensors, raster)))

    tensors = store.tensors()
    with ad.recording() as tape:
        loss = fn(tensors)
        names = list(store.arrays)
        grads = ad.grad(loss, [tensors[n] for n in names], tape)
    fd = fd_grad(lambda params: fn({k: ad.Tensor(v) for k, v in params.items()})
                 .data.item(), store.arrays)
    assert max_rel_err(dict(zip(names, grads)), fd) < 1e-4


def test_score_is_half_for_zero_parameters(small_corpus):
    adapter = ShapesAdapter(hidden=8, emb=4, conv1=2, conv2=3, fc=8)
    store = ParameterStore(RNG(0))
    adapter.init_rep(store)
    adapter.init_desc_encoder(store)
    for name in store.arrays:
        if name.startswith("fc2"):
            store.arrays[name][:] = 0.0
    t = small_corpus[0]
    tokens = adapter.encode_annotation(t.oracle_annotation())
    assert adapter.score(store, tokens, t.examples[0]) == pytest.approx(0.5)


def test_proposal_context_permutation_invariant(small_corpus):
    from latentlang.protocol import ModelBundle
    adapter = ShapesAdapter(hidden=8, emb=4, conv1=2, conv2=3, fc=8)
    store = ParameterStore(RNG(2))
    adapter.init_proposal(store)
    bundle = ModelBundle("x", ParameterStore(RNG(0)), store)
    t = small_corpus[0]
    ctx1 = adapter.proposal_context_np(bundle, t.examples)
    ctx2 = adapter.proposal_context_np(bundle, t.examples[::-1])
    assert np.allclose(ctx1, ctx2)


def test_batch_layout(small_corpus):
    adapter = ShapesAdapter(hidden=8, emb=4, conv1=2, conv2=3, fc=8)
    lang = [t for t in small_corpus if t.split == LANG]
    stream = adapter.interp_batches(lang, None, RNG(0),
                                    TrainConfig(batch_tasks=4))
    b = next(stream)
    assert b["_n"] == 20 and b["raster"].shape == (20, 32, 32, 8)
    assert b["labels"].shape == (20,)
    # rows are task blocks of 4 positives then the query
    assert np.all(b["labels"].reshape(4, 5)[:, :4] == 1)
    assert np.allclose(b["pos_mean"].sum(axis=1), 1.0)
    # the context never averages over a query row
    q_cols = np.arange(4, 20, 5)
    assert np.all(b["pos_mean"][:, q_cols] == 0.0)
    assert np.all(b["task_pos_mean"][:, q_cols] == 0.0)
    assert b["desc_dec"].shape[0] == 4


def test_annotation_tokens_in_vocab(small_corpus):
    adapter = ShapesAdapter(hidden=8, emb=4, conv1=2, conv2=3, fc=8)
    from latentlang.seq import UNK
    for t in small_corpus:
        ids = adapter.encode_annotation(t.oracle_annotation())
        assert UNK not in ids
