"""Scenes, spatial concepts, and captions for the visual domain.

A scene is 4 or 5 non-overlapping colored shapes in the unit square,
rasterized to a 32x32 grid with one binary channel per color (shape
identity is carried by the footprint geometry). A concept is an
existential claim: some entity matching the subject attributes stands
in a directional relation to some entity matching the object
attributes. Captions render concepts through a fixed template grammar
and parse back to exactly the generating concept.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np

from ..errors import ContractError, GenerationError
from ..protocol import LANG, TEST, VAL, TaskDataset
from ..seeding import derive_rng

__all__ = [
    "SHAPES", "COLORS", "RELATIONS", "MARGIN", "RASTER_SIZE", "Entity",
    "Scene", "AttrSpec", "SpatialConcept", "caption_words", "sample_concept",
    "render_caption", "parse_caption", "eval_concept", "generate_scene",
    "ShapeCorpusConfig", "build_shape_corpus", "scene_to_record",
    "scene_from_record", "concept_to_record", "concept_from_record",
]

SHAPES = ("circle", "square", "triangle", "diamond",
          "plus", "cross", "ring", "bar")
COLORS = ("red", "green", "blue", "yellow",
          "purple", "orange", "cyan", "pink")
RELATIONS = ("left-of", "right-of", "above", "below")
MARGIN = 0.05  # relations compare centers; ties within the margin fail
RASTER_SIZE = 32
MIN_RADIUS, MAX_RADIUS = 0.11, 0.17

_REL_WORDS = {"left-of": ("to", "the", "left", "of"),
              "right-of": ("to", "the", "right", "of"),
              "above": ("above",), "below": ("below",)}
_REL_OF_WORDS = {words: rel for rel, words in _REL_WORDS.items()}


@dataclass(frozen=True)
class Entity:
    shape: int
    color: int
    row: float
    col: float
    radius: float

    def __post_init__(self):
        if not (0 <= self.shape < len(SHAPES)):
            raise ContractError(f"shape index {self.shape} out of range")
        if not (0 <= self.color < len(COLORS)):
            raise ContractError(f"color index {self.color} out of range")
        if self.radius <= 0:
            raise ContractError("radius must be positive")
        if not (self.radius <= self.row <= 1 - self.radius
                and self.radius <= self.col <= 1 - self.radius):
            raise ContractError("entity must lie fully inside the unit square")


class Scene:
    """4 or 5 entities whose footprints never touch."""

    __slots__ = ("entities", "__dict__")

    def __init__(self, entities: tuple[Entity, ...]):
        entities = tuple(entities)
        if not 4 <= len(entities) <= 5:
            raise ContractError("a scene holds 4 or 5 entities")
        for i, a in enumerate(entities):
            for b in entities[i + 1:]:
                d = np.hypot(a.row - b.row, a.col - b.col)
                if d <= a.radius + b.radius:
                    raise ContractError("entities overlap")
        self.entities = entities

    @cached_property
    def raster(self) -> np.ndarray:
        """(RASTER_SIZE, RASTER_SIZE, 8) uint8 color-channel occupancy."""
        grid = (np.arange(RASTER_SIZE) + 0.5) / RASTER_SIZE
        pr = grid[:, None]
        pc = grid[None, :]
        out = np.zeros((RASTER_SIZE, RASTER_SIZE, len(COLORS)), dtype=np.uint8)
        for e in self.entities:
            u = (pr - e.row) / e.radius
            v = (pc - e.col) / e.radius
            out[:, :, e.color] |= _shape_mask(SHAPES[e.shape], u, v)
        return out

    def key(self) -> tuple:
        """Hashable identity used for cross-split disjointness audits."""
        return tuple((e.shape, e.color, round(e.row, 9), round(e.col, 9),
                      round(e.radius, 9)) for e in self.entities)


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    box = np.maximum(np.abs(u), np.abs(v)) <= 1.0
    if kind == "circle":
        m = u * u + v * v <= 1.0
    elif kind == "square":
        m = np.maximum(np.abs(u), np.abs(v)) <= 0.8
    elif kind == "triangle":
        m = (np.abs(v) <= (u + 1.0) / 2.0) & (np.abs(u) <= 1.0)
    elif kind == "diamond":
        m = np.abs(u) + np.abs(v) <= 1.0
    elif kind == "plus":
        m = box & ((np.abs(u) <= 0.35) | (np.abs(v) <= 0.35))
    elif kind == "cross":
        m = box & ((np.abs(u - v) <= 0.4) | (np.abs(u + v) <= 0.4))
    elif kind == "ring":
        d2 = u * u + v * v
        m = (d2 <= 1.0) & (d2 >= 0.45)
    elif kind == "bar":
        m = (np.abs(u) <= 0.35) & (np.abs(v) <= 1.0)
    else:
        raise ContractError(f"unknown shape kind {kind!r}")
    return m.astype(np.uint8)


@dataclass(frozen=True)
class AttrSpec:
    """Optional color and/or shape; at least one must be set."""
    color: int | None
    shape: int | None

    def __post_init__(self):
        if self.color is None and self.shape is None:
            raise ContractError("attribute spec needs a color or a shape")

    def matches(self, e: Entity) -> bool:
        return ((self.color is None or e.color == self.color)
                and (self.shape is None or e.shape == self.shape))


@dataclass(frozen=True)
class SpatialConcept:
    relation: str
    subject: AttrSpec
    object: AttrSpec

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ContractError(f"unknown relation {self.relation!r}")


def _relation_holds(rel: str, s: Entity, o: Entity) -> bool:
    if rel == "left-of":
        return s.col <= o.col - MARGIN
    if rel == "right-of":
        return s.col >= o.col + MARGIN
    if rel == "above":
        return s.row <= o.row - MARGIN
    return s.row >= o.row + MARGIN


def eval_concept(concept: SpatialConcept, scene: Scene) -> bool:
    """Existential semantics over ordered pairs of distinct entities."""
    for s in scene.entities:
        if not concept.subject.matches(s):
            continue
        for o in scene.entities:
            if o is s or not concept.object.matches(o):
                continue
            if _relation_holds(concept.relation, s, o):
                return True
    return False


# ---------------------------------------------------------------------------
# captions


def caption_words() -> list[str]:
    fixed = ["a", "is", "to", "the", "left", "right", "of",
             "above", "below", "shape", "."]
    return list(COLORS) + list(SHAPES) + fixed


def _spec_words(spec: AttrSpec) -> list[str]:
    if spec.color is not None and spec.shape is not None:
        return [COLORS[spec.color], SHAPES[spec.shape]]
    if spec.color is not None:
        return [COLORS[spec.color], "shape"]
    return [SHAPES[spec.shape]]


def render_caption(concept: SpatialConcept) -> list[str]:
    return (["a"] + _spec_words(concept.subject) + ["is"]
            + list(_REL_WORDS[concept.relation])
            + ["a"] + _spec_words(concept.object) + ["."])


def _parse_spec(words: list[str]) -> AttrSpec | None:
    if len(words) == 1 and words[0] in SHAPES:
        return AttrSpec(color=None, shape=SHAPES.index(words[0]))
    if len(words) == 2 and words[0] in COLORS:
        if words[1] == "shape":
            return AttrSpec(color=COLORS.index(words[0]), shape=None)
        if words[1] in SHAPES:
            return AttrSpec(color=COLORS.index(words[0]),
                            shape=SHAPES.index(words[1]))
    return None


def parse_caption(tokens: list[str]) -> SpatialConcept | None:
    """Template inverse; None when the tokens fit no template."""
    toks = list(tokens)
    if toks and toks[-1] == ".":
        toks = toks[:-1]
    if len(toks) < 5 or toks[0] != "a" or "is" not in toks:
        return None
    i = toks.index("is")
    subj = _parse_spec(toks[1:i])
    rest = toks[i + 1:]
    rel = None
    for words, r in _REL_OF_WORDS.items():
        n = len(words)
        if tuple(rest[:n]) == words and len(rest) > n and rest[n] == "a":
            rel, rest = r, rest[n + 1:]
            break
    if subj is None or rel is None:
        return None
    obj = _parse_spec(rest)
    if obj is None:
        return None
    return SpatialConcept(relation=rel, subject=subj, object=obj)


def _sample_spec(rng: np.random.Generator) -> AttrSpec:
    kind = int(rng.integers(3))
    if kind == 0:
        return AttrSpec(color=int(rng.integers(8)), shape=int(rng.integers(8)))
    if kind == 1:
        return AttrSpec(color=int(rng.integers(8)), shape=None)
    return AttrSpec(color=None, shape=int(rng.integers(8)))


def sample_concept(rng: np.random.Generator) -> tuple[SpatialConcept, list[str]]:
    c = SpatialConcept(relation=RELATIONS[int(rng.integers(4))],
                       subject=_sample_spec(rng), object=_sample_spec(rng))
    return c, render_caption(c)


# ---------------------------------------------------------------------------
# scene generation


def _random_entity(rng: np.random.Generator, shape: int | None = None,
                   color: int | None = None) -> Entity:
    r = float(rng.uniform(MIN_RADIUS, MAX_RADIUS))
    return Entity(
        shape=int(rng.integers(8)) if shape is None else shape,
        color=int(rng.integers(8)) if color is None else color,
        row=float(rng.uniform(r, 1 - r)), col=float(rng.uniform(r, 1 - r)),
        radius=r)


def _entity_for(rng: np.random.Generator, spec: AttrSpec) -> Entity:
    return _random_entity(rng, shape=spec.shape, color=spec.color)


def _try_scene(entities: list[Entity]) -> Scene | None:
    try:
        return Scene(tuple(entities))
    except ContractError:
        return None


def generate_scene(rng: np.random.Generator, concept: SpatialConcept,
                   positive: bool, budget: int = 10_000) -> Scene:
    """Rejection-sample a scene whose truth value matches `positive`.

    Positive scenes place one subject and one object entity plus 2-3
    distractors matching neither spec. Negative scenes alternate between
    fully random entity sets and near misses that contain both
    participants in a non-satisfying arrangement.
    """
    for attempt in range(budget):
        n_distract = int(rng.integers(2, 4))
        if positive:
            s = _entity_for(rng, concept.subject)
            o = _entity_for(rng, concept.object)
            if not _relation_holds(concept.relation, s, o):
                continue
            ents = [s, o]
            ok = True
            for _ in range(n_distract):
                d = _random_entity(rng)
                if concept.subject.matches(d) or concept.object.matches(d):
                    ok = False
                    break
                ents.append(d)
            if not ok:
                continue
        elif attempt % 2 == 0:
            ents = [_random_entity(rng) for _ in range(2 + n_distract)]
        else:
            ents = [_entity_for(rng, concept.subject),
                    _entity_for(rng, concept.object)]
            ents += [_random_entity(rng) for _ in range(n_distract)]
        scene = _try_scene(ents)
        if scene is None:
            continue
        if eval_concept(concept, scene) == positive:
            return scene
    raise GenerationError(
        f"no {'positive' if positive else 'negative'} scene for {concept} "
        f"within {budget} attempts")


# ---------------------------------------------------------------------------
# corpus


@dataclass
class ShapeCorpusConfig:
    n_lang: int = 2000
    n_val: int = 200
    n_test: int = 200
    shared_concept_fraction: float = 0.5
    scene_budget: int = 10_000


def _concept_key(c: SpatialConcept) -> tuple:
    return (c.relation, c.subject.color, c.subject.shape,
            c.object.color, c.object.shape)


def build_shape_corpus(seed: int, cfg: ShapeCorpusConfig) -> list[TaskDataset]:
    """Three splits of 4-positives-plus-query tasks; deterministic per seed.

    Query labels are balanced exactly within each split. Half the
    validation/test tasks reuse language-learning concepts with fresh
    scenes; the other half use concepts never seen in language learning.
    """
    tasks: list[TaskDataset] = []
    lang_concepts: list[SpatialConcept] = []
    lang_keys: set[tuple] = set()
    seen_scenes: set[tuple] = set()

    def emit(split: str, count: int, split_name: str) -> None:
        rng = derive_rng(seed, f"shapes-{split_name}")
        labels = np.zeros(count, dtype=bool)
        labels[:count // 2] = True
        rng.shuffle(labels)
        shared = np.zeros(count, dtype=bool)
        if split != LANG and lang_concepts:
            shared[:round(cfg.shared_concept_fraction * count)] = True
            rng.shuffle(shared)
        for i in range(count):
            if shared[i]:
                concept = lang_concepts[int(rng.integers(len(lang_concepts)))]
                caption = render_caption(concept)
            else:
                for _ in range(500):
                    concept, caption = sample_concept(rng)
                    if split == LANG or _concept_key(concept) not in lang_keys:
                        break
                else:
                    raise GenerationError("could not draw an unseen concept")
            scenes = []
            while len(scenes) < 4:
                sc = generate_scene(rng, concept, True, cfg.scene_budget)
                if sc.key() not in seen_scenes:
                    seen_scenes.add(sc.key())
                    scenes.append(sc)
            while True:
                query = generate_scene(rng, concept, bool(labels[i]),
                                       cfg.scene_budget)
                if query.key() not in seen_scenes:
                    seen_scenes.add(query.key())
                    break
            if split == LANG:
                lang_concepts.append(concept)
                lang_keys.add(_concept_key(concept))
            tasks.append(TaskDataset(
                task_id=f"shp-{split_name}-{i}",
                examples=scenes,
                split=split,
                annotation=caption,
                info={"concept": concept_to_record(concept),
                      "query": query,
                      "label": int(labels[i]),
                      "novel_concept": (split != LANG and not shared[i])}))

    emit(LANG, cfg.n_lang, "lang")
    emit(VAL, cfg.n_val, "val")
    emit(TEST, cfg.n_test, "test")
    return tasks


# ---------------------------------------------------------------------------
# serialization (rasters are derived at load time, never stored)


def scene_to_record(scene: Scene) -> list[list]:
    return [[e.shape, e.color, e.row, e.col, e.radius]
            for e in scene.entities]


def scene_from_record(rec: list[list]) -> Scene:
    return Scene(tuple(Entity(int(s), int(c), float(r), float(col), float(rad))
                       for s, c, r, col, rad in rec))


def concept_to_record(c: SpatialConcept) -> dict:
    return {"relation": c.relation,
            "subject": [c.subject.color, c.subject.shape],
            "object": [c.object.color, c.object.shape]}


def concept_from_record(rec: dict) -> SpatialConcept:
    def spec(pair):
        return AttrSpec(color=None if pair[0] is None else int(pair[0]),
                        shape=None if pair[1] is None else int(pair[1]))
    return SpatialConcept(relation=rec["relation"],
                          subject=spec(rec["subject"]),
                          object=spec(rec["object"]))
