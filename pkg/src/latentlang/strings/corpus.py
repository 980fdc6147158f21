"""String-task corpora: word pools, task construction, augmentation.

Tasks pair a hidden transducer with 5 demonstration pairs and one query.
A running controller steers the fraction of identity queries (query
output == query input) toward a configured target, mirroring the
pass-through rate of the reference corpus.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ContractError, GenerationError
from ..protocol import LANG, TEST, VAL, TaskDataset
from ..seeding import derive_rng
from .describe import render_description, sample_style
from .transducer import (ALPHABET, Transducer, apply_transducer,
                         parse_formal_tokens, sample_transducer,
                         to_formal_tokens)

__all__ = ["generate_wordlist", "load_bundled_wordlist", "WordPools",
           "StringCorpusConfig", "build_string_corpus", "augment",
           "identity_fraction", "make_string_task"]

_ONSETS = ("b c d f g h j k l m n p qu r s t v w y z "
           "br ch cl cr dr fl fr gl gr pl pr sh sk sl sm sn sp st sw th tr").split()
_VOWELS = "a e i o u ai ea ee io ou".split()
_CODAS = ["", "", "", "n", "r", "s", "t", "l", "m", "d", "k", "x", "p",
          "b", "c", "f", "g", "h", "ng", "st", "nd", "ch"]


def generate_wordlist(n: int = 12000, seed: int = 604530) -> list[str]:
    """Deterministic pronounceable pseudo-words, lowercase a-z, 4-7 chars.

    A quarter of words start with a bare vowel and codas span most
    consonants, so positional rule families keep non-empty word pools.
    The length cap keeps exact sequence decoding learnable for an
    encoder-decoder that compresses the input into one fixed vector.
    """
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        syllables = int(rng.integers(2, 4))
        w = ""
        for s in range(syllables):
            if s > 0 or rng.random() >= 0.25:
                w += _ONSETS[rng.integers(len(_ONSETS))]
            w += _VOWELS[rng.integers(len(_VOWELS))]
            if s == syllables - 1 or rng.random() < 0.15:
                w += _CODAS[rng.integers(len(_CODAS))]
        if 4 <= len(w) <= 7 and w not in seen:
            seen.add(w)
            out.append(w)
    return out


def load_bundled_wordlist() -> list[str]:
    ref = importlib.resources.files("latentlang").joinpath("data/wordlist.txt")
    return ref.read_text(encoding="utf-8").split()


class WordPools:
    """Vectorized per-(scope, target) masks of words with a selected match."""

    def __init__(self, words: list[str]):
        if any((not w) or any(c not in ALPHABET for c in w) for w in words):
            raise ContractError("wordlist must be non-empty lowercase a-z words")
        if len(set(words)) != len(words):
            raise ContractError("wordlist contains duplicates")
        self.words = list(words)
        n = len(words)
        self._contains = np.zeros((26, n), dtype=bool)
        self._starts = np.zeros((26, n), dtype=bool)
        self._ends = np.zeros((26, n), dtype=bool)
        for i, w in enumerate(words):
            for c in set(w):
                self._contains[ord(c) - 97, i] = True
            self._starts[ord(w[0]) - 97, i] = True
            self._ends[ord(w[-1]) - 97, i] = True
        self._mask_cache: dict[tuple, np.ndarray] = {}

    def _letters(self, t: Transducer) -> list[int]:
        if t.target_kind == "literal":
            return [ord(t.target_char) - 97]
        if t.target_kind == "vowel":
            return [ord(c) - 97 for c in "aeiou"]
        if t.target_kind == "consonant":
            return [i for i in range(26) if chr(97 + i) not in "aeiou"]
        return list(range(26))

    def match_mask(self, t: Transducer) -> np.ndarray:
        """True where the rule selects at least one position in the word."""
        key = (t.scope, t.target_kind, t.target_char)
        hit = self._mask_cache.get(key)
        if hit is None:
            table = {"initial": self._starts, "final": self._ends}.get(
                t.scope, self._contains)
            hit = table[self._letters(t)].any(axis=0)
            self._mask_cache[key] = hit
        return hit

    def draw_changing(self, t: Transducer, rng: np.random.Generator,
                      exclude: set[int], budget: int = 200) -> int | None:
        """Index of a word the rule rewrites; rejection-sampled from the
        match pool (a match can be a no-op when a class target is
        replaced by the same single letter)."""
        pool = np.flatnonzero(self.match_mask(t))
        if len(pool) == 0:
            return None
        for _ in range(budget):
            i = int(pool[rng.integers(len(pool))])
            if i in exclude:
                continue
            if apply_transducer(t, self.words[i]) != self.words[i]:
                return i
        return None

    def draw_passthrough(self, t: Transducer, rng: np.random.Generator,
                         exclude: set[int]) -> int | None:
        """Index of a word the rule leaves unchanged (no selected match)."""
        pool = np.flatnonzero(~self.match_mask(t))
        for _ in range(50):
            if len(pool) == 0:
                return None
            i = int(pool[rng.integers(len(pool))])
            if i not in exclude:
                return i
        return None


@dataclass
class StringCorpusConfig:
    n_lang: int = 1000
    n_val: int = 200
    n_test: int = 200
    annotation_mode: str = "natural"  # or "formal"
    identity_target: float = 0.18
    min_wordlist: int = 10_000
    allow_small_wordlist: bool = False
    shared_rule_fraction: float = 0.5  # val/test half reusing training rules


def make_string_task(rng: np.random.Generator, t: Transducer, pools: WordPools,
                     want_identity: bool, budget: int = 200) -> dict | None:
    """5 demonstrations (>= 1 changing) plus a query; None if infeasible."""
    all_n = len(pools.words)
    demos: list[tuple[str, str]] = []
    used: set[int] = set()
    for j in range(5):
        # demonstrations mostly exercise the rule; occasional
        # pass-through pairs mirror natural no-match examples
        if j == 0 or rng.random() < 0.85:
            i = pools.draw_changing(t, rng, used, budget)
        else:
            i = None
            for _ in range(budget):
                cand = int(rng.integers(all_n))
                if cand not in used:
                    i = cand
                    break
        if i is None:
            return None
        used.add(i)
        w = pools.words[i]
        demos.append((w, apply_transducer(t, w)))
    if all(x == y for x, y in demos):
        return None
    query = None
    if want_identity:
        qi = pools.draw_passthrough(t, rng, used)
        if qi is not None:
            query = pools.words[qi]
    if query is None:
        qi = pools.draw_changing(t, rng, used, budget)
        if qi is None:
            return None
        query = pools.words[qi]
    return {"demos": demos, "query_in": query,
            "query_out": apply_transducer(t, query)}


def _rule_key(t: Transducer) -> tuple:
    return (t.scope, t.target_kind, t.target_char, t.action, t.replacement)


def _annotation(t: Transducer, mode: str, style) -> list[str]:
    if mode == "formal":
        return to_formal_tokens(t)
    return render_description(t, style)


def build_string_corpus(seed: int, wordlist: list[str],
                        cfg: StringCorpusConfig) -> list[TaskDataset]:
    """Full corpus across the three splits; deterministic per seed."""
    if len(wordlist) < cfg.min_wordlist and not cfg.allow_small_wordlist:
        raise ContractError(
            f"wordlist has {len(wordlist)} entries; need >= {cfg.min_wordlist}")
    if cfg.annotation_mode not in ("natural", "formal"):
        raise ContractError(f"bad annotation mode {cfg.annotation_mode!r}")
    pools = WordPools(wordlist)
    tasks: list[TaskDataset] = []
    lang_rules: list[Transducer] = []
    lang_rule_keys: set[tuple] = set()

    def emit(split: str, count: int, split_name: str) -> None:
        rng = derive_rng(seed, f"strings-{split_name}")
        # fixed shared/novel assignment per slot so retries cannot skew
        # the split away from the configured fraction
        shared_slots = np.zeros(count, dtype=bool)
        if split != LANG and lang_rules:
            shared_slots[:round(cfg.shared_rule_fraction * count)] = True
            rng.shuffle(shared_slots)
        identity_count = 0
        for i in range(count):
            made = None
            want_identity = identity_count < cfg.identity_target * (i + 1)
            for attempt in range(500):
                novel = not shared_slots[i]
                if shared_slots[i]:
                    t = lang_rules[int(rng.integers(len(lang_rules)))]
                else:
                    t = sample_transducer(rng)
                    if split != LANG and _rule_key(t) in lang_rule_keys:
                        continue  # the novel half must avoid training rules
                made = make_string_task(rng, t, pools, want_identity)
                if made is not None:
                    break
            if made is None:
                raise GenerationError(
                    f"could not build a string task for split {split_name}")
            if made["query_out"] == made["query_in"]:
                identity_count += 1
            style = sample_style(rng)
            ann = _annotation(t, cfg.annotation_mode, style)
            if split == LANG:
                lang_rules.append(t)
                lang_rule_keys.add(_rule_key(t))
            tasks.append(TaskDataset(
                task_id=f"str-{split_name}-{i}",
                examples=list(made["demos"]),
                split=split,
                annotation=ann,
                info={"rule": " ".join(to_formal_tokens(t)),
                      "style": list(style),
                      "novel_rule": bool(novel) if split != LANG else False,
                      "query_in": made["query_in"],
                      "query_out": made["query_out"]}))

    emit(LANG, cfg.n_lang, "lang")
    emit(VAL, cfg.n_val, "val")
    emit(TEST, cfg.n_test, "test")
    return tasks


def augment(tasks: list[TaskDataset], factor: int, seed: int,
            wordlist: list[str],
            annotation_mode: str = "natural") -> list[TaskDataset]:
    """Grow the training set exactly `factor`-fold by re-specializing
    literal characters and regenerating consistent demonstrations."""
    if factor < 1:
        raise ContractError("augmentation factor must be >= 1")
    pools = WordPools(wordlist)
    out = list(tasks)
    rng = derive_rng(seed, "augment")
    for task in tasks:
        base = parse_formal_tokens(task.info["rule"].split())
        style = tuple(task.info.get("style", (0, 0, 0)))
        made_variants = 0
        attempts = 0
        while made_variants < factor - 1:
            attempts += 1
            if attempts > 2000:
                raise GenerationError(f"augment stuck on task {task.task_id}")
            var = _respecialize(base, rng)
            made = make_string_task(rng, var, pools,
                                    want_identity=rng.random() < 0.15)
            if made is None:
                continue
            made_variants += 1
            out.append(TaskDataset(
                task_id=f"{task.task_id}-aug{made_variants}",
                examples=list(made["demos"]),
                split=LANG,
                annotation=_annotation(var, annotation_mode, style),
                info={"rule": " ".join(to_formal_tokens(var)),
                      "style": list(style),
                      "novel_rule": False,
                      "query_in": made["query_in"],
                      "query_out": made["query_out"]}))
    return out


def _respecialize(t: Transducer, rng: np.random.Generator) -> Transducer:
    """Fresh literals in place of the rule's character slots.  Rules with
    no character slots come back unchanged; their variants differ only in
    the regenerated demonstration words."""
    if t.target_char is None and t.replacement is None:
        return t
    for _ in range(100):
        char = t.target_char
        if char is not None:
            others = [c for c in ALPHABET if c != char]
            char = others[int(rng.integers(len(others)))]
        repl = t.replacement
        if repl is not None:
            repl = "".join(ALPHABET[rng.integers(26)] for _ in repl)
        if t.action == "replace" and t.target_kind == "literal" and repl == char:
            continue
        if (char, repl) != (t.target_char, t.replacement):
            return Transducer(t.scope, t.target_kind, char, t.action, repl)
    raise GenerationError("could not re-specialize rule literals")


def identity_fraction(tasks: list[TaskDataset], split: str | None = None) -> float:
    picked = [t for t in tasks if split is None or t.split == split]
    if not picked:
        raise ContractError("no tasks in the requested split")
    hits = sum(1 for t in picked if t.info["query_in"] == t.info["query_out"])
    return hits / len(picked)
