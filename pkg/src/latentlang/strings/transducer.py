"""String-rewriting rules: a small transducer DSL and its executor.

A rule selects character positions by class (a literal letter, vowel,
consonant, or any letter), restricts them by scope (first/last/every
match, or the word-initial/word-final position), and applies an edit
(replace, delete, insert-after, duplicate). Words with no selected
position pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError

__all__ = [
    "SCOPES", "TARGET_KINDS", "ACTIONS", "VOWELS", "CONSONANTS",
    "Transducer", "sample_transducer", "apply_transducer",
    "to_formal_tokens", "parse_formal_tokens",
]

SCOPES = ("first", "last", "every", "initial", "final")
TARGET_KINDS = ("literal", "vowel", "consonant", "any")
ACTIONS = ("replace", "delete", "insert_after", "duplicate")

VOWELS = frozenset("aeiou")
CONSONANTS = frozenset("bcdfghjklmnpqrstvwxyz")
ALPHABET = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class Transducer:
    scope: str
    target_kind: str
    target_char: str | None  # single letter when target_kind == "literal"
    action: str
    replacement: str | None  # 1-2 letters for replace / insert_after

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ContractError(f"bad scope {self.scope!r}")
        if self.target_kind not in TARGET_KINDS:
            raise ContractError(f"bad target kind {self.target_kind!r}")
        if self.action not in ACTIONS:
            raise ContractError(f"bad action {self.action!r}")
        if (self.target_kind == "literal") != (self.target_char is not None):
            raise ContractError("literal targets need exactly one target char")
        if self.target_char is not None and (
                len(self.target_char) != 1 or self.target_char not in ALPHABET):
            raise ContractError("literal target must be one lowercase letter")
        needs_repl = self.action in ("replace", "insert_after")
        if needs_repl != (self.replacement is not None):
            raise ContractError(f"action {self.action} replacement mismatch")
        if self.replacement is not None and not (
                1 <= len(self.replacement) <= 2
                and all(c in ALPHABET for c in self.replacement)):
            raise ContractError("replacement must be 1-2 lowercase letters")
        if self.action == "replace" and self.target_kind == "literal" \
                and self.replacement == self.target_char:
            raise ContractError("replacing a letter with itself is a no-op")

    def char_matches(self, c: str) -> bool:
        if self.target_kind == "literal":
            return c == self.target_char
        if self.target_kind == "vowel":
            return c in VOWELS
        if self.target_kind == "consonant":
            return c in CONSONANTS
        return True  # any


def sample_transducer(rng: np.random.Generator) -> Transducer:
    """Uniform draw over the grammar, rejecting no-op combinations."""
    while True:
        scope = SCOPES[rng.integers(len(SCOPES))]
        kind = TARGET_KINDS[rng.integers(len(TARGET_KINDS))]
        char = ALPHABET[rng.integers(26)] if kind == "literal" else None
        action = ACTIONS[rng.integers(len(ACTIONS))]
        repl = None
        if action in ("replace", "insert_after"):
            n = int(rng.integers(1, 3))
            repl = "".join(ALPHABET[rng.integers(26)] for _ in range(n))
        if action == "replace" and kind == "literal" and repl == char:
            continue  # replace c with c rewrites nothing
        return Transducer(scope, kind, char, action, repl)


def _selected_positions(t: Transducer, word: str) -> list[int]:
    matches = [i for i, c in enumerate(word) if t.char_matches(c)]
    if not matches:
        return []
    if t.scope == "every":
        return matches
    if t.scope == "first":
        return [matches[0]]
    if t.scope == "last":
        return [matches[-1]]
    if t.scope == "initial":
        return [0] if matches[0] == 0 else []
    return [len(word) - 1] if matches[-1] == len(word) - 1 else []


def apply_transducer(t: Transducer, word: str) -> str:
    """Deterministic rule application; no selected position -> unchanged."""
    if not word or any(c not in ALPHABET for c in word):
        raise ContractError(f"word must be non-empty lowercase a-z: {word!r}")
    selected = set(_selected_positions(t, word))
    if not selected:
        return word
    out: list[str] = []
    for i, c in enumerate(word):
        if i not in selected:
            out.append(c)
        elif t.action == "replace":
            out.append(t.replacement)
        elif t.action == "delete":
            pass
        elif t.action == "insert_after":
            out.append(c + t.replacement)
        else:  # duplicate
            out.append(c + c)
    return "".join(out)


# ---------------------------------------------------------------------------
# canonical "formal" serialization: <scope> <target> <action> [repl chars]


def to_formal_tokens(t: Transducer) -> list[str]:
    target = t.target_char if t.target_kind == "literal" else t.target_kind
    action = "insert" if t.action == "insert_after" else t.action
    toks = [t.scope, target, action]
    if t.replacement is not None:
        toks.extend(t.replacement)
    return toks


def parse_formal_tokens(tokens: list[str]) -> Transducer | None:
    """Inverse of to_formal_tokens; None when the tokens are not a program."""
    if len(tokens) < 3:
        return None
    scope, target, action = tokens[0], tokens[1], tokens[2]
    rest = tokens[3:]
    if scope not in SCOPES:
        return None
    if target in ("vowel", "consonant", "any"):
        kind, char = target, None
    elif len(target) == 1 and target in ALPHABET:
        kind, char = "literal", target
    else:
        return None
    if action == "insert":
        action = "insert_after"
    if action not in ACTIONS:
        return None
    repl = None
    if action in ("replace", "insert_after"):
        if not (1 <= len(rest) <= 2 and
                all(len(c) == 1 and c in ALPHABET for c in rest)):
            return None
        repl = "".join(rest)
    elif rest:
        return None
    if action == "replace" and kind == "literal" and repl == char:
        return None  # no-op programs are outside the grammar
    return Transducer(scope, kind, char, action, repl)
