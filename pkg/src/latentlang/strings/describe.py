"""Natural-language descriptions of transducers, and their inverse.

Each action family has three paraphrase templates and each scope two
surface variants, so one rule admits several surface forms. Character
literals appear as single tokens. Every rendered description parses
back to exactly the generating rule.
"""

from __future__ import annotations

import numpy as np

from .transducer import ACTIONS, ALPHABET, SCOPES, Transducer

__all__ = ["describe_transducer", "render_description", "sample_style",
           "parse_description", "description_vocab_tokens"]

_SCOPE_SURFACES: dict[str, tuple[tuple[str, ...], ...]] = {
    "first": (("first",), ("the", "first")),
    "last": (("last",), ("the", "last")),
    "every": (("every",), ("all",)),
    "initial": (("leading",), ("the", "leading")),
    "final": (("final",), ("the", "ending")),
}

_SCOPE_OF_SURFACE = {surf: scope for scope, surfs in _SCOPE_SURFACES.items()
                     for surf in surfs}

_ANY_SURFACES = ("letter", "character")


def _target_surface(t: Transducer, pick: int) -> str:
    if t.target_kind == "literal":
        return t.target_char
    if t.target_kind == "any":
        return _ANY_SURFACES[pick % 2]
    return t.target_kind


def _parse_target(token: str) -> tuple[str, str | None] | None:
    if token in ("vowel", "consonant"):
        return token, None
    if token in _ANY_SURFACES:
        return "any", None
    if len(token) == 1 and token in ALPHABET:
        return "literal", token
    return None


def sample_style(rng: np.random.Generator) -> tuple[int, int, int]:
    """(template, scope surface, target surface) picks, reusable across rules."""
    return (int(rng.integers(3)), int(rng.integers(2)), int(rng.integers(2)))


def describe_transducer(t: Transducer, style_rng: np.random.Generator) -> list[str]:
    """One sampled surface form (list of word tokens)."""
    return render_description(t, sample_style(style_rng))


def render_description(t: Transducer, style: tuple[int, int, int]) -> list[str]:
    """Deterministic surface form for a fixed style triple."""
    template, scope_pick, target_pick = style
    surfs = _SCOPE_SURFACES[t.scope]
    s = list(surfs[scope_pick % len(surfs)])
    tgt = [_target_surface(t, target_pick)]
    r = list(t.replacement) if t.replacement else []
    if t.action == "replace":
        forms = [["replace"] + s + tgt + ["with"] + r,
                 ["change"] + s + tgt + ["to"] + r,
                 s + tgt + ["is", "replaced", "with"] + r]
    elif t.action == "delete":
        forms = [["delete"] + s + tgt,
                 ["remove"] + s + tgt,
                 s + tgt + ["is", "dropped"]]
    elif t.action == "insert_after":
        forms = [["insert"] + r + ["after"] + s + tgt,
                 ["add"] + r + ["after"] + s + tgt,
                 r + ["is", "inserted", "after"] + s + tgt]
    else:  # duplicate
        forms = [["double"] + s + tgt,
                 ["duplicate"] + s + tgt,
                 s + tgt + ["is", "doubled"]]
    return forms[template]


def _parse_scope_target(tokens: list[str]) -> tuple[str, str, str | None] | None:
    """Match 'scope phrase + one target token'."""
    for n in (2, 1):
        if len(tokens) == n + 1 and tuple(tokens[:n]) in _SCOPE_OF_SURFACE:
            parsed = _parse_target(tokens[n])
            if parsed is not None:
                kind, char = parsed
                return _SCOPE_OF_SURFACE[tuple(tokens[:n])], kind, char
    return None


def _parse_repl(tokens: list[str]) -> str | None:
    if 1 <= len(tokens) <= 2 and all(len(c) == 1 and c in ALPHABET
                                     for c in tokens):
        return "".join(tokens)
    return None


def _build(scope, kind, char, action, repl) -> Transducer | None:
    if action == "replace" and kind == "literal" and repl == char:
        return None  # no-op rules are outside the grammar
    try:
        return Transducer(scope, kind, char, action, repl)
    except Exception:
        return None


def parse_description(tokens: list[str]) -> Transducer | None:
    """Template inverse; None when the tokens fit no template."""
    tokens = list(tokens)
    if not tokens:
        return None
    head = tokens[0]
    if head in ("replace", "change"):
        sep = "with" if head == "replace" else "to"
        if sep not in tokens[1:]:
            return None
        i = tokens.index(sep, 1)
        st = _parse_scope_target(tokens[1:i])
        repl = _parse_repl(tokens[i + 1:])
        if st and repl:
            return _build(st[0], st[1], st[2], "replace", repl)
        return None
    if head in ("delete", "remove"):
        st = _parse_scope_target(tokens[1:])
        if st:
            return _build(st[0], st[1], st[2], "delete", None)
        return None
    if head in ("insert", "add"):
        if "after" not in tokens:
            return None
        i = tokens.index("after")
        repl = _parse_repl(tokens[1:i])
        st = _parse_scope_target(tokens[i + 1:])
        if st and repl:
            return _build(st[0], st[1], st[2], "insert_after", repl)
        return None
    if head in ("double", "duplicate"):
        st = _parse_scope_target(tokens[1:])
        if st:
            return _build(st[0], st[1], st[2], "duplicate", None)
        return None
    if "is" in tokens:
        i = tokens.index("is")
        rest = tokens[i + 1:]
        if rest[:2] == ["replaced", "with"]:
            st = _parse_scope_target(tokens[:i])
            repl = _parse_repl(rest[2:])
            if st and repl:
                return _build(st[0], st[1], st[2], "replace", repl)
        elif rest == ["dropped"]:
            st = _parse_scope_target(tokens[:i])
            if st:
                return _build(st[0], st[1], st[2], "delete", None)
        elif rest == ["doubled"]:
            st = _parse_scope_target(tokens[:i])
            if st:
                return _build(st[0], st[1], st[2], "duplicate", None)
        elif rest[:2] == ["inserted", "after"]:
            repl = _parse_repl(tokens[:i])
            st = _parse_scope_target(rest[2:])
            if st and repl:
                return _build(st[0], st[1], st[2], "insert_after", repl)
    return None


def description_vocab_tokens() -> list[str]:
    """Every word a natural template or formal program can contain,
    letters last."""
    words = ["replace", "change", "to", "with", "is", "replaced", "delete",
             "remove", "dropped", "insert", "add", "after", "inserted",
             "double", "duplicate", "doubled", "the", "first", "last",
             "every", "all", "leading", "final", "ending", "vowel",
             "consonant", "letter", "character", "initial", "any"]
    return words + list(ALPHABET)
