"""Independent reference implementation of the string-edit rules.

Deliberately written as per-scope scans and per-action string surgery,
sharing no code with the package implementation, so agreement between
the two is evidence rather than tautology.
"""

VOWELS = "aeiou"


def _hits(kind: str, char: str | None, word: str) -> list[int]:
    out = []
    for i, c in enumerate(word):
        if kind == "literal":
            if c == char:
                out.append(i)
        elif kind == "vowel":
            if c in VOWELS:
                out.append(i)
        elif kind == "consonant":
            if c not in VOWELS:
                out.append(i)
        elif kind == "any":
            out.append(i)
        else:
            raise ValueError(kind)
    return out


def oracle_positions(scope: str, kind: str, char: str | None,
                     word: str) -> list[int]:
    if scope == "first":
        for i in range(len(word)):
            if _hits(kind, char, word[i:i + 1]):
                return [i]
        return []
    if scope == "last":
        for i in range(len(word) - 1, -1, -1):
            if _hits(kind, char, word[i:i + 1]):
                return [i]
        return []
    if scope == "every":
        return _hits(kind, char, word)
    if scope == "initial":
        return [0] if word and _hits(kind, char, word[0]) else []
    if scope == "final":
        n = len(word)
        return [n - 1] if word and _hits(kind, char, word[-1]) else []
    raise ValueError(scope)


def oracle_apply(scope: str, kind: str, char: str | None, action: str,
                 repl: str | None, word: str) -> str:
    pos = set(oracle_positions(scope, kind, char, word))
    if action == "replace":
        return "".join(repl if i in pos else c for i, c in enumerate(word))
    if action == "delete":
        return "".join(c for i, c in enumerate(word) if i not in pos)
    if action == "insert_after":
        return "".join(c + repl if i in pos else c
                       for i, c in enumerate(word))
    if action == "duplicate":
        return "".join(c + c if i in pos else c for i, c in enumerate(word))
    raise ValueError(action)
