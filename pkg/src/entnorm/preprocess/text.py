"""Token-level normalization: tokenizing, spelling, numerics, stemming."""
from __future__ import annotations

import unicodedata
from pathlib import Path
from typing import Mapping, Sequence

from ..kb import IngestionError
from .porter import porter_stem

_CARDINALS = ("one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten")
_ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth")
_ROMAN = ("i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x")


def _numeric_table() -> dict[str, str]:
    table = {}
    for words in (_CARDINALS, _ORDINALS, _ROMAN):
        for n, w in enumerate(words, start=1):
            table[w] = str(n)
    table["single"] = "1"
    return table


#: Fixed map from numeric words to Arabic numerals.
NUMERIC_TABLE: Mapping[str, str] = _numeric_table()


def _ascii_fold(piece: str) -> str:
    decomposed = unicodedata.normalize("NFKD", piece.lower())
    return "".join(ch for ch in decomposed if ("a" <= ch <= "z") or ("0" <= ch <= "9"))


def tokenize(text: str) -> list[str]:
    """Split on whitespace, drop punctuation, lowercase.

    Everything outside ``[a-z0-9]`` (after lowercasing and stripping accents)
    counts as punctuation, so ``"first-degree"`` becomes ``"firstdegree"``.
    """
    out = []
    for piece in text.split():
        tok = _ascii_fold(piece)
        if tok:
            out.append(tok)
    return out


def correct_spelling(tokens: Sequence[str], lexicon: Mapping[str, str]) -> list[str]:
    if not lexicon:
        return list(tokens)
    out: list[str] = []
    for tok in tokens:
        fix = lexicon.get(tok)
        if fix is None:
            out.append(tok)
        elif any(ch.isspace() for ch in fix):
            out.extend(tokenize(fix))
        else:
            out.append(fix)
    return out


def resolve_numerics(tokens: Sequence[str], table: Mapping[str, str] = NUMERIC_TABLE) -> list[str]:
    return [table.get(tok, tok) for tok in tokens]


def expand_abbreviation(mention_text: str, abbrevs: Mapping[str, str]) -> str:
    """Replace a short-form mention (or short-form words in it) by long forms."""
    if not abbrevs:
        return mention_text
    whole = abbrevs.get(mention_text)
    if whole is not None:
        return whole
    words = mention_text.split()
    if not any(w in abbrevs for w in words):
        return mention_text
    return " ".join(abbrevs.get(w, w) for w in words)


def normalize(
    raw_text: str,
    abbrevs: Mapping[str, str] | None = None,
    lexicon: Mapping[str, str] | None = None,
    numerics: Mapping[str, str] = NUMERIC_TABLE,
) -> list[str]:
    """Full pipeline: abbreviation -> tokenize -> spelling -> numerics -> stem."""
    text = expand_abbreviation(raw_text, abbrevs or {})
    tokens = tokenize(text)
    tokens = correct_spelling(tokens, lexicon or {})
    tokens = resolve_numerics(tokens, numerics)
    return [porter_stem(t) for t in tokens]


# -- resource files ----------------------------------------------------------


def _read_tsv_pairs(path) -> list[tuple[int, str, str]]:
    path = Path(path)
    if not path.exists():
        raise IngestionError("file not found", path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise IngestionError("expected exactly two non-empty tab-separated fields", path, lineno)
            rows.append((lineno, parts[0], parts[1]))
    return rows


def load_spelling_lexicon(path) -> dict[str, str]:
    """Read ``misspelled<TAB>correction`` lines into a lexicon."""
    lexicon: dict[str, str] = {}
    for lineno, wrong, right in _read_tsv_pairs(path):
        wrong, right = wrong.strip().lower(), right.strip().lower()
        if wrong == right:
            raise IngestionError(f"correction for {wrong!r} is identical to the key", path, lineno)
        if wrong in lexicon and lexicon[wrong] != right:
            raise IngestionError(f"conflicting corrections for {wrong!r}", path, lineno)
        lexicon[wrong] = right
    return lexicon


def load_abbreviation_list(path) -> dict[str, str]:
    """Read ``short<TAB>long`` lines (case preserved). Later lines win."""
    return {short.strip(): long.strip() for _, short, long in _read_tsv_pairs(path)}


def save_tsv(pairs: Mapping[str, str], path, header: str | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for k, v in pairs.items():
            fh.write(f"{k}\t{v}\n")
