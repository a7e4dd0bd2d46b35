"""Schwartz & Hearst abbreviation-definition extraction.

Finds ``long form (SF)`` patterns and aligns the short form right-to-left
against the words preceding the parenthesis.
"""
from __future__ import annotations

import re

from ..kb import Document

_SENTENCE_END = re.compile(r"[.!?;]\s+")


def is_valid_short_form(sf: str) -> bool:
    if not 2 <= len(sf) <= 10:
        return False
    if len(sf.split()) > 2:
        return False
    if not any(ch.isalpha() for ch in sf):
        return False
    return sf[0].isalnum()


def best_long_form(sf: str, lf: str) -> str | None:
    """Shortest word-suffix of ``lf`` whose characters align with ``sf``.

    Every alphanumeric character of the short form must be found in the long
    form, right to left, and the first one must start a word.
    """
    s = len(sf) - 1
    i = len(lf) - 1
    while s >= 0:
        ch = sf[s].lower()
        if not ch.isalnum():
            s -= 1
            continue
        while (i >= 0 and lf[i].lower() != ch) or (s == 0 and i > 0 and lf[i - 1].isalnum()):
            i -= 1
        if i < 0:
            return None
        i -= 1
        s -= 1
    start = lf.rfind(" ", 0, i + 1) + 1
    return lf[start:]


def _candidate_window(preceding: str) -> str:
    """Text between the last sentence/clause boundary and the parenthesis."""
    cut = 0
    for m in _SENTENCE_END.finditer(preceding):
        cut = m.end()
    preceding = preceding[cut:]
    # an earlier closed parenthetical is never part of this long form
    close = preceding.rfind(")")
    if close >= 0:
        preceding = preceding[close + 1 :]
    return preceding.strip()


def _pair_from(sf: str, preceding: str) -> tuple[str, str] | None:
    sf = sf.strip()
    for sep in (", ", "; "):
        if sep in sf:
            sf = sf.split(sep, 1)[0].strip()
    if not is_valid_short_form(sf):
        return None
    words = _candidate_window(preceding).split()
    max_words = min(len(sf) + 5, len(sf) * 2)
    window = " ".join(words[-max_words:])
    if not window:
        return None
    lf = best_long_form(sf, window)
    if lf is None:
        return None
    if len(lf) <= len(sf):
        return None
    if sf.lower() in (w.lower() for w in lf.split()):
        return None
    if len(lf.split()) > max_words:
        return None
    return sf, lf


def extract_pairs(text: str) -> list[tuple[str, str]]:
    """All ``(short, long)`` definitions in ``text``, in order of appearance."""
    pairs = []
    for m in re.finditer(r"\(([^()]*)\)", text):
        found = _pair_from(m.group(1), text[: m.start()])
        if found is not None:
            pairs.append(found)
    return pairs


def detect_abbreviations(doc: Document | str) -> dict[str, str]:
    """Map short form -> long form for one document. Later definitions win."""
    text = doc.text if isinstance(doc, Document) else doc
    return dict(extract_pairs(text))
