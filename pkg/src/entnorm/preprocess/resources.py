from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

from ..kb import Document, Mention
from .abbrev import detect_abbreviations
from .text import NUMERIC_TABLE, normalize


@dataclass(frozen=True)
class Resources:
    """Preprocessing inputs shared by indexing, vocabulary building and linking.

    ``abbreviations`` is a global short->long list; pairs detected in a
    mention's own document override it. Concept names are never
    abbreviation-expanded, but spelling and numerics apply to both sides.
    """

    lexicon: Mapping[str, str] = field(default_factory=dict)
    abbreviations: Mapping[str, str] = field(default_factory=dict)
    documents: Mapping[str, Document] = field(default_factory=dict)
    _doc_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def abbreviations_for(self, doc_id: str) -> Mapping[str, str]:
        cached = self._doc_cache.get(doc_id)
        if cached is not None:
            return cached
        merged = dict(self.abbreviations)
        doc = self.documents.get(doc_id)
        if doc is not None:
            merged.update(detect_abbreviations(doc))
        self._doc_cache[doc_id] = merged
        return merged

    def normalize_mention(self, mention: Mention | str, doc_id: str | None = None) -> list[str]:
        if isinstance(mention, Mention):
            text, doc_id = mention.text, mention.doc_id
        else:
            text = mention
        abbrevs = self.abbreviations_for(doc_id) if doc_id is not None else self.abbreviations
        return normalize(text, abbrevs, self.lexicon, NUMERIC_TABLE)

    def normalize_name(self, name: str) -> list[str]:
        return normalize(name, None, self.lexicon, NUMERIC_TABLE)

    def fingerprint(self) -> str:
        """Hash of the document-independent resources (lexicon, global abbreviations)."""
        payload = json.dumps(
            {"lexicon": sorted(self.lexicon.items()), "abbreviations": sorted(self.abbreviations.items())},
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()
