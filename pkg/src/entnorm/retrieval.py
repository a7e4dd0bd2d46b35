"""Okapi BM25 candidate generation over concept names and training mentions."""
from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .kb import Dataset, EntNormError, KnowledgeBase, mention_record
from .preprocess import Resources

INDEX_FORMAT = "entnorm-index"
INDEX_VERSION = 1


@dataclass(frozen=True)
class NameDoc:
    doc_ord: int
    concept_id: str
    raw_name: str
    tokens: tuple[str, ...]
    source: int = -1  # position of the originating training mention, -1 for KB names

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Candidate:
    concept_id: str
    matched_name: str
    bm25: float
    doc_ord: int = -1
    tokens: tuple[str, ...] = ()


@dataclass
class BuildReport:
    n_docs: int = 0
    n_name_docs: int = 0
    n_mention_docs: int = 0
    excluded: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "n_name_docs": self.n_name_docs,
            "n_mention_docs": self.n_mention_docs,
            "excluded": [list(e) for e in self.excluded],
        }


class Index:
    """Immutable inverted index with BM25 statistics."""

    def __init__(
        self,
        docs: Sequence[NameDoc],
        k1: float = 1.2,
        b: float = 0.75,
        report: BuildReport | None = None,
        fingerprint: str = "",
        resources_fingerprint: str = "",
    ):
        if not docs:
            raise EntNormError("cannot build an index with no documents")
        self.docs = tuple(docs)
        self.k1 = float(k1)
        self.b = float(b)
        self.report = report or BuildReport(n_docs=len(docs))
        self.fingerprint = fingerprint
        self.resources_fingerprint = resources_fingerprint
        self.N = len(self.docs)
        self.avgdl = sum(d.length for d in self.docs) / self.N

        postings: dict[str, list[tuple[int, int]]] = {}
        self._doc_tf: list[dict[str, int]] = []
        for d in self.docs:
            tf = Counter(d.tokens)
            self._doc_tf.append(dict(tf))
            for term, count in tf.items():
                postings.setdefault(term, []).append((d.doc_ord, count))
        self.postings = postings
        self._idf = {t: self._idf_from_df(len(p)) for t, p in postings.items()}
        self._norm = [self.k1 * (1.0 - self.b + self.b * d.length / self.avgdl) for d in self.docs]

    def _idf_from_df(self, df: int) -> float:
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def idf(self, term: str) -> float:
        """Inverse document frequency; terms absent from the index get df = 0."""
        got = self._idf.get(term)
        return self._idf_from_df(0) if got is None else got

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc_ord: int) -> int:
        return self._doc_tf[doc_ord].get(term, 0)

    def _term_weight(self, term: str, tf: int, doc_ord: int) -> float:
        return self._idf[term] * tf * (self.k1 + 1.0) / (tf + self._norm[doc_ord])

    def __repr__(self) -> str:
        return f"Index(N={self.N}, terms={len(self.postings)}, avgdl={self.avgdl:.3f})"


def _unique(tokens: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(tokens))


def bm25_score(index: Index, query: Sequence[str], doc_ord: int) -> float:
    """BM25 of one document; each distinct query term counts once."""
    if not 0 <= doc_ord < index.N:
        raise IndexError(f"doc_ord {doc_ord} out of range")
    score = 0.0
    for term in _unique(query):
        tf = index.tf(term, doc_ord)
        if tf:
            score += index._term_weight(term, tf, doc_ord)
    return score


def retrieve_candidates(
    index: Index,
    mention_tokens: Sequence[str],
    k: int = 10,
    exclude: Iterable[int] = (),
) -> list[Candidate]:
    """Top-``k`` distinct concepts for a query, best name per concept.

    Documents are ordered by (score desc, doc_ord asc) before concepts are
    collapsed. ``exclude`` removes specific documents from consideration.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    skip = frozenset(exclude)
    scores: dict[int, float] = {}
    for term in _unique(mention_tokens):
        for doc_ord, tf in index.postings.get(term, ()):
            if doc_ord in skip:
                continue
            scores[doc_ord] = scores.get(doc_ord, 0.0) + index._term_weight(term, tf, doc_ord)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    out: list[Candidate] = []
    seen: set[str] = set()
    for doc_ord, score in ranked:
        doc = index.docs[doc_ord]
        if doc.concept_id in seen:
            continue
        seen.add(doc.concept_id)
        out.append(Candidate(doc.concept_id, doc.raw_name, score, doc_ord, doc.tokens))
        if len(out) == k:
            break
    return out


def index_fingerprint(kb: KnowledgeBase, training: Dataset, resources: Resources, k1: float, b: float) -> str:
    h = hashlib.sha256()
    for c in kb.concepts():
        h.update(json.dumps([c.id, list(c.names)], ensure_ascii=False).encode("utf-8"))
    h.update(b"\x00train\x00")
    for m in training.mentions:
        h.update(json.dumps(mention_record(m), ensure_ascii=False, sort_keys=True).encode("utf-8"))
    h.update(resources.fingerprint().encode("ascii"))
    h.update(repr((float(k1), float(b))).encode("ascii"))
    return h.hexdigest()


def build_index(
    kb: KnowledgeBase,
    training: Dataset | None = None,
    resources: Resources | None = None,
    k1: float = 1.2,
    b: float = 0.75,
) -> Index:
    """Index every concept name, then every linkable training mention.

    Names or mentions that normalize to no tokens are left out and listed in
    ``index.report.excluded``.
    """
    if len(kb) == 0:
        raise EntNormError("knowledge base is empty")
    training = training or Dataset()
    resources = resources or Resources()
    report = BuildReport()
    docs: list[NameDoc] = []

    def add(concept_id, raw, tokens, source):
        if not tokens:
            report.excluded.append(("name" if source < 0 else "mention", concept_id, raw))
            return False
        docs.append(NameDoc(len(docs), concept_id, raw, tuple(tokens), source))
        return True

    for concept in kb.concepts():
        for name in concept.names:
            report.n_name_docs += add(concept.id, name, resources.normalize_name(name), -1)
    for pos, m in enumerate(training.mentions):
        if not m.is_linkable:
            continue
        if m.gold not in kb:
            raise EntNormError(f"training mention {m.text!r} has gold {m.gold!r} not present in the KB")
        report.n_mention_docs += add(m.gold, m.text, resources.normalize_mention(m), pos)
    report.n_docs = len(docs)
    return Index(
        docs,
        k1=k1,
        b=b,
        report=report,
        fingerprint=index_fingerprint(kb, training, resources, k1, b),
        resources_fingerprint=resources.fingerprint(),
    )


# -- persistence -------------------------------------------------------------


def save_index(index: Index, path) -> None:
    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "k1": index.k1,
        "b": index.b,
        "fingerprint": index.fingerprint,
        "resources_fingerprint": index.resources_fingerprint,
        "report": index.report.as_dict(),
        "docs": [[d.concept_id, d.raw_name, list(d.tokens), d.source] for d in index.docs],
        "postings": {t: [list(p) for p in plist] for t, plist in index.postings.items()},
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_index(path) -> Index:
    path = Path(path)
    if not path.exists():
        raise EntNormError(f"{path}: index file not found")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EntNormError(f"{path}: not a valid index artifact ({exc.msg})") from None
    if payload.get("format") != INDEX_FORMAT or payload.get("version") != INDEX_VERSION:
        raise EntNormError(f"{path}: unsupported index format/version")
    docs = [NameDoc(i, cid, raw, tuple(toks), src) for i, (cid, raw, toks, src) in enumerate(payload["docs"])]
    rep = payload["report"]
    report = BuildReport(rep["n_docs"], rep["n_name_docs"], rep["n_mention_docs"], [tuple(e) for e in rep["excluded"]])
    index = Index(
        docs,
        k1=payload["k1"],
        b=payload["b"],
        report=report,
        fingerprint=payload["fingerprint"],
        resources_fingerprint=payload["resources_fingerprint"],
    )
    stored = {t: [tuple(p) for p in plist] for t, plist in payload["postings"].items()}
    if stored != index.postings:
        raise EntNormError(f"{path}: stored postings disagree with stored documents")
    return index
