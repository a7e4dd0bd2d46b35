"""Knowledge base, document and mention-dataset model plus JSONL ingestion.

All three file kinds are line-delimited JSON, UTF-8, one record per line::

    kb.jsonl       {"id": "C001", "names": ["congestive heart failure", "CHF"]}
    dataset.jsonl  {"doc_id": "d1", "mention": "CHF", "context": null, "gold": "C001"}
    docs.jsonl     {"doc_id": "d1", "text": "..."}

A dataset ``gold`` of ``"NIL"`` marks an unlinkable mention; an absent gold
marks an unlabeled (prediction-only) mention.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

logger = logging.getLogger(__name__)


class EntNormError(Exception):
    """Base class for user/data errors raised by this package."""


class IngestionError(EntNormError):
    """A JSONL input file violates its record contract."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class Label(enum.Enum):
    NIL = "NIL"
    UNKNOWN = "UNKNOWN"

    def __repr__(self) -> str:
        return self.value


NIL = Label.NIL
UNKNOWN = Label.UNKNOWN

#: A gold or predicted label: a concept id string, NIL, or (gold only) UNKNOWN.
Gold = Union[str, Label]

SPLITS = ("train", "dev", "test", "unspecified")


def validate_concept_id(value) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"concept id must be a non-empty string, got {value!r}")
    if any(ch.isspace() for ch in value):
        raise ValueError(f"concept id must not contain whitespace: {value!r}")
    if value == NIL.value:
        raise ValueError("'NIL' is reserved and cannot be a concept id")
    return value


@dataclass(frozen=True)
class Concept:
    id: str
    names: tuple[str, ...]

    def __post_init__(self):
        validate_concept_id(self.id)
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError(f"concept {self.id} has no names")
        if any(not isinstance(n, str) or not n for n in self.names):
            raise ValueError(f"concept {self.id} has an empty or non-string name")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"concept {self.id} has duplicate names")

    @property
    def preferred_name(self) -> str:
        return self.names[0]


class KnowledgeBase(Mapping[str, Concept]):
    """Ordered, immutable collection of concepts keyed by id."""

    def __init__(self, concepts: Iterable[Concept] = ()):
        self._concepts: dict[str, Concept] = {}
        for c in concepts:
            if c.id in self._concepts:
                raise ValueError(f"duplicate concept id {c.id!r}")
            self._concepts[c.id] = c

    def __getitem__(self, concept_id: str) -> Concept:
        return self._concepts[concept_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._concepts)

    def __len__(self) -> int:
        return len(self._concepts)

    def concepts(self) -> Iterator[Concept]:
        return iter(self._concepts.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self._concepts == other._concepts

    def __repr__(self) -> str:
        return f"KnowledgeBase({len(self)} concepts)"


@dataclass(frozen=True)
class Mention:
    doc_id: str
    text: str
    context: str | None = None
    gold: Gold = UNKNOWN

    def __post_init__(self):
        if not self.text:
            raise ValueError("mention text must be non-empty")
        if isinstance(self.gold, str):
            validate_concept_id(self.gold)

    @property
    def is_linkable(self) -> bool:
        return isinstance(self.gold, str)


@dataclass(frozen=True)
class Document:
    id: str
    text: str


@dataclass(frozen=True)
class Dataset:
    mentions: tuple[Mention, ...] = ()
    split_tag: str = "unspecified"

    def __post_init__(self):
        object.__setattr__(self, "mentions", tuple(self.mentions))
        if self.split_tag not in SPLITS:
            raise ValueError(f"unknown split tag {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.mentions)

    def __iter__(self) -> Iterator[Mention]:
        return iter(self.mentions)

    @property
    def n_linkable(self) -> int:
        return sum(1 for m in self.mentions if m.is_linkable)

    @property
    def n_unlinkable(self) -> int:
        return sum(1 for m in self.mentions if m.gold is NIL)

    @property
    def n_unknown(self) -> int:
        return sum(1 for m in self.mentions if m.gold is UNKNOWN)

    def require_labeled(self) -> None:
        """Raise if any mention lacks a gold label (training/evaluation inputs)."""
        for i, m in enumerate(self.mentions):
            if m.gold is UNKNOWN:
                raise EntNormError(
                    f"mention #{i} ({m.text!r}) has no gold label; "
                    "labeled data is required here"
                )


def split_train_dev(ds: Dataset, dev_fraction: float = 0.1) -> tuple[Dataset, Dataset]:
    """Hold out the last ``dev_fraction`` of ``ds`` (by position) as a dev set."""
    if not 0.0 <= dev_fraction < 1.0:
        raise ValueError("dev_fraction must lie in [0, 1)")
    n_dev = int(round(len(ds) * dev_fraction))
    cut = len(ds) - n_dev
    return (
        Dataset(ds.mentions[:cut], "train"),
        Dataset(ds.mentions[cut:], "dev"),
    )


# -- ingestion ---------------------------------------------------------------


def _iter_records(path, expected: Sequence[str]) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise IngestionError("file not found", path)
    warned: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"malformed JSON ({exc.msg})", path, lineno) from None
            if not isinstance(rec, dict):
                raise IngestionError("record is not a JSON object", path, lineno)
            extra = set(rec) - set(expected) - warned
            if extra:
                logger.warning("%s:%d: ignoring unknown fields %s", path, lineno, sorted(extra))
                warned |= extra
            yield lineno, rec


def load_kb(path) -> KnowledgeBase:
    concepts: dict[str, Concept] = {}
    for lineno, rec in _iter_records(path, ("id", "names")):
        cid = rec.get("id")
        names = rec.get("names")
        if not isinstance(names, list) or not names:
            raise IngestionError(f"concept {cid!r} has an empty or missing names array", path, lineno)
        if cid in concepts:
            raise IngestionError(f"duplicate concept id {cid!r}", path, lineno)
        try:
            concepts[cid] = Concept(cid, tuple(names))
        except ValueError as exc:
            raise IngestionError(str(exc), path, lineno) from None
    return KnowledgeBase(concepts.values())


def save_kb(kb: KnowledgeBase, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for c in kb.concepts():
            fh.write(json.dumps({"id": c.id, "names": list(c.names)}, ensure_ascii=False) + "\n")


def _parse_gold(value, path, lineno) -> Gold:
    if value is None:
        return UNKNOWN
    if value == NIL.value:
        return NIL
    try:
        return validate_concept_id(value)
    except ValueError as exc:
        raise IngestionError(str(exc), path, lineno) from None


def load_dataset(path, split_tag: str = "unspecified") -> Dataset:
    mentions = []
    for lineno, rec in _iter_records(path, ("doc_id", "mention", "context", "gold")):
        text = rec.get("mention")
        if not isinstance(text, str) or not text:
            raise IngestionError("empty or missing mention text", path, lineno)
        doc_id = rec.get("doc_id", "")
        if not isinstance(doc_id, str):
            raise IngestionError("doc_id must be a string", path, lineno)
        context = rec.get("context")
        if context is not None and not isinstance(context, str):
            raise IngestionError("context must be a string or null", path, lineno)
        gold = _parse_gold(rec.get("gold"), path, lineno)
        mentions.append(Mention(doc_id, text, context, gold))
    return Dataset(tuple(mentions), split_tag)


def mention_record(m: Mention) -> dict:
    rec = {"doc_id": m.doc_id, "mention": m.text, "context": m.context}
    if m.gold is not UNKNOWN:
        rec["gold"] = m.gold.value if isinstance(m.gold, Label) else m.gold
    return rec


def save_dataset(ds: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for m in ds.mentions:
            fh.write(json.dumps(mention_record(m), ensure_ascii=False) + "\n")


def load_documents(path) -> dict[str, Document]:
    """Load documents keyed by id, in file order."""
    docs: dict[str, Document] = {}
    for lineno, rec in _iter_records(path, ("doc_id", "text")):
        doc_id, text = rec.get("doc_id"), rec.get("text")
        if not isinstance(doc_id, str) or not isinstance(text, str):
            raise IngestionError("doc_id and text must be strings", path, lineno)
        if doc_id in docs:
            raise IngestionError(f"duplicate doc_id {doc_id!r}", path, lineno)
        docs[doc_id] = Document(doc_id, text)
    return docs


def save_documents(docs: Iterable[Document], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"doc_id": d.id, "text": d.text}, ensure_ascii=False) + "\n")
