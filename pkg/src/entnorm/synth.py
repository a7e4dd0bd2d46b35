"""Seeded synthetic knowledge bases and mention datasets.

Concepts are combinations of slot values (optional modifier, body site,
finding, optional graded qualifier). Every slot value is a group of
interchangeable surface words, so one concept has many surface forms and
only a few of them are listed in the KB. Mentions are variations of a
concept rendering: word-form substitution, reordering, numeral spelling,
injected misspellings (listed in ``spelling.tsv``), in-document
abbreviations (defined in ``docs.jsonl``), dropped modifiers and irrelevant
extra words. Unlinkable mentions render slot combinations that are not in
the KB, so they still share vocabulary with real concepts.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .kb import NIL, Concept, Dataset, Document, KnowledgeBase, Mention, save_dataset, save_documents, save_kb
from .preprocess import detect_abbreviations, porter_stem, save_tsv
from .preprocess.text import NUMERIC_TABLE

_ONSETS = ("b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "cr", "dr", "gl", "pl", "st", "tr", "ph", "th", "ch", "sc")
_NUCLEI = ("a", "e", "i", "o", "u", "ae", "ou", "io")
_CODAS = ("", "", "n", "r", "s", "l", "m", "x", "th", "nd", "rt")

_NUMBER_WORDS: dict[str, list[str]] = {}
for _w, _n in NUMERIC_TABLE.items():
    if _w != "i":  # avoid rendering 1 as the bare pronoun-like "i"
        _NUMBER_WORDS.setdefault(_n, []).append(_w)


@dataclass(frozen=True)
class SynthSpec:
    n_concepts: int = 300
    synonyms_per_concept: tuple[int, int] = (1, 3)
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 500
    nil_fraction: float = 0.1
    seed: int = 0
    p_form_swap: float = 0.5
    p_reorder: float = 0.3
    p_numeric_word: float = 0.5
    p_misspell: float = 0.2
    p_abbreviation: float = 0.08
    p_drop_modifier: float = 0.15
    p_extra_word: float = 0.25

    def __post_init__(self):
        lo, hi = self.synonyms_per_concept
        if not 1 <= lo <= hi:
            raise ValueError("synonyms_per_concept must be a range with 1 <= lo <= hi")
        if not 0.0 <= self.nil_fraction < 1.0:
            raise ValueError("nil_fraction must lie in [0, 1)")
        if self.n_concepts < 1:
            raise ValueError("n_concepts must be positive")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ValueError("split sizes must be non-negative")


@dataclass
class SynthCorpus:
    kb: KnowledgeBase
    train: Dataset
    dev: Dataset
    test: Dataset
    documents: list[Document]
    spelling: dict[str, str]
    spec: SynthSpec
    stats: dict = field(default_factory=dict)


class _Lexicon:
    """Pseudo-words with pairwise-distinct Porter stems."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used_words: set[str] = set(NUMERIC_TABLE)
        self.used_stems: set[str] = {porter_stem(w) for w in NUMERIC_TABLE}

    def word(self) -> str:
        while True:
            n_syl = self.rng.choice((2, 2, 3))
            w = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_NUCLEI) for _ in range(n_syl))
            w += self.rng.choice(_CODAS)
            stem = porter_stem(w)
            if 4 <= len(w) <= 11 and w not in self.used_words and stem not in self.used_stems:
                self.used_words.add(w)
                self.used_stems.add(stem)
                return w

    def group(self, lo: int, hi: int) -> tuple[str, ...]:
        return tuple(self.word() for _ in range(self.rng.randint(lo, hi)))


@dataclass(frozen=True)
class _Slots:
    modifier: int | None
    site: int
    finding: int
    qualifier: int | None
    number: int | None


class _Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = random.Random(spec.seed)
        lex = _Lexicon(self.rng)
        n = spec.n_concepts
        self.sites = [lex.group(1, 3) for _ in range(max(8, n // 6))]
        self.findings = [lex.group(1, 3) for _ in range(max(6, n // 9))]
        self.modifiers = [lex.group(1, 2) for _ in range(max(3, n // 30))]
        self.qualifiers = [lex.group(1, 1) for _ in range(2)]
        self.fillers = [lex.word() for _ in range(2)]
        self.extras = [lex.word() for _ in range(max(10, n // 15))]
        self.misspelled: dict[str, str] = {}
        self.used_misspellings: set[str] = set(lex.used_words)
        self.spelling: dict[str, str] = {}
        self.documents: list[Document] = []

    # -- concepts ---------------------------------------------------------

    def _random_slots(self) -> _Slots:
        r = self.rng
        modifier = r.randrange(len(self.modifiers)) if r.random() < 0.35 else None
        qualifier = number = None
        if r.random() < 0.25:
            qualifier = r.randrange(len(self.qualifiers))
            number = r.randint(1, 5)
        return _Slots(modifier, r.randrange(len(self.sites)), r.randrange(len(self.findings)), qualifier, number)

    def concepts(self):
        seen: set[_Slots] = set()
        slots: list[_Slots] = []
        guard = 0
        while len(slots) < self.spec.n_concepts:
            s = self._random_slots()
            guard += 1
            if guard > 1000 * self.spec.n_concepts:
                raise ValueError("slot space too small for the requested number of concepts")
            if s not in seen:
                seen.add(s)
                slots.append(s)
        self.seen = seen
        concepts = []
        self.concept_slots = {}
        lo, hi = self.spec.synonyms_per_concept
        for i, s in enumerate(slots):
            cid = f"C{i + 1:05d}"
            names = [self._render(s, canonical=True)]
            want = self.rng.randint(lo, hi)
            tries = 0
            while len(names) < want and tries < 20:
                tries += 1
                name = self._render(s, canonical=False)
                if name not in names:
                    names.append(name)
            concepts.append(Concept(cid, tuple(names)))
            self.concept_slots[cid] = s
        return KnowledgeBase(concepts)

    def _words_for(self, s: _Slots, canonical: bool, numeral_words: bool = False):
        r = self.rng
        pick = (lambda g: g[0]) if canonical else r.choice
        mod = pick(self.modifiers[s.modifier]) if s.modifier is not None else None
        site = pick(self.sites[s.site])
        finding = pick(self.findings[s.finding])
        tail = []
        if s.qualifier is not None:
            num = str(s.number)
            if numeral_words:
                num = r.choice(_NUMBER_WORDS[num])
            tail = [self.qualifiers[s.qualifier][0], num]
        return mod, site, finding, tail

    def _render(self, s: _Slots, canonical: bool) -> str:
        mod, site, finding, tail = self._words_for(s, canonical)
        if canonical or self.rng.random() < 0.6:
            words = [w for w in (mod, site, finding) if w] + tail
        else:
            words = [finding, self.fillers[0], *([mod] if mod else []), site] + tail
        return " ".join(words)

    # -- mentions ---------------------------------------------------------

    def _misspell(self, word: str) -> str:
        got = self.misspelled.get(word)
        if got is not None:
            return got
        r = self.rng
        for _ in range(50):
            i = r.randrange(1, len(word))
            if r.random() < 0.5:
                bad = word[:i] + word[i + 1 :]
            else:
                j = min(i + 1, len(word) - 1)
                chars = list(word)
                chars[i - 1], chars[j] = chars[j], chars[i - 1]
                bad = "".join(chars)
            if bad != word and bad not in self.used_misspellings and len(bad) >= 3:
                self.used_misspellings.add(bad)
                self.misspelled[word] = bad
                self.spelling[bad] = word
                return bad
        return word

    def _mention_text(self, s: _Slots) -> tuple[str, str | None]:
        """Surface text plus, when abbreviated, the long form it stands for."""
        sp, r = self.spec, self.rng
        numeral_words = s.qualifier is not None and r.random() < sp.p_numeric_word
        mod, site, finding, tail = self._words_for(s, canonical=r.random() >= sp.p_form_swap,
                                                   numeral_words=numeral_words)
        if mod and r.random() < sp.p_drop_modifier:
            mod = None
        core = [w for w in (mod, site, finding) if w]
        if r.random() < sp.p_reorder:
            r.shuffle(core)
        words = core + tail
        if r.random() < sp.p_extra_word:
            words.insert(r.randrange(len(words) + 1), r.choice(self.extras))
        if r.random() < sp.p_abbreviation and not tail:
            long_form = " ".join(words)
            return "".join(w[0] for w in words).upper(), long_form
        if r.random() < sp.p_misspell:
            alpha = [i for i, w in enumerate(words) if w.isalpha() and len(w) >= 4]
            if alpha:
                i = r.choice(alpha)
                words[i] = self._misspell(words[i])
        return " ".join(words), None

    def _nil_slots(self) -> _Slots:
        for _ in range(10000):
            s = self._random_slots()
            if s not in self.seen:
                return s
        raise ValueError("could not find an out-of-KB slot combination")

    def mentions(self, split: str, n: int, concept_ids: list[str]) -> Dataset:
        r = self.rng
        n_nil = int(round(n * self.spec.nil_fraction))
        labels: list[str | None] = [None] * n_nil + [r.choice(concept_ids) for _ in range(n - n_nil)]
        r.shuffle(labels)
        out = []
        for i, cid in enumerate(labels):
            doc_id = f"{split}-{i:05d}"
            if cid is None:
                if r.random() < 0.2:
                    text = " ".join(self.extras[j] for j in r.sample(range(len(self.extras)), 2))
                    long_form = None
                else:
                    text, long_form = self._mention_text(self._nil_slots())
                gold = NIL
            else:
                text, long_form = self._mention_text(self.concept_slots[cid])
                gold = cid
            if long_form is not None:
                doc_text = f"Noted {long_form} ({text}) on review. Findings consistent with {text}."
                if detect_abbreviations(doc_text).get(text) != long_form:
                    text = long_form
                    doc_text = f"Findings consistent with {text}."
            else:
                doc_text = f"Findings consistent with {text}."
            context = f"Findings consistent with {text}."
            self.documents.append(Document(doc_id, doc_text))
            out.append(Mention(doc_id, text, context, gold))
        return Dataset(tuple(out), split)


def generate(spec: SynthSpec) -> SynthCorpus:
    g = _Generator(spec)
    kb = g.concepts()
    ids = list(kb)
    train = g.mentions("train", spec.n_train, ids)
    dev = g.mentions("dev", spec.n_dev, ids)
    test = g.mentions("test", spec.n_test, ids)
    stats = {
        split: {"n": len(ds), "linkable": ds.n_linkable, "unlinkable": ds.n_unlinkable}
        for split, ds in (("train", train), ("dev", dev), ("test", test))
    }
    stats["concepts"] = len(kb)
    stats["names"] = sum(len(c.names) for c in kb.concepts())
    return SynthCorpus(kb, train, dev, test, g.documents, dict(sorted(g.spelling.items())), spec, stats)


def write_corpus(corpus: SynthCorpus, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "kb": out / "kb.jsonl",
        "train": out / "train.jsonl",
        "dev": out / "dev.jsonl",
        "test": out / "test.jsonl",
        "docs": out / "docs.jsonl",
        "spelling": out / "spelling.tsv",
        "spec": out / "synth_spec.json",
    }
    save_kb(corpus.kb, paths["kb"])
    save_dataset(corpus.train, paths["train"])
    save_dataset(corpus.dev, paths["dev"])
    save_dataset(corpus.test, paths["test"])
    save_documents(corpus.documents, paths["docs"])
    save_tsv(corpus.spelling, paths["spelling"], header="misspelled\tcorrection")
    spec = asdict(corpus.spec)
    spec["synonyms_per_concept"] = list(spec["synonyms_per_concept"])
    paths["spec"].write_text(json.dumps({"spec": spec, "stats": corpus.stats}, indent=2, sort_keys=True) + "\n")
    return paths
