from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..kb import Dataset, EntNormError, KnowledgeBase
from ..preprocess import Resources

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")


class Vocab:
    """Word-level vocabulary; the four special tokens occupy ids 0-3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(SPECIALS)
        self._stoi: dict[str, int] = {s: i for i, s in enumerate(SPECIALS)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._stoi.get(token)
        if idx is None:
            idx = len(self._itos)
            self._itos.append(token)
            self._stoi[token] = idx
        return idx

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self._stoi.get(t, UNK) for t in tokens]

    def tokens(self) -> list[str]:
        """Corpus tokens (specials excluded) in id order."""
        return self._itos[len(SPECIALS):]

    def __repr__(self) -> str:
        return f"Vocab({len(self)})"


def build_vocab(kb: KnowledgeBase, training: Dataset, resources: Resources | None = None) -> Vocab:
    resources = resources or Resources()
    vocab = Vocab()
    for concept in kb.concepts():
        for name in concept.names:
            for tok in resources.normalize_name(name):
                vocab.add(tok)
    for m in training.mentions:
        for tok in resources.normalize_mention(m):
            vocab.add(tok)
    if len(vocab) == len(SPECIALS):
        raise EntNormError("no tokens found to build a vocabulary from")
    return vocab


@dataclass(frozen=True)
class PairSequence:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray

    @property
    def length(self) -> int:
        return int(self.attention_mask.sum())


def build_pair_sequence(
    mention_tokens: Sequence[str],
    concept_tokens: Sequence[str],
    vocab: Vocab,
    max_len: int,
) -> PairSequence:
    """Lay out ``[CLS] m [SEP] c`` padded to ``max_len``.

    Over-long inputs lose tokens from the right end of whichever side is
    longer (the mention side on ties) until the pair fits.
    """
    if max_len < 4:
        raise ValueError("max_len must be at least 4")
    if not mention_tokens and not concept_tokens:
        raise EntNormError("cannot score a pair with an empty mention and an empty concept")
    m = list(mention_tokens)
    c = list(concept_tokens)
    budget = max_len - 2
    while len(m) + len(c) > budget:
        if len(m) >= len(c):
            m.pop()
        else:
            c.pop()
    ids = [CLS, *vocab.ids(m), SEP, *vocab.ids(c)]
    n_first = len(m) + 2
    n = len(ids)
    token_ids = np.zeros(max_len, dtype=np.int64)
    token_ids[:n] = ids
    segment_ids = np.zeros(max_len, dtype=np.int64)
    segment_ids[n_first:n] = 1
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    return PairSequence(token_ids, segment_ids, mask)


def stack_sequences(seqs: Sequence[PairSequence], trim: bool = True):
    """Stack sequences into (ids, segments, mask) arrays.

    With ``trim`` the batch is cut to its longest real sequence; masked
    positions never influence the ``[CLS]`` state, so this is output-neutral.
    """
    ids = np.stack([s.token_ids for s in seqs])
    seg = np.stack([s.segment_ids for s in seqs])
    mask = np.stack([s.attention_mask for s in seqs])
    if trim:
        t = int(mask.sum(axis=1).max())
        ids, seg, mask = ids[:, :t], seg[:, :t], mask[:, :t]
    return ids, seg, mask
