"""Pointwise training data, the training loop, and candidate reranking."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..kb import Dataset, EntNormError, KnowledgeBase
from ..preprocess import Resources
from ..retrieval import Candidate, Index, retrieve_candidates
from .model import CrossEncoder, Hyperparams
from .optim import Adam
from .vocab import build_pair_sequence

logger = logging.getLogger(__name__)


class TrainingError(EntNormError):
    pass


@dataclass(frozen=True)
class PairExample:
    mention_tokens: tuple[str, ...]
    concept_name_tokens: tuple[str, ...]
    label: int


def make_training_pairs(
    training: Dataset,
    index: Index,
    kb: KnowledgeBase,
    resources: Resources | None = None,
    k: int = 10,
    leave_one_out: bool = True,
) -> list[PairExample]:
    """One positive and the retrieved negatives for every linkable mention.

    The positive uses the gold concept's best retrieved name, or its
    preferred name when retrieval missed the gold concept. With
    ``leave_one_out`` the mention's own index entry is hidden from its query,
    so the positive is never a verbatim copy of the mention.
    """
    resources = resources or Resources()
    own_doc = {d.source: d.doc_ord for d in index.docs if d.source >= 0}
    pairs: list[PairExample] = []
    for pos, m in enumerate(training.mentions):
        if not m.is_linkable:
            continue
        tokens = tuple(resources.normalize_mention(m))
        if not tokens:
            continue
        exclude = (own_doc[pos],) if leave_one_out and pos in own_doc else ()
        cands = retrieve_candidates(index, tokens, k=k, exclude=exclude)
        gold_hit = next((c for c in cands if c.concept_id == m.gold), None)
        if gold_hit is not None:
            positive = gold_hit.tokens
        else:
            positive = tuple(resources.normalize_name(kb[m.gold].preferred_name))
        if positive:
            pairs.append(PairExample(tokens, tuple(positive), 1))
        for c in cands:
            if c.concept_id != m.gold:
                pairs.append(PairExample(tokens, c.tokens, 0))
    return pairs


@dataclass
class TrainingReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def lines(self) -> list[dict]:
        return list(self.epochs)


def encode_pairs(model: CrossEncoder, pairs: Sequence[PairExample]):
    L = model.hyper.max_len
    ids = np.zeros((len(pairs), L), dtype=np.int64)
    seg = np.zeros_like(ids)
    mask = np.zeros_like(ids)
    labels = np.zeros(len(pairs), dtype=np.int64)
    for i, p in enumerate(pairs):
        s = build_pair_sequence(p.mention_tokens, p.concept_name_tokens, model.vocab, L)
        ids[i], seg[i], mask[i] = s.token_ids, s.segment_ids, s.attention_mask
        labels[i] = p.label
    return ids, seg, mask, labels


def train(
    model: CrossEncoder,
    pairs: Sequence[PairExample],
    hyper: Hyperparams | None = None,
    dev: Dataset | None = None,
    index: Index | None = None,
    resources: Resources | None = None,
    k: int = 10,
) -> tuple[CrossEncoder, TrainingReport]:
    """Fit ``model`` with Adam on mean cross-entropy; keep the best dev epoch.

    Dev accuracy is end-to-end linking accuracy at the dev-optimal NIL
    threshold. Without a dev set the last epoch is returned. ``model`` is
    trained in place; the returned model is a separate snapshot.
    """
    from ..linker import Pipeline, learn_threshold_from_scores, score_dataset

    hyper = hyper or model.hyper
    if not pairs:
        raise TrainingError("no training pairs")
    if dev is not None and len(dev) and index is None:
        raise TrainingError("an index is required to compute dev accuracy")
    resources = resources or Resources()
    ids, seg, mask, labels = encode_pairs(model, pairs)
    lengths = mask.sum(axis=1)
    n = len(labels)
    shuffle_rng = np.random.default_rng([hyper.seed, 0])
    dropout_rng = np.random.default_rng([hyper.seed, 1]) if hyper.dropout > 0 else None
    opt = Adam(model.params, hyper.learning_rate)
    report = TrainingReport()
    best_acc = -1.0
    best = None

    for epoch in range(1, hyper.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b_no, start in enumerate(range(0, n, hyper.batch_size)):
            rows = order[start : start + hyper.batch_size]
            t = int(lengths[rows].max())
            loss, grads = model.loss_and_grads(
                ids[rows, :t], seg[rows, :t], mask[rows, :t], labels[rows],
                rng=dropout_rng, dropout=hyper.dropout,
            )
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingError(f"non-finite loss/gradient at epoch {epoch}, batch {b_no} (rows {rows.tolist()})")
            opt.step(model.params, grads)
            total += loss * len(rows)
        mean_loss = total / n
        dev_acc = None
        if dev is not None and len(dev):
            pipe = Pipeline(index=index, model=model, tau=0.0, resources=resources, k=k)
            tau, dev_acc = learn_threshold_from_scores(score_dataset(dev, pipe), dev)
            if dev_acc > best_acc:
                best_acc = dev_acc
                best = model.copy()
                report.best_epoch = epoch
        report.epochs.append({"epoch": epoch, "mean_loss": mean_loss, "dev_accuracy": dev_acc})
        logger.info("epoch %d  loss %.5f  dev_acc %s", epoch, mean_loss, dev_acc)

    if best is None:
        best = model.copy()
        report.best_epoch = hyper.epochs
    return best, report


def rank_candidates(
    model: CrossEncoder, mention_tokens: Sequence[str], candidates: Sequence[Candidate]
) -> list[tuple[Candidate, float]]:
    """Score and sort candidates: score desc, then retrieval rank, then id."""
    if not candidates:
        return []
    seqs = [model.encode_pair(mention_tokens, c.tokens) for c in candidates]
    scores = model.predict_proba(seqs)
    return sort_ranked(list(zip(candidates, scores.tolist())))


def sort_ranked(scored: Sequence[tuple[Candidate, float]]) -> list[tuple[Candidate, float]]:
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], i, scored[i][0].concept_id))
    return [scored[i] for i in order]
