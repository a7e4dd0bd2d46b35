"""NIL-threshold linking, dataset-level prediction and accuracy."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kb import NIL, UNKNOWN, Dataset, EntNormError, Gold, Label, Mention
from .preprocess import Resources
from .ranker.model import CrossEncoder
from .ranker.training import sort_ranked
from .retrieval import Candidate, Index, retrieve_candidates


@dataclass
class Pipeline:
    """Everything needed to link a mention.

    With ``model=None`` the pipeline is the BM25 baseline: the top retrieved
    concept is predicted whenever retrieval returns anything.
    """

    index: Index
    model: CrossEncoder | None = None
    tau: float = 0.0
    resources: Resources = field(default_factory=Resources)
    k: int = 10

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class LinkDecision:
    mention: Mention
    predicted: Gold
    score: float
    candidates: tuple[tuple[Candidate, float], ...] = ()


def decide(top: tuple[str, float] | None, tau: float) -> tuple[Gold, float]:
    """Apply the link rule: predict the top concept iff its score exceeds tau."""
    if top is None:
        return NIL, 0.0
    concept_id, score = top
    return (concept_id if score > tau else NIL), score


def _ranked(pipeline: Pipeline, candidates, scores) -> list[tuple[Candidate, float]]:
    if pipeline.model is None:
        return [(c, c.bm25) for c in candidates]
    return sort_ranked(list(zip(candidates, scores)))


def link(mention: Mention, pipeline: Pipeline) -> LinkDecision:
    return link_dataset(Dataset((mention,)), pipeline)[0]


def rank_dataset(ds: Dataset, pipeline: Pipeline) -> list[list[tuple[Candidate, float]]]:
    """Retrieve and rerank candidates for every mention, scoring all pairs in one pass."""
    res = pipeline.resources
    all_cands = []
    seqs = []
    for m in ds.mentions:
        tokens = res.normalize_mention(m)
        cands = retrieve_candidates(pipeline.index, tokens, k=pipeline.k) if tokens else []
        all_cands.append(cands)
        if pipeline.model is not None:
            seqs.extend(pipeline.model.encode_pair(tokens, c.tokens) for c in cands)
    if pipeline.model is not None and seqs:
        flat = pipeline.model.predict_proba(seqs).tolist()
    else:
        flat = []
    out = []
    pos = 0
    for cands in all_cands:
        scores = flat[pos : pos + len(cands)] if pipeline.model is not None else None
        pos += len(cands) if pipeline.model is not None else 0
        out.append(_ranked(pipeline, cands, scores))
    return out


def score_dataset(ds: Dataset, pipeline: Pipeline) -> list[tuple[str, float] | None]:
    """Top (concept id, score) per mention, ``None`` when nothing was retrieved."""
    return [(r[0][0].concept_id, r[0][1]) if r else None for r in rank_dataset(ds, pipeline)]


def link_dataset(ds: Dataset, pipeline: Pipeline) -> list[LinkDecision]:
    decisions = []
    for m, ranked in zip(ds.mentions, rank_dataset(ds, pipeline)):
        top = (ranked[0][0].concept_id, ranked[0][1]) if ranked else None
        if pipeline.model is None:
            predicted, score = (NIL, 0.0) if top is None else top
        else:
            predicted, score = decide(top, pipeline.tau)
        decisions.append(LinkDecision(m, predicted, float(score), tuple(ranked)))
    return decisions


# -- NIL threshold -----------------------------------------------------------


def _gold_arrays(tops, gold: Dataset):
    golds = [m.gold for m in gold.mentions]
    if any(g is UNKNOWN for g in golds):
        raise EntNormError("threshold learning requires labeled dev mentions")
    has = np.array([t is not None for t in tops], dtype=bool)
    scores = np.array([t[1] if t is not None else 0.0 for t in tops], dtype=np.float64)
    right_if_linked = np.array([t is not None and t[0] == g for t, g in zip(tops, golds)], dtype=bool)
    gold_nil = np.array([g is NIL for g in golds], dtype=bool)
    return has, scores, right_if_linked, gold_nil


def correct_counts(tops, gold: Dataset, taus: np.ndarray) -> np.ndarray:
    """Number of correct decisions for each threshold in ``taus``."""
    has, scores, right, gold_nil = _gold_arrays(tops, gold)
    out = np.empty(len(taus), dtype=np.int64)
    step = max(1, 2_000_000 // max(1, len(scores)))
    for i in range(0, len(taus), step):
        t = np.asarray(taus[i : i + step])[:, None]
        linked = has[None, :] & (scores[None, :] > t)
        out[i : i + step] = np.where(linked, right[None, :], gold_nil[None, :]).sum(axis=1)
    return out


def learn_threshold_from_scores(tops: Sequence[tuple[str, float] | None], dev: Dataset) -> tuple[float, float]:
    """Exact dev-accuracy maximizer over {0} U observed top scores U {1}.

    Accuracy only changes at observed scores, so this candidate set is
    exhaustive. Ties go to the smallest threshold. Returns ``(tau, accuracy)``.
    """
    if len(dev) == 0:
        raise EntNormError("cannot learn a NIL threshold from an empty dev set")
    if len(tops) != len(dev):
        raise EntNormError("scores and dev set are misaligned")
    observed = [t[1] for t in tops if t is not None]
    taus = np.unique(np.array([0.0, 1.0, *observed], dtype=np.float64))
    counts = correct_counts(tops, dev, taus)
    best = int(np.argmax(counts))
    return float(taus[best]), counts[best] / len(dev)


def learn_nil_threshold(model: CrossEncoder, index: Index, dev: Dataset,
                        resources: Resources | None = None, k: int = 10) -> float:
    pipe = Pipeline(index=index, model=model, tau=0.0, resources=resources or Resources(), k=k)
    tau, _ = learn_threshold_from_scores(score_dataset(dev, pipe), dev)
    return tau


# -- evaluation --------------------------------------------------------------


def is_correct(predicted: Gold, gold: Gold) -> bool:
    if gold is UNKNOWN:
        raise EntNormError("cannot evaluate against an unlabeled mention")
    return predicted == gold


def evaluate(decisions: Sequence[LinkDecision] | Sequence[Gold], gold: Dataset) -> float:
    """Fraction of mentions whose prediction (concept id or NIL) equals gold."""
    if len(decisions) != len(gold):
        raise EntNormError(f"{len(decisions)} predictions for {len(gold)} gold mentions")
    if len(gold) == 0:
        raise EntNormError("cannot evaluate an empty dataset")
    preds = [d.predicted if isinstance(d, LinkDecision) else d for d in decisions]
    return sum(is_correct(p, m.gold) for p, m in zip(preds, gold.mentions)) / len(gold)


def evaluation_report(preds: Sequence[Gold], gold: Dataset) -> dict:
    return {
        "accuracy": evaluate(preds, gold),
        "n": len(gold),
        "n_nil_gold": gold.n_unlinkable,
        "n_nil_pred": sum(1 for p in preds if p is NIL),
    }


# -- predictions.jsonl ---------------------------------------------------------


def prediction_record(d: LinkDecision) -> dict:
    predicted = d.predicted.value if isinstance(d.predicted, Label) else d.predicted
    return {"doc_id": d.mention.doc_id, "mention": d.mention.text, "predicted": predicted, "score": d.score}


def save_predictions(decisions: Sequence[LinkDecision], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(json.dumps(prediction_record(d), ensure_ascii=False) + "\n")


def load_predictions(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise EntNormError(f"{path}: predictions file not found")
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EntNormError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "predicted" not in rec:
                raise EntNormError(f"{path}:{lineno}: missing 'predicted'")
            rec["predicted"] = NIL if rec["predicted"] == NIL.value else rec["predicted"]
            rows.append(rec)
    return rows
