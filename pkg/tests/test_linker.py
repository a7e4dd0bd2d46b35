import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entnorm.kb import NIL, UNKNOWN, Concept, Dataset, EntNormError, KnowledgeBase, Mention
from entnorm.linker import (
    LinkDecision,
    Pipeline,
    correct_counts,
    decide,
    evaluate,
    evaluation_report,
    learn_nil_threshold,
    learn_threshold_from_scores,
    link,
    link_dataset,
    load_predictions,
    rank_dataset,
    save_predictions,
)
from entnorm.ranker import CrossEncoder, Hyperparams, build_vocab
from entnorm.retrieval import build_index
from oracles import dense_grid_threshold


@pytest.fixture(scope="module")
def pipeline_parts():
    kb = KnowledgeBase([
        Concept("C1", ("heart failure", "cardiac failure")),
        Concept("C2", ("kidney stone",)),
        Concept("C3", ("heart murmur",)),
    ])
    train_ds = Dataset((Mention("d1", "failing heart", None, "C1"),))
    idx = build_index(kb, train_ds)
    model = CrossEncoder(build_vocab(kb, train_ds), Hyperparams(H=8, L=1, A=2, max_len=16, seed=3))
    return kb, idx, model


def mentions(*texts, gold=UNKNOWN):
    return Dataset(tuple(Mention(f"d{i}", t, None, gold) for i, t in enumerate(texts)))


def test_decide_rule():
    assert decide(None, 0.0) == (NIL, 0.0)
    assert decide(("C1", 0.3), 0.0) == ("C1", 0.3)
    assert decide(("C1", 0.3), 0.3) == (NIL, 0.3)
    assert decide(("C1", 0.3), 0.29) == ("C1", 0.3)


def test_link_no_candidates_is_nil(pipeline_parts):
    _, idx, model = pipeline_parts
    d = link(Mention("d", "zebra"), Pipeline(idx, model, 0.0))
    assert d.predicted is NIL and d.score == 0.0 and d.candidates == ()


def test_link_tau_extremes(pipeline_parts):
    _, idx, model = pipeline_parts
    ds = mentions("heart failure", "kidney", "heart")
    for d in link_dataset(ds, Pipeline(idx, model, 0.0)):
        assert d.predicted is not NIL and 0.0 < d.score < 1.0
        assert d.predicted == d.candidates[0][0].concept_id
    assert all(d.predicted is NIL for d in link_dataset(ds, Pipeline(idx, model, 1.0)))


def test_baseline_predicts_bm25_top(pipeline_parts):
    _, idx, _ = pipeline_parts
    decs = link_dataset(mentions("heart failure", "kidney", "zebra"), Pipeline(idx, None))
    assert [d.predicted for d in decs] == ["C1", "C2", NIL]
    assert decs[0].score == decs[0].candidates[0][0].bm25


def test_pipeline_tau_range(pipeline_parts):
    _, idx, model = pipeline_parts
    with pytest.raises(ValueError):
        Pipeline(idx, model, 1.5)


def test_link_dataset_alignment_and_grouping(pipeline_parts):
    _, idx, model = pipeline_parts
    texts = ["heart failure", "kidney", "zebra", "heart", "cardiac stone", "murmur heart", "failing"]
    ds = mentions(*texts)
    pipe = Pipeline(idx, model, 0.4)
    assert link_dataset(Dataset(()), pipe) == []
    full = link_dataset(ds, pipe)
    assert [d.mention for d in full] == list(ds.mentions)
    singles = [link(m, pipe) for m in ds.mentions]
    assert [(d.predicted, d.score) for d in singles] == [(d.predicted, d.score) for d in full]
    chunked = []
    for start in range(0, len(ds), 3):
        chunked += rank_dataset(Dataset(ds.mentions[start : start + 3]), pipe)
    assert [[(c.concept_id, s) for c, s in r] for r in chunked] == \
           [[(c.concept_id, s) for c, s in d.candidates] for d in full]
    assert link_dataset(ds, pipe) == full


# -- threshold learning ------------------------------------------------------


def labeled(golds):
    return Dataset(tuple(Mention(f"d{i}", "x", None, g) for i, g in enumerate(golds)))


def test_threshold_all_linkable_correct():
    tops = [("C1", 0.9), ("C2", 0.4), ("C3", 0.7)]
    tau, acc = learn_threshold_from_scores(tops, labeled(["C1", "C2", "C3"]))
    assert (tau, acc) == (0.0, 1.0)


def test_threshold_all_nil():
    tops = [("C1", 0.9), ("C2", 0.4), None]
    tau, acc = learn_threshold_from_scores(tops, labeled([NIL, NIL, NIL]))
    assert (tau, acc) == (0.9, 1.0)


def test_threshold_empty_dev_and_unknown():
    with pytest.raises(EntNormError):
        learn_threshold_from_scores([], Dataset(()))
    with pytest.raises(EntNormError):
        learn_threshold_from_scores([("C1", 0.5)], labeled([UNKNOWN]))


MIXED = (
    [("C1", 0.91), ("C2", 0.35), ("C9", 0.52), ("C4", 0.77), ("C5", 0.12), ("C6", 0.66), None, ("C8", 0.44)],
    ["C1", NIL, NIL, "C4", NIL, "C6", NIL, "C7"],
)


@pytest.mark.parametrize("tops, golds", [
    ([("C1", 0.9), ("C2", 0.4), ("C3", 0.7)], ["C1", "C2", "C3"]),
    ([("C1", 0.9), ("C2", 0.4), None], [NIL, NIL, NIL]),
    MIXED,
])
def test_threshold_matches_dense_grid(tops, golds):
    tau, acc = learn_threshold_from_scores(tops, labeled(golds))
    grid_tau, grid_acc = dense_grid_threshold(tops, ["NIL" if g is NIL else g for g in golds])
    assert acc == pytest.approx(grid_acc, abs=1e-12)
    scores = sorted({0.0, 1.0, *(t[1] for t in tops if t)})
    above = [s for s in scores if s > tau]
    gap = (above[0] - tau) if above else 1e-3
    assert 0.0 <= grid_tau - tau <= max(gap, 1e-3)


def test_mixed_fixture_value():
    tops, golds = MIXED
    # tau = 0.52 links C1, C4 and C6 and sends every other mention to NIL
    assert learn_threshold_from_scores(tops, labeled(golds)) == (0.52, 7 / 8)


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 999), st.sampled_from(["C1", "C2", NIL])),
                min_size=1, max_size=30))
@settings(max_examples=150, deadline=None)
def test_learned_tau_is_optimal(rows):
    tops = [("C1", s / 1000) if has else None for has, s, _ in rows]
    dev = labeled([g for _, _, g in rows])
    tau, acc = learn_threshold_from_scores(tops, dev)
    for probe in [0.0, 1.0] + [t[1] for t in tops if t]:
        assert correct_counts(tops, dev, np.array([probe]))[0] / len(dev) <= acc + 1e-12
    assert 0.0 <= tau <= 1.0


def test_nil_count_monotone_in_tau(pipeline_parts):
    _, idx, model = pipeline_parts
    ds = mentions("heart failure", "kidney", "zebra", "heart", "cardiac stone", "murmur heart")
    counts = []
    for tau in np.linspace(0.0, 1.0, 100):
        counts.append(sum(d.predicted is NIL for d in link_dataset(ds, Pipeline(idx, model, float(tau)))))
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    assert counts[0] == 1 and counts[-1] == len(ds)


def test_learn_nil_threshold_end_to_end(pipeline_parts):
    _, idx, model = pipeline_parts
    dev = Dataset((Mention("a", "heart failure", None, "C1"), Mention("b", "zebra", None, NIL),
                   Mention("c", "kidney", None, NIL)))
    tau = learn_nil_threshold(model, idx, dev)
    assert 0.0 <= tau <= 1.0
    assert learn_nil_threshold(model, idx, dev) == tau


# -- evaluation --------------------------------------------------------------


def test_evaluate_cases():
    gold = labeled(["C1", "C2", NIL, "C4"])
    assert evaluate(["C1", "C9", NIL, NIL], gold) == 0.5
    assert evaluate(["C1", "C2", NIL, "C4"], gold) == 1.0
    assert evaluate(["C1", "C2", "C3", "C4"], gold) == 0.75
    with pytest.raises(EntNormError):
        evaluate(["C1"], gold)
    with pytest.raises(EntNormError):
        evaluate(["C1"], labeled([UNKNOWN]))
    with pytest.raises(EntNormError):
        evaluate([], Dataset(()))


@given(st.lists(st.tuples(st.sampled_from(["C1", "C2", NIL]), st.sampled_from(["C1", "C2", NIL])),
                min_size=1, max_size=20), st.randoms())
@settings(max_examples=100)
def test_evaluate_permutation_equivariant(rows, rnd):
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    a = evaluate([p for p, _ in rows], labeled([g for _, g in rows]))
    b = evaluate([p for p, _ in shuffled], labeled([g for _, g in shuffled]))
    assert a == b


def test_evaluation_report():
    gold = labeled(["C1", NIL, NIL, "C4"])
    rep = evaluation_report(["C1", NIL, "C3", NIL], gold)
    assert rep == {"accuracy": 0.5, "n": 4, "n_nil_gold": 2, "n_nil_pred": 2}


def test_predictions_round_trip(tmp_path, pipeline_parts):
    _, idx, model = pipeline_parts
    ds = mentions("heart failure", "zebra")
    decs = link_dataset(ds, Pipeline(idx, model, 0.0))
    save_predictions(decs, tmp_path / "p.jsonl")
    rows = load_predictions(tmp_path / "p.jsonl")
    assert [r["predicted"] for r in rows] == [decs[0].predicted, NIL]
    assert rows[1] == {"doc_id": "d1", "mention": "zebra", "predicted": NIL, "score": 0.0}
    assert '"predicted": "NIL"' in (tmp_path / "p.jsonl").read_text().splitlines()[1]
    assert isinstance(decs[0], LinkDecision)
