import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entnorm.kb import NIL, Concept, Dataset, EntNormError, KnowledgeBase, Mention
from entnorm.retrieval import (
    Index,
    NameDoc,
    bm25_score,
    build_index,
    load_index,
    retrieve_candidates,
    save_index,
)
from oracles import bm25_brute_force, brute_force_candidates

# Hand-computed: N=2, avgdl=1.5, idf(heart)=ln 1.2, idf(failur)=ln 2,
# d1 norm = 1.2 * (0.25 + 0.75 * 2 / 1.5) = 1.5, d2 norm = 0.9.
SCORE_D1 = 0.770412488871431943  # 0.88 * ln 2.4
SCORE_D2 = 0.211109171024579041  # ln 1.2 * 2.2 / 1.9


def index_of(*token_lists, concepts=None):
    concepts = concepts or [f"C{i}" for i in range(len(token_lists))]
    docs = [NameDoc(i, c, " ".join(t), tuple(t)) for i, (c, t) in enumerate(zip(concepts, token_lists))]
    return Index(docs)


def test_bm25_hand_computed():
    kb = KnowledgeBase([Concept("C1", ("heart failure",)), Concept("C2", ("heart",))])
    idx = build_index(kb)
    q = ["heart", "failur"]
    assert idx.docs[0].tokens == ("heart", "failur")
    assert bm25_score(idx, q, 0) == pytest.approx(SCORE_D1, abs=1e-9)
    assert bm25_score(idx, q, 1) == pytest.approx(SCORE_D2, abs=1e-9)
    assert SCORE_D1 == pytest.approx(0.88 * math.log(2.4), abs=1e-15)
    cands = retrieve_candidates(idx, q)
    assert [c.concept_id for c in cands] == ["C1", "C2"]
    assert cands[0].bm25 == pytest.approx(SCORE_D1, abs=1e-9)


def test_duplicate_query_terms_count_once():
    idx = index_of(["heart", "failur"], ["heart"])
    assert bm25_score(idx, ["heart", "heart", "failur"], 0) == bm25_score(idx, ["heart", "failur"], 0)


def test_absent_terms_score_zero():
    idx = index_of(["heart", "failur"], ["heart"])
    assert bm25_score(idx, ["kidney"], 1) == 0.0
    assert bm25_score(idx, [], 0) == 0.0
    assert retrieve_candidates(idx, ["kidney"]) == []
    assert retrieve_candidates(idx, []) == []
    with pytest.raises(IndexError):
        bm25_score(idx, ["heart"], 5)


def test_identical_docs_identical_scores():
    idx = index_of(["a1", "b1"], ["a1", "b1"], ["c1"])
    for q in (["a1"], ["b1", "c1"], ["a1", "b1", "c1"]):
        assert bm25_score(idx, q, 0) == bm25_score(idx, q, 1)


def test_build_index_counts():
    kb = KnowledgeBase([Concept("C1", ("heart failure", "cardiac failure")), Concept("C2", ("kidney stone",))])
    train = Dataset((Mention("d1", "failing heart", None, "C1"), Mention("d2", "odd thing", None, NIL),
                     Mention("d3", "unlabeled")))
    idx = build_index(kb, train)
    assert idx.N == 4
    assert idx.report.n_name_docs == 3 and idx.report.n_mention_docs == 1
    assert idx.docs[3].source == 0 and idx.docs[3].concept_id == "C1"
    assert idx.avgdl == pytest.approx(2.0)


def test_build_index_excludes_empty_names():
    kb = KnowledgeBase([Concept("C1", ("heart failure", "–")), Concept("C2", ("kidney",))])
    idx = build_index(kb)
    assert idx.N == 2
    assert idx.report.excluded == [("name", "C1", "–")]


def test_build_index_errors():
    with pytest.raises(EntNormError):
        build_index(KnowledgeBase())
    kb = KnowledgeBase([Concept("C1", ("x ray",))])
    with pytest.raises(EntNormError, match="C9"):
        build_index(kb, Dataset((Mention("d", "y", None, "C9"),)))


def test_exact_unique_name_ranks_first():
    kb = KnowledgeBase([Concept("C001", ("left kidney stone",)), Concept("C007", ("heart murmur grade",)),
                        Concept("C003", ("heart block",)), Concept("C004", ("murmur",))])
    idx = build_index(kb)
    q = ["heart", "murmur", "grade"]
    cands = retrieve_candidates(idx, q)
    assert cands[0].concept_id == "C007"
    scores = bm25_brute_force([list(d.tokens) for d in idx.docs], q)
    assert scores[1] > max(s for i, s in enumerate(scores) if i != 1)


def test_concept_dedup_keeps_best_name():
    idx = index_of(["heart"], ["heart", "failur"], ["heart", "failur", "acut"], concepts=["C1", "C1", "C1"])
    cands = retrieve_candidates(idx, ["heart", "failur"])
    assert len(cands) == 1
    assert cands[0].matched_name == "heart failur"


def test_exclude_documents():
    idx = index_of(["heart", "failur"], ["heart"])
    cands = retrieve_candidates(idx, ["heart", "failur"], exclude=[0])
    assert [c.concept_id for c in cands] == ["C1"]


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        retrieve_candidates(index_of(["a1"]), ["a1"], k=0)


VOCAB = [f"t{i}" for i in range(10)]


def random_corpus(rng: random.Random):
    n_docs = rng.randint(1, 50)
    n_vocab = rng.randint(1, 10)
    docs = [[rng.choice(VOCAB[:n_vocab]) for _ in range(rng.randint(1, 6))] for _ in range(n_docs)]
    concepts = [f"C{rng.randint(0, max(1, n_docs // 2))}" for _ in range(n_docs)]
    query = [rng.choice(VOCAB) for _ in range(rng.randint(0, 5))]
    return docs, concepts, query


def test_oracle_equivalence_randomized():
    rng = random.Random(20240601)
    for _ in range(300):
        docs, concepts, query = random_corpus(rng)
        idx = index_of(*docs, concepts=concepts)
        k = rng.randint(1, 12)
        got = [(c.concept_id, c.bm25, c.doc_ord) for c in retrieve_candidates(idx, query, k)]
        want = brute_force_candidates(docs, concepts, query, k)
        assert [g[0] for g in got] == [w[0] for w in want]
        assert [g[2] for g in got] == [w[2] for w in want]
        for g, w in zip(got, want):
            assert abs(g[1] - w[1]) <= 1e-9


@given(
    st.lists(st.lists(st.sampled_from(VOCAB[:5]), min_size=1, max_size=5), min_size=1, max_size=12),
    st.lists(st.sampled_from(VOCAB[:6]), max_size=4),
    st.integers(1, 12),
)
@settings(max_examples=200, deadline=None)
def test_candidate_list_invariants(docs, query, k):
    concepts = [f"C{i % 4}" for i in range(len(docs))]
    idx = index_of(*docs, concepts=concepts)
    cands = retrieve_candidates(idx, query, k)
    assert len(cands) <= k
    ids = [c.concept_id for c in cands]
    assert len(set(ids)) == len(ids)
    keys = [(-c.bm25, c.doc_ord) for c in cands]
    assert keys == sorted(keys)
    assert all(c.bm25 > 0 for c in cands)
    for term in idx.postings:
        assert idx.idf(term) >= 0
        plist = idx.postings[term]
        assert [p[0] for p in plist] == sorted(p[0] for p in plist)
        assert all(tf >= 1 for _, tf in plist)
    assert retrieve_candidates(idx, query, k) == cands


@given(st.integers(0, 3), st.integers(1, 4), st.integers(0, 3))
@settings(max_examples=100, deadline=None)
def test_tf_monotone_at_fixed_length(n_target, extra, n_other):
    # Raise tf of "t0" by replacing filler tokens, keeping doc length fixed.
    length = n_target + extra + n_other + 1
    background = [["t1", "t2"], ["t0", "t3"], ["t4"]]
    scores = []
    for tf in range(n_target, n_target + extra + 1):
        doc = ["t0"] * tf + ["t9"] * (length - tf)
        idx = index_of(doc, *background)
        scores.append(bm25_score(idx, ["t0", "t1"], 0))
    assert all(a <= b for a, b in zip(scores, scores[1:]))


def test_index_round_trip(tmp_path):
    kb = KnowledgeBase([Concept("C1", ("heart failure", "cardiac failure")), Concept("C2", ("kidney stone",))])
    train = Dataset((Mention("d1", "failing heart", None, "C1"),))
    idx = build_index(kb, train)
    save_index(idx, tmp_path / "a.json")
    again = load_index(tmp_path / "a.json")
    save_index(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    for q in (["heart"], ["failur", "kidney"], ["cardiac", "heart", "stone"]):
        assert retrieve_candidates(again, q) == retrieve_candidates(idx, q)
    assert again.fingerprint == idx.fingerprint


def test_load_index_rejects_garbage(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(EntNormError):
        load_index(p)
    with pytest.raises(EntNormError):
        load_index(tmp_path / "missing.json")
