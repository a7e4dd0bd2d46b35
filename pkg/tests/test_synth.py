import pytest

from entnorm.kb import NIL, load_dataset, load_documents, load_kb
from entnorm.preprocess import Resources, detect_abbreviations, load_spelling_lexicon, tokenize
from entnorm.synth import SynthSpec, generate, write_corpus


@pytest.fixture(scope="module")
def corpus():
    return generate(SynthSpec(n_concepts=120, n_train=400, n_dev=50, n_test=130, nil_fraction=0.1, seed=7))


def test_proportions_exact(corpus):
    assert (len(corpus.train), len(corpus.dev), len(corpus.test)) == (400, 50, 130)
    assert corpus.train.n_unlinkable == 40
    assert corpus.dev.n_unlinkable == 5
    assert corpus.test.n_unlinkable == 13  # round(130 * 0.1)
    assert len(corpus.kb) == 120


def test_default_spec_sizes():
    spec = SynthSpec()
    assert (spec.n_concepts, spec.n_train, spec.n_dev, spec.n_test, spec.nil_fraction) == (300, 2000, 200, 500, 0.1)


def test_referential_integrity(corpus):
    for ds in (corpus.train, corpus.dev, corpus.test):
        for m in ds:
            assert m.gold is NIL or m.gold in corpus.kb
    doc_ids = {d.id for d in corpus.documents}
    assert all(m.doc_id in doc_ids for ds in (corpus.train, corpus.dev, corpus.test) for m in ds)


def test_spelling_lexicon_is_consistent(corpus):
    vocab = {t for c in corpus.kb.concepts() for n in c.names for t in tokenize(n)}
    for bad, good in corpus.spelling.items():
        assert bad != good
        assert bad not in vocab
    assert corpus.spelling


def test_abbreviated_mentions_resolve(corpus):
    docs = {d.id: d for d in corpus.documents}
    res = Resources(lexicon=corpus.spelling, documents=docs)
    n_abbrev = 0
    for m in corpus.train:
        if m.text.isupper() and len(m.text) >= 2:
            n_abbrev += 1
            assert m.text in detect_abbreviations(docs[m.doc_id])
            assert res.normalize_mention(m) != tokenize(m.text)
    assert n_abbrev > 0


def test_determinism_and_files(tmp_path):
    spec = SynthSpec(n_concepts=40, n_train=60, n_dev=10, n_test=20, seed=3)
    a = write_corpus(generate(spec), tmp_path / "a")
    b = write_corpus(generate(spec), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes(), key
    kb = load_kb(a["kb"])
    assert len(kb) == 40
    assert len(load_dataset(a["train"])) == 60
    assert len(load_documents(a["docs"])) == 90
    assert load_spelling_lexicon(a["spelling"]) == generate(spec).spelling
    c = write_corpus(generate(SynthSpec(n_concepts=40, n_train=60, n_dev=10, n_test=20, seed=4)), tmp_path / "c")
    assert c["kb"].read_bytes() != a["kb"].read_bytes()


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(nil_fraction=1.0)
    with pytest.raises(ValueError):
        SynthSpec(synonyms_per_concept=(3, 1))
    with pytest.raises(ValueError):
        SynthSpec(n_concepts=0)
