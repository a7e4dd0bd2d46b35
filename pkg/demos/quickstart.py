"""Link a handful of clinical mentions against a toy knowledge base.

Walks through the pipeline stage by stage: preprocessing, BM25 candidate
generation, cross-encoder training, NIL-threshold learning and linking.

    python3 demos/quickstart.py
"""
from entnorm.kb import NIL, Concept, Dataset, Document, KnowledgeBase, Mention
from entnorm.linker import Pipeline, evaluate, learn_nil_threshold, link_dataset
from entnorm.preprocess import Resources
from entnorm.ranker import CrossEncoder, Hyperparams, build_vocab, make_training_pairs, train
from entnorm.retrieval import build_index, retrieve_candidates

kb = KnowledgeBase([
    Concept("C001", ("heart failure", "cardiac failure")),
    Concept("C002", ("kidney stone", "renal calculus")),
    Concept("C003", ("first degree burn", "superficial burn")),
    Concept("C004", ("wilms tumor", "nephroblastoma")),
    Concept("C005", ("heart murmur",)),
])

# Per-document abbreviation definitions and a spelling lexicon feed preprocessing.
documents = {
    "d1": Document("d1", "History of Wilms tumor (WT) in childhood; WT resected."),
}
resources = Resources(lexicon={"hart": "heart", "kidny": "kidney"}, documents=documents)

print("normalized:", resources.normalize_mention(Mention("d1", "WT")))
print("normalized:", resources.normalize_mention("Burns, first degree"))

train_set = Dataset((
    Mention("t1", "failing heart", gold="C001"),
    Mention("t2", "renal stones", gold="C002"),
    Mention("t3", "burn, first degree", gold="C003"),
    Mention("t4", "cardiac murmur", gold="C005"),
    Mention("t5", "nephroblastoma of kidney", gold="C004"),
    Mention("t6", "fractured wrist", gold=NIL),
))
index = build_index(kb, train_set, resources)
print(index)
for cand in retrieve_candidates(index, resources.normalize_mention("hart failure"), k=3):
    print(f"  {cand.concept_id}  {cand.bm25:.3f}  {cand.matched_name!r}")

hyper = Hyperparams(H=16, L=1, A=2, max_len=16, epochs=10, dropout=0.0, seed=1)
model = CrossEncoder(build_vocab(kb, train_set, resources), hyper)
pairs = make_training_pairs(train_set, index, kb, resources)
print(f"{len(pairs)} training pairs, {model.n_parameters} parameters")
model, report = train(model, pairs, hyper)
print("loss by epoch:", [round(e["mean_loss"], 4) for e in report.epochs])

dev = Dataset((
    Mention("v1", "cardiac failure", gold="C001"),
    Mention("v2", "broken ankle", gold=NIL),
))
tau = learn_nil_threshold(model, index, dev, resources)
print("tau =", tau)

test = Dataset((
    Mention("d1", "WT", gold="C004"),
    Mention("x2", "hart failure", gold="C001"),
    Mention("x3", "kidny stone", gold="C002"),
    Mention("x4", "sprained ankle", gold=NIL),
))
for d in link_dataset(test, Pipeline(index, model, tau, resources)):
    label = "NIL" if d.predicted is NIL else d.predicted
    print(f"  {d.mention.text!r:>16} -> {label:<5} score {d.score:.3f}")
print("accuracy:", evaluate(link_dataset(test, Pipeline(index, model, tau, resources)), test))
print("BM25 top-1 accuracy:", evaluate(link_dataset(test, Pipeline(index, None, resources=resources)), test))
