"""Entity normalization: BM25 candidate generation, cross-encoder reranking and NIL thresholding."""

__version__ = "0.1.0"
