"""Cross-encoder reranking of retrieved candidate concepts."""
from .checkpoint import load_checkpoint, save_checkpoint
from .model import CrossEncoder, Hyperparams, forward, n_parameters, param_shapes, score_pair, softmax
from .optim import Adam
from .training import (
    PairExample,
    TrainingError,
    TrainingReport,
    make_training_pairs,
    rank_candidates,
    train,
)
from .vocab import CLS, PAD, SEP, UNK, PairSequence, Vocab, build_pair_sequence, build_vocab

__all__ = [
    "Adam",
    "CLS",
    "CrossEncoder",
    "Hyperparams",
    "PAD",
    "PairExample",
    "PairSequence",
    "SEP",
    "TrainingError",
    "TrainingReport",
    "UNK",
    "Vocab",
    "build_pair_sequence",
    "build_vocab",
    "forward",
    "load_checkpoint",
    "make_training_pairs",
    "n_parameters",
    "param_shapes",
    "rank_candidates",
    "save_checkpoint",
    "score_pair",
    "softmax",
    "train",
]
