"""Small BERT-style cross-encoder in NumPy with hand-written backpropagation.

Architecture: token + position + segment embeddings followed by a layer
norm, ``L`` post-norm
transformer layers (multi-head self-attention, GELU feed-forward), and a
``K x H`` softmax classifier on the final ``[CLS]`` state. Arithmetic is
float64 throughout.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import erf

from ..kb import EntNormError
from .vocab import PairSequence, Vocab, build_pair_sequence, stack_sequences

N_LABELS = 2
LN_EPS = 1e-12
SCORE_BLOCK = 64

_LAYER_PARAMS = (
    "q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "o_w", "o_b",
    "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g", "ln2_b",
)


@dataclass(frozen=True)
class Hyperparams:
    H: int = 64
    L: int = 2
    A: int = 4
    max_len: int = 32
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 10
    seed: int = 0
    dropout: float = 0.1
    allow_any_batch: bool = False

    def __post_init__(self):
        if self.H < 1 or self.L < 1 or self.A < 1:
            raise ValueError("H, L and A must be positive")
        if self.H % self.A:
            raise ValueError(f"H={self.H} is not divisible by A={self.A}")
        if self.max_len < 4:
            raise ValueError("max_len must be at least 4")
        if not self.allow_any_batch and self.batch_size not in (16, 32):
            raise ValueError(f"batch_size must be 16 or 32 (got {self.batch_size}); set allow_any_batch to override")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 1 <= self.epochs <= 10:
            raise ValueError("epochs must lie in 1..10")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


def param_shapes(V: int, H: int, L: int, max_len: int) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint order."""
    shapes = [("tok_emb", (V, H)), ("pos_emb", (max_len, H)), ("seg_emb", (2, H)),
              ("emb_ln_g", (H,)), ("emb_ln_b", (H,))]
    per_layer = {
        "q_w": (H, H), "q_b": (H,), "k_w": (H, H), "k_b": (H,),
        "v_w": (H, H), "v_b": (H,), "o_w": (H, H), "o_b": (H,),
        "ln1_g": (H,), "ln1_b": (H,),
        "ff1_w": (H, 4 * H), "ff1_b": (4 * H,), "ff2_w": (4 * H, H), "ff2_b": (H,),
        "ln2_g": (H,), "ln2_b": (H,),
    }
    for layer in range(L):
        shapes += [(f"layer{layer}.{name}", per_layer[name]) for name in _LAYER_PARAMS]
    shapes += [("cls_w", (N_LABELS, H)), ("cls_b", (N_LABELS,))]
    return shapes


def n_parameters(V: int, H: int, L: int, max_len: int) -> int:
    return sum(math.prod(s) for _, s in param_shapes(V, H, L, max_len))


def init_params(V: int, hyper: Hyperparams, seed: int | None = None) -> dict[str, np.ndarray]:
    """N(0, 1/fan_in) weights, zero biases, unit layer-norm gains.

    Embedding tables use fan_in = H. The small fixed std common for large
    pre-trained encoders leaves the attention logits of a small model this
    close to zero that training stalls for several epochs.
    """
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(V, hyper.H, hyper.L, hyper.max_len):
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif leaf.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[1] if leaf in ("cls_w", "tok_emb", "pos_emb", "seg_emb") else shape[0]
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
    return params


# -- primitives --------------------------------------------------------------


# Float64 softmax rounds to exactly 0 or 1 once the logit gap passes ~37;
# scores are pinned to the nearest representable values inside (0, 1).
_SCORE_LO = np.nextafter(0.0, 1.0)
_SCORE_HI = np.nextafter(1.0, 0.0)


def open_unit(p):
    return np.clip(p, _SCORE_LO, _SCORE_HI)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return x * _gauss_cdf(x)


def _gauss_cdf(x):
    return 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_grad(x, cdf=None):
    if cdf is None:
        cdf = _gauss_cdf(x)
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


class CrossEncoder:
    """Parameters plus forward/backward passes over batches of pair sequences."""

    def __init__(self, vocab: Vocab, hyper: Hyperparams, params: dict[str, np.ndarray] | None = None):
        self.vocab = vocab
        self.hyper = hyper
        self.params = params if params is not None else init_params(len(vocab), hyper)
        expected = param_shapes(len(vocab), hyper.H, hyper.L, hyper.max_len)
        if [n for n, _ in expected] != list(self.params):
            raise EntNormError("parameter names do not match the architecture")
        for name, shape in expected:
            arr = self.params[name]
            if arr.shape != shape:
                raise EntNormError(f"parameter {name} has shape {arr.shape}, expected {shape}")

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "CrossEncoder":
        return CrossEncoder(self.vocab, self.hyper, {k: v.copy() for k, v in self.params.items()})

    # -- forward ------------------------------------------------------------

    def forward(self, ids, seg, mask, rng=None, dropout: float | None = None):
        """Run the encoder on a (B, T) batch.

        Returns ``(C, logits, cache)``; ``C`` is the (B, H) final ``[CLS]``
        state. Dropout is active only when an ``rng`` is supplied.
        """
        p = self.params
        hp = self.hyper
        rate = hp.dropout if dropout is None else dropout
        B, T = ids.shape
        if T > hp.max_len:
            raise EntNormError(f"sequence length {T} exceeds max_len {hp.max_len}")
        if ids.max(initial=0) >= len(self.vocab):
            raise EntNormError("token id outside the vocabulary")
        H, A = hp.H, hp.A
        d = H // A
        scale = 1.0 / math.sqrt(d)
        key_ok = mask.astype(bool)[:, None, None, :]

        x = p["tok_emb"][ids] + p["pos_emb"][:T][None, :, :] + p["seg_emb"][seg]
        x, ln_emb = _layer_norm(x, p["emb_ln_g"], p["emb_ln_b"])
        x, drop_emb = _dropout(x, rate, rng)
        caches = []
        for layer in range(hp.L):
            w = {n: p[f"layer{layer}.{n}"] for n in _LAYER_PARAMS}
            q = (x @ w["q_w"] + w["q_b"]).reshape(B, T, A, d).transpose(0, 2, 1, 3)
            k = (x @ w["k_w"] + w["k_b"]).reshape(B, T, A, d).transpose(0, 2, 1, 3)
            v = (x @ w["v_w"] + w["v_b"]).reshape(B, T, A, d).transpose(0, 2, 1, 3)
            scores = np.where(key_ok, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
            att = softmax(scores)
            ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, H)
            attn_out = ctx @ w["o_w"] + w["o_b"]
            attn_out, drop_attn = _dropout(attn_out, rate, rng)
            h1, ln1 = _layer_norm(x + attn_out, w["ln1_g"], w["ln1_b"])
            pre = h1 @ w["ff1_w"] + w["ff1_b"]
            cdf = _gauss_cdf(pre)
            act = pre * cdf
            ff = act @ w["ff2_w"] + w["ff2_b"]
            ff, drop_ff = _dropout(ff, rate, rng)
            h2, ln2 = _layer_norm(h1 + ff, w["ln2_g"], w["ln2_b"])
            caches.append((x, q, k, v, att, ctx, drop_attn, ln1, h1, pre, cdf, act, drop_ff, ln2))
            x = h2
        C = x[:, 0, :]
        C_in, drop_cls = _dropout(C, rate, rng)
        logits = C_in @ p["cls_w"].T + p["cls_b"]
        cache = (ids, seg, ln_emb, drop_emb, caches, x, C_in, drop_cls)
        return C, logits, cache

    # -- backward -----------------------------------------------------------

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        p = self.params
        hp = self.hyper
        ids, seg, ln_emb, drop_emb, caches, x_last, C_in, drop_cls = cache
        B, T = ids.shape
        H, A = hp.H, hp.A
        d = H // A
        scale = 1.0 / math.sqrt(d)
        grads = {}

        grads["cls_w"] = dlogits.T @ C_in
        grads["cls_b"] = dlogits.sum(axis=0)
        dC = dlogits @ p["cls_w"]
        if drop_cls is not None:
            dC = dC * drop_cls
        dx = np.zeros_like(x_last)
        dx[:, 0, :] = dC

        for layer in reversed(range(hp.L)):
            pre_name = f"layer{layer}."
            w = {n: p[pre_name + n] for n in _LAYER_PARAMS}
            x, q, k, v, att, ctx, drop_attn, ln1, h1, pre, cdf, act, drop_ff, ln2 = caches[layer]
            g = {}
            # second residual block
            dsum2, g["ln2_g"], g["ln2_b"] = _layer_norm_backward(dx, w["ln2_g"], ln2)
            dff = dsum2 if drop_ff is None else dsum2 * drop_ff
            g["ff2_w"] = act.reshape(-1, 4 * H).T @ dff.reshape(-1, H)
            g["ff2_b"] = dff.sum(axis=(0, 1))
            dpre = (dff @ w["ff2_w"].T) * gelu_grad(pre, cdf)
            g["ff1_w"] = h1.reshape(-1, H).T @ dpre.reshape(-1, 4 * H)
            g["ff1_b"] = dpre.sum(axis=(0, 1))
            dh1 = dsum2 + dpre @ w["ff1_w"].T
            # first residual block
            dsum1, g["ln1_g"], g["ln1_b"] = _layer_norm_backward(dh1, w["ln1_g"], ln1)
            dattn = dsum1 if drop_attn is None else dsum1 * drop_attn
            g["o_w"] = ctx.reshape(-1, H).T @ dattn.reshape(-1, H)
            g["o_b"] = dattn.sum(axis=(0, 1))
            dctx = (dattn @ w["o_w"].T).reshape(B, T, A, d).transpose(0, 2, 1, 3)
            datt = dctx @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ dctx
            dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
            dq = dscores @ k
            dk = dscores.transpose(0, 1, 3, 2) @ q
            dq, dk, dv = (t.transpose(0, 2, 1, 3).reshape(B, T, H) for t in (dq, dk, dv))
            xf = x.reshape(-1, H)
            for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
                g[f"{name}_w"] = xf.T @ dproj.reshape(-1, H)
                g[f"{name}_b"] = dproj.sum(axis=(0, 1))
            dx = dsum1 + dq @ w["q_w"].T + dk @ w["k_w"].T + dv @ w["v_w"].T
            for n in _LAYER_PARAMS:
                grads[pre_name + n] = g[n]

        if drop_emb is not None:
            dx = dx * drop_emb
        dx, grads["emb_ln_g"], grads["emb_ln_b"] = _layer_norm_backward(dx, p["emb_ln_g"], ln_emb)
        dtok = np.zeros_like(p["tok_emb"])
        np.add.at(dtok, ids.ravel(), dx.reshape(-1, H))
        dpos = np.zeros_like(p["pos_emb"])
        dpos[:T] = dx.sum(axis=0)
        dseg = np.zeros_like(p["seg_emb"])
        np.add.at(dseg, seg.ravel(), dx.reshape(-1, H))
        grads["tok_emb"], grads["pos_emb"], grads["seg_emb"] = dtok, dpos, dseg
        return {name: grads[name] for name in p}

    def loss_and_grads(self, ids, seg, mask, labels, rng=None, dropout: float | None = None):
        """Mean cross-entropy over the batch and its parameter gradients."""
        _, logits, cache = self.forward(ids, seg, mask, rng=rng, dropout=dropout)
        probs = softmax(logits)
        B = len(labels)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(B), labels].mean()
        dlogits = probs.copy()
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B
        return float(loss), self.backward(cache, dlogits)

    # -- inference ----------------------------------------------------------

    def predict_proba(self, seqs: Sequence[PairSequence]) -> np.ndarray:
        """Label-1 probabilities for a list of sequences (dropout off).

        Sequences are scored in fixed-size blocks of equal real length, topped
        up with filler rows. The BLAS kernels then see identical shapes no
        matter how callers group their requests, so a sequence's score is
        bit-identical whether it is scored alone or among thousands.
        """
        out = np.empty(len(seqs))
        if not seqs:
            return out
        ids, seg, mask = stack_sequences(seqs, trim=False)
        lengths = mask.sum(axis=1)
        for t in np.unique(lengths):
            rows = np.flatnonzero(lengths == t)
            for start in range(0, len(rows), SCORE_BLOCK):
                r = rows[start : start + SCORE_BLOCK]
                block = np.concatenate([r, np.full(SCORE_BLOCK - len(r), r[0])])
                _, logits, _ = self.forward(ids[block, :t], seg[block, :t], mask[block, :t], dropout=0.0)
                out[r] = open_unit(softmax(logits)[: len(r), 1])
        return out

    def encode_pair(self, mention_tokens, concept_tokens) -> PairSequence:
        return build_pair_sequence(mention_tokens, concept_tokens, self.vocab, self.hyper.max_len)


def forward(model: CrossEncoder, seq: PairSequence) -> tuple[np.ndarray, np.ndarray]:
    """``(C, probs)`` for one full-length sequence, dropout disabled."""
    if seq.token_ids.shape != (model.hyper.max_len,):
        raise EntNormError(
            f"sequence has shape {seq.token_ids.shape}, model expects ({model.hyper.max_len},)"
        )
    C, logits, _ = model.forward(
        seq.token_ids[None, :], seq.segment_ids[None, :], seq.attention_mask[None, :], dropout=0.0
    )
    return C[0], softmax(logits)[0]


def score_pair(model: CrossEncoder, mention_tokens, concept_tokens) -> float:
    """P(label = 1 | mention, concept), kept strictly inside (0, 1)."""
    _, probs = forward(model, model.encode_pair(mention_tokens, concept_tokens))
    return float(open_unit(probs[1]))
