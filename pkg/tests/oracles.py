"""Independent reference implementations used as test oracles.

These are deliberately naive: plain Python loops and lists, no numpy, no
shared code with the package beyond the data containers.
"""
import math


# -- BM25 --------------------------------------------------------------------


def bm25_brute_force(docs, query, k1=1.2, b=0.75):
    """Score every document for ``query`` (a token list) by direct summation."""
    N = len(docs)
    avgdl = sum(len(d) for d in docs) / N
    terms = []
    for t in query:
        if t not in terms:
            terms.append(t)
    scores = []
    for d in docs:
        s = 0.0
        for t in terms:
            df = sum(1 for other in docs if t in other)
            if df == 0:
                continue
            tf = d.count(t)
            if tf == 0:
                continue
            idf = math.log(1.0 + (N - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))
        scores.append(s)
    return scores


def brute_force_candidates(docs, concept_of, query, k=10, k1=1.2, b=0.75):
    """Best document per concept, ranked by score then document position."""
    scores = bm25_brute_force(docs, query, k1, b)
    order = sorted(range(len(docs)), key=lambda i: (-scores[i], i))
    out, seen = [], set()
    for i in order:
        if scores[i] <= 0:
            break
        c = concept_of[i]
        if c in seen:
            continue
        seen.add(c)
        out.append((c, scores[i], i))
        if len(out) == k:
            break
    return out


# -- transformer forward -----------------------------------------------------


def _matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def _add_bias(a, bias):
    return [[x + y for x, y in zip(row, bias)] for row in a]


def _add(a, b):
    return [[x + y for x, y in zip(r1, r2)] for r1, r2 in zip(a, b)]


def _layer_norm_rows(a, g, b, eps=1e-12):
    out = []
    for row in a:
        mu = sum(row) / len(row)
        var = sum((x - mu) ** 2 for x in row) / len(row)
        out.append([(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(row, g, b)])
    return out


def _softmax_list(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def _rows(arr):
    return [list(map(float, r)) for r in arr]


def transformer_forward(params, ids, segs, mask, H, A, L):
    """Single-sequence forward pass; returns (C, probs) as Python lists.

    ``params`` maps parameter names to nested lists or arrays.
    """
    P = {k: (_rows(v) if getattr(v, "ndim", 1) == 2 or isinstance(v[0], (list, tuple)) else list(map(float, v)))
         for k, v in params.items()}
    T = len(ids)
    d = H // A
    x = [[P["tok_emb"][ids[t]][h] + P["pos_emb"][t][h] + P["seg_emb"][segs[t]][h] for h in range(H)]
         for t in range(T)]
    x = _layer_norm_rows(x, P["emb_ln_g"], P["emb_ln_b"])
    for layer in range(L):
        w = lambda n: P[f"layer{layer}.{n}"]  # noqa: E731
        q = _add_bias(_matmul(x, w("q_w")), w("q_b"))
        k = _add_bias(_matmul(x, w("k_w")), w("k_b"))
        v = _add_bias(_matmul(x, w("v_w")), w("v_b"))
        ctx = [[0.0] * H for _ in range(T)]
        for head in range(A):
            lo = head * d
            for i in range(T):
                logits, keys = [], []
                for j in range(T):
                    if mask[j]:
                        logits.append(sum(q[i][lo + c] * k[j][lo + c] for c in range(d)) / math.sqrt(d))
                        keys.append(j)
                att = _softmax_list(logits)
                for c in range(d):
                    ctx[i][lo + c] = sum(a * v[j][lo + c] for a, j in zip(att, keys))
        attn = _add_bias(_matmul(ctx, w("o_w")), w("o_b"))
        h1 = _layer_norm_rows(_add(x, attn), w("ln1_g"), w("ln1_b"))
        pre = _add_bias(_matmul(h1, w("ff1_w")), w("ff1_b"))
        act = [[0.5 * z * (1.0 + math.erf(z / math.sqrt(2.0))) for z in row] for row in pre]
        ff = _add_bias(_matmul(act, w("ff2_w")), w("ff2_b"))
        x = _layer_norm_rows(_add(h1, ff), w("ln2_g"), w("ln2_b"))
    C = x[0]
    logits = [sum(wr[h] * C[h] for h in range(H)) + bb for wr, bb in zip(P["cls_w"], P["cls_b"])]
    return C, _softmax_list(logits)


# -- NIL threshold -----------------------------------------------------------


def dense_grid_threshold(tops, gold, step=1e-3):
    """Brute-force the tau in a dense grid over [0, 1] that maximises accuracy.

    ``tops`` holds ``(concept_id, score)`` or ``None`` per mention; ``gold``
    holds concept ids or the string ``"NIL"``. Ties go to the smallest tau.
    """
    n_steps = int(round(1.0 / step))
    best_tau, best_acc = 0.0, -1.0
    for i in range(n_steps + 1):
        tau = i * step
        correct = 0
        for top, g in zip(tops, gold):
            pred = top[0] if top is not None and top[1] > tau else "NIL"
            correct += pred == g
        acc = correct / len(gold)
        if acc > best_acc:
            best_tau, best_acc = tau, acc
    return best_tau, best_acc


# -- finite differences ------------------------------------------------------


def max_relative_errors(loss_fn, params, analytic, step=1e-5):
    """Per-tensor max relative error between analytic and central-difference gradients.

    The error for a tensor is max|a - n| / max(max|a|, max|n|, 1e-6). The
    floor sits well above central-difference round-off (about 1e-11 here) so
    tensors whose true gradient is exactly zero, such as attention key
    biases, are not judged on noise divided by noise.
    """
    out = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        num = [0.0] * flat.size
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            num[i] = (up - down) / (2 * step)
        a = analytic[name].reshape(-1)
        diff = max(abs(x - y) for x, y in zip(a, num))
        scale = max(max(abs(x) for x in a), max(abs(y) for y in num), 1e-6)
        out[name] = diff / scale
    return out
