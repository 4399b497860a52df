"""Paragraph vectors (PV-DM with context averaging, or PV-DBOW) trained by
SGD with negative sampling.

Tokens are looked at exactly once, in :func:`build_vocab`; from then on the
trainer only sees integer ids.  Renaming every token through an injective
map (for instance a deterministic cipher) therefore leaves every matrix this
module produces bit-for-bit unchanged.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .textprep import FormatError, TokenizedDoc

MODES = ("dm", "dbow")
# "mean": exact gradient of the averaged input (error scaled by 1/(context+1)).
# "full": unscaled error to every input, the word2vec CBOW convention; faster
# early learning but not a gradient of the loss.
DM_ERRORS = ("mean", "full")
CUM_DOMAIN = 2**31 - 1


@dataclass(frozen=True)
class EmbedHyper:
    vector_size: int = 100
    window: int = 5
    epochs: int = 10
    negative: int = 5
    alpha: float = 0.025
    min_alpha: float = 1e-4
    min_count: int = 5
    mode: str = "dm"
    dm_error: str = "mean"
    seed: int = 0
    infer_epochs: Optional[int] = None

    def __post_init__(self):
        if self.vector_size < 1 or self.window < 1 or self.epochs < 1 or self.negative < 1:
            raise ValueError(f"invalid embedding hyperparameters: {self}")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dm_error not in DM_ERRORS:
            raise ValueError(f"dm_error must be one of {DM_ERRORS}, got {self.dm_error!r}")


@dataclass
class Vocab:
    token_to_id: Dict[str, int]
    counts: np.ndarray
    min_count: int
    tokens: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        """Ids of in-vocabulary tokens; unknown tokens are dropped."""
        get = self.token_to_id.get
        ids = [i for i in map(get, tokens) if i is not None]
        return np.asarray(ids, dtype=np.int64)


def build_vocab(docs: Sequence[TokenizedDoc], min_count: int = 5) -> Vocab:
    """Ids follow first occurrence in corpus order, restricted to tokens
    seen at least ``min_count`` times."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    totals = Counter()
    for d in docs:
        totals.update(d.tokens)
    token_to_id: Dict[str, int] = {}
    tokens: List[str] = []
    for d in docs:
        for tok in d.tokens:
            if tok not in token_to_id and totals[tok] >= min_count:
                token_to_id[tok] = len(tokens)
                tokens.append(tok)
    counts = np.array([totals[t] for t in tokens], dtype=np.int64)
    return Vocab(token_to_id, counts, min_count, tokens)


class NegativeSampler:
    """Draws ids with probability proportional to ``count ** 0.75``.

    Uses a cumulative integer table over ``[0, 2**31 - 1)``; a uniform draw
    is located with a right-sided binary search.
    """

    def __init__(self, counts, power: float = 0.75):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0:
            self.cum_table = np.zeros(0, dtype=np.int64)
            return
        weights = counts**power
        cum = np.cumsum(weights) / weights.sum()
        self.cum_table = np.round(cum * CUM_DOMAIN).astype(np.int64)

    def probabilities(self) -> np.ndarray:
        return np.diff(self.cum_table, prepend=0) / self.cum_table[-1]

    def draw(self, rng: np.random.Generator) -> int:
        r = rng.integers(0, self.cum_table[-1])
        return int(np.searchsorted(self.cum_table, r, side="right"))

    def draw_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        r = rng.integers(0, self.cum_table[-1], size=n)
        return np.searchsorted(self.cum_table, r, side="right")


def learning_rates(total: int, alpha: float, min_alpha: float) -> np.ndarray:
    """Per-position learning rate: linear from ``alpha`` to ``min_alpha``."""
    steps = np.arange(total, dtype=np.float64)
    return alpha - (alpha - min_alpha) * steps / max(total - 1, 1)


# -- numba kernels -------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@njit(cache=True)
def _next_u64(state):
    # splitmix64
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True)
def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True)
def _sgd_example(W_in, D, W_out, doc, ctx, nctx, rows, labels, nrows, alpha, use_ctx,
                 update_words, update_out, h, e, gs, scale_error=True):
    """One gradient step on a single (document, context, target + negatives) example.

    All gradients are taken at the pre-step parameters, so the update equals
    ``params - alpha * grad`` exactly, including repeated rows.
    """
    d = D.shape[1]
    for k in range(d):
        h[k] = D[doc, k]
    scale = 1.0
    if use_ctx:
        for c in range(nctx):
            w = ctx[c]
            for k in range(d):
                h[k] += W_in[w, k]
        scale = 1.0 / (nctx + 1)
        for k in range(d):
            h[k] *= scale
    for r in range(nrows):
        w = rows[r]
        f = 0.0
        for k in range(d):
            f += h[k] * W_out[w, k]
        gs[r] = (labels[r] - _sigmoid(f)) * alpha
    for k in range(d):
        e[k] = 0.0
    for r in range(nrows):
        w = rows[r]
        g = gs[r]
        for k in range(d):
            e[k] += g * W_out[w, k]
    if update_out:
        for r in range(nrows):
            w = rows[r]
            g = gs[r]
            for k in range(d):
                W_out[w, k] += g * h[k]
    if not scale_error:
        scale = 1.0
    for k in range(d):
        e[k] *= scale
        D[doc, k] += e[k]
    if use_ctx and update_words:
        for c in range(nctx):
            w = ctx[c]
            for k in range(d):
                W_in[w, k] += e[k]


@njit(cache=True)
def _train_kernel(flat, offsets, doc_rows, W_in, D, W_out, cum_table, window, negative,
                  dm, alpha0, alpha1, epochs, state, update_words, update_out, scale_error):
    d = D.shape[1]
    h = np.empty(d)
    e = np.empty(d)
    gs = np.empty(negative + 1)
    rows = np.empty(negative + 1, dtype=np.int64)
    labels = np.empty(negative + 1)
    ctx = np.empty(2 * window, dtype=np.int64)
    n_docs = offsets.shape[0] - 1
    total = epochs * flat.shape[0]
    denom = max(total - 1, 1)
    cum_total = np.uint64(cum_table[-1]) if cum_table.shape[0] > 0 else np.uint64(1)
    step = 0
    for _ in range(epochs):
        for j in range(n_docs):
            start = offsets[j]
            end = offsets[j + 1]
            doc = doc_rows[j]
            for t in range(start, end):
                alpha = alpha0 - (alpha0 - alpha1) * step / denom
                step += 1
                target = flat[t]
                nctx = 0
                if dm:
                    shrink = np.int64(_next_u64(state) % np.uint64(window))
                    w = window - shrink
                    lo = max(start, t - w)
                    hi = min(end, t + w + 1)
                    for u in range(lo, hi):
                        if u != t:
                            ctx[nctx] = flat[u]
                            nctx += 1
                rows[0] = target
                labels[0] = 1.0
                nrows = 1
                for _n in range(negative):
                    r = np.int64(_next_u64(state) % cum_total)
                    w_neg = np.searchsorted(cum_table, r, side="right")
                    if w_neg == target:
                        continue
                    rows[nrows] = w_neg
                    labels[nrows] = 0.0
                    nrows += 1
                _sgd_example(W_in, D, W_out, doc, ctx, nctx, rows, labels, nrows, alpha, dm,
                             update_words, update_out, h, e, gs, scale_error)


def sgd_example_step(W_in, D, W_out, doc: int, context, target: int, negatives, alpha: float,
                     mode: str = "dm", update_words=True, update_out=True) -> None:
    """Apply one training example in place, using the same kernel as :func:`train`."""
    d = D.shape[1]
    ctx = np.asarray(context, dtype=np.int64)
    rows = np.asarray([target, *negatives], dtype=np.int64)
    labels = np.zeros(rows.shape[0])
    labels[0] = 1.0
    _sgd_example(W_in, D, W_out, doc, ctx, ctx.shape[0], rows, labels, rows.shape[0], alpha,
                 mode == "dm", update_words, update_out, np.empty(d), np.empty(d),
                 np.empty(rows.shape[0]))


# -- model --------------------------------------------------------------------


@dataclass
class EmbeddingModel:
    vocab: Vocab
    W_in: np.ndarray
    D: np.ndarray
    W_out: np.ndarray
    hyper: EmbedHyper
    doc_ids: List[str] = field(default_factory=list)

    @property
    def vector_size(self) -> int:
        return self.D.shape[1]

    def is_finite(self) -> bool:
        return all(np.isfinite(m).all() for m in (self.W_in, self.D, self.W_out))


def _flatten(docs: Sequence[TokenizedDoc], vocab: Vocab) -> Tuple[np.ndarray, np.ndarray]:
    encoded = [vocab.encode(d.tokens) for d in docs]
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(e) for e in encoded])
    flat = np.concatenate(encoded) if encoded else np.zeros(0, dtype=np.int64)
    return flat.astype(np.int64), offsets


def _uniform_init(rng, shape, d):
    return rng.uniform(-0.5 / d, 0.5 / d, size=shape)


def train(docs: Sequence[TokenizedDoc], vocab: Vocab, hyper: EmbedHyper = EmbedHyper()) -> EmbeddingModel:
    """Train word, document and output matrices on ``docs``.

    Deterministic: the only randomness is a generator seeded with
    ``hyper.seed``, and it depends on nothing but vocabulary and corpus sizes.
    """
    d = hyper.vector_size
    rng = np.random.default_rng(hyper.seed)
    V, N = len(vocab), len(docs)
    W_in = _uniform_init(rng, (V, d), d)
    D = _uniform_init(rng, (N, d), d)
    W_out = np.zeros((V, d))
    state = np.array([rng.integers(0, 2**63)], dtype=np.uint64)
    flat, offsets = _flatten(docs, vocab)
    if V > 0 and flat.size > 0:
        cum = NegativeSampler(vocab.counts).cum_table
        _train_kernel(flat, offsets, np.arange(N, dtype=np.int64), W_in, D, W_out, cum,
                      hyper.window, hyper.negative, hyper.mode == "dm", hyper.alpha,
                      hyper.min_alpha, hyper.epochs, state, True, True, hyper.dm_error == "mean")
    return EmbeddingModel(vocab, W_in, D, W_out, hyper, [doc.doc_id for doc in docs])


def infer_vector(model: EmbeddingModel, doc: TokenizedDoc, epochs: Optional[int] = None, seed=0) -> np.ndarray:
    """Fit a fresh document vector against frozen word and output weights."""
    hyper = model.hyper
    d = model.vector_size
    if epochs is None:
        epochs = hyper.infer_epochs or hyper.epochs
    rng = np.random.default_rng(seed)
    vec = _uniform_init(rng, (1, d), d)
    state = np.array([rng.integers(0, 2**63)], dtype=np.uint64)
    flat = model.vocab.encode(doc.tokens)
    if flat.size == 0:
        return vec[0]
    cum = NegativeSampler(model.vocab.counts).cum_table
    offsets = np.array([0, flat.size], dtype=np.int64)
    _train_kernel(flat, offsets, np.zeros(1, dtype=np.int64), model.W_in, vec, model.W_out, cum,
                  hyper.window, hyper.negative, hyper.mode == "dm", hyper.alpha, hyper.min_alpha,
                  epochs, state, False, False, hyper.dm_error == "mean")
    return vec[0]


def infer_vectors(model: EmbeddingModel, docs: Sequence[TokenizedDoc], seed: int = 0,
                  epochs: Optional[int] = None) -> np.ndarray:
    """Row ``i`` is inferred with the seed sequence ``[seed, i]``."""
    out = np.empty((len(docs), model.vector_size))
    for i, doc in enumerate(docs):
        out[i] = infer_vector(model, doc, epochs=epochs, seed=[seed, i])
    return out


# -- file formats ---------------------------------------------------------------


def write_doc_vectors(path, doc_ids: Sequence[str], labels: Sequence[int], vectors: np.ndarray,
                      header: Sequence[str] = ()) -> None:
    n, d = vectors.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(f"{n} {d}\n")
        for doc_id, label, row in zip(doc_ids, labels, vectors):
            fh.write(f"{doc_id} {int(label)} {' '.join(map(repr, row.tolist()))}\n")


def read_doc_vectors(path) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """Returns ``(doc_ids, labels, vectors)``."""
    with open(path, encoding="utf-8") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, 1) if not ln.startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty doc-vector file")
    lineno, head = lines[0]
    try:
        n, d = map(int, head.split())
    except ValueError:
        raise FormatError(f"{path}:{lineno}: expected header 'N d', got {head.strip()!r}") from None
    if len(lines) - 1 != n:
        raise FormatError(f"{path}: header says {n} rows, found {len(lines) - 1}")
    doc_ids, labels = [], np.empty(n, dtype=np.int64)
    vectors = np.empty((n, d))
    for row, (lineno, line) in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != d + 2:
            raise FormatError(f"{path}:{lineno}: expected {d + 2} fields, got {len(parts)}")
        doc_ids.append(parts[0])
        labels[row] = int(parts[1])
        vectors[row] = [float(x) for x in parts[2:]]
    return doc_ids, labels, vectors


def write_model(path, model: EmbeddingModel, header: Sequence[str] = ()) -> None:
    """Text dump: ``V N d mode``, then word rows, document rows and output rows."""
    V, N, d = len(model.vocab), model.D.shape[0], model.vector_size
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        hyper = {k: v for k, v in asdict(model.hyper).items()}
        fh.write("# hyper " + " ".join(f"{k}={v}" for k, v in hyper.items()) + "\n")
        fh.write(f"{V} {N} {d} {model.hyper.mode}\n")
        for tok, count, row in zip(model.vocab.tokens, model.vocab.counts, model.W_in):
            fh.write(f"{tok} {count} {' '.join(map(repr, row.tolist()))}\n")
        for doc_id, row in zip(model.doc_ids, model.D):
            fh.write(f"{doc_id} {' '.join(map(repr, row.tolist()))}\n")
        for tok, row in zip(model.vocab.tokens, model.W_out):
            fh.write(f"{tok} {' '.join(map(repr, row.tolist()))}\n")


def read_model(path) -> EmbeddingModel:
    hyper_kw = {}
    with open(path, encoding="utf-8") as fh:
        body = []
        for line in fh:
            if line.startswith("# hyper "):
                for item in line[len("# hyper "):].split():
                    k, v = item.split("=", 1)
                    hyper_kw[k] = v
            elif not line.startswith("#"):
                body.append(line.split())
    V, N, d = map(int, body[0][:3])
    types = {f.name: f.type for f in EmbedHyper.__dataclass_fields__.values()}
    kw = {}
    for k, v in hyper_kw.items():
        if v == "None":
            kw[k] = None
        elif "float" in types[k]:
            kw[k] = float(v)
        elif "int" in types[k]:
            kw[k] = int(v)
        else:
            kw[k] = v
    hyper = EmbedHyper(**kw)
    words = body[1:1 + V]
    docs = body[1 + V:1 + V + N]
    outs = body[1 + V + N:1 + 2 * V + N]
    tokens = [w[0] for w in words]
    vocab = Vocab({t: i for i, t in enumerate(tokens)},
                  np.array([int(w[1]) for w in words], dtype=np.int64), hyper.min_count, tokens)
    W_in = np.array([[float(x) for x in w[2:]] for w in words]).reshape(V, d)
    D = np.array([[float(x) for x in r[1:]] for r in docs]).reshape(N, d)
    W_out = np.array([[float(x) for x in r[1:]] for r in outs]).reshape(V, d)
    return EmbeddingModel(vocab, W_in, D, W_out, hyper, [r[0] for r in docs])
