"""Skip-gram word embeddings and the pairwise squared-distance cost matrix.

A small deterministic skip-gram-with-negative-sampling trainer: sequential
single-writer SGD updates in corpus order, negatives drawn from the
unigram^(3/4) distribution, learning rate decayed linearly over the planned
number of center positions.  No subsampling, no hierarchical softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary
from .errors import EmptyCorpus

_MAX_EXP = 60.0


@dataclass(frozen=True)
class EmbedConfig:
    depth: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        for name in ("window", "negatives", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class EmbeddingMatrix:
    """Input vectors per vocabulary token, plus the per-epoch eval loss."""

    vectors: np.ndarray
    depth: int
    loss_trace: tuple[float, ...] = ()


@dataclass
class CostMatrix:
    """Pairwise squared Euclidean distances between token embeddings.

    ``scale`` records the median off-diagonal divisor when normalized (1.0
    otherwise) so a run manifest can echo it.
    """

    entries: np.ndarray
    normalized: bool = False
    scale: float = 1.0


def _sigma(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_MAX_EXP, _MAX_EXP)))


def _sgns_eval_loss(w_in, w_out, centers, contexts, negatives):
    """Mean negative-sampling objective on a fixed evaluation set."""
    h = w_in[centers]
    pos = np.sum(w_out[contexts] * h, axis=1)
    neg = np.einsum("pnd,pd->pn", w_out[negatives], h)
    loss = -np.log(_sigma(pos)) - np.log(_sigma(-neg)).sum(axis=1)
    return float(loss.mean())


def train_embeddings(docs, vocab: Vocabulary, cfg: EmbedConfig) -> EmbeddingMatrix:
    """Train token vectors on tokenized documents.

    Documents are streamed in order; every in-vocabulary token acts once per
    epoch as a center whose surrounding window supplies positive targets.
    Each (center, context) pair triggers one SGD update against the context
    plus ``cfg.negatives`` sampled negatives (draws equal to the context are
    skipped).  Fully reproducible for a given seed.
    """
    docs = list(docs)
    if not docs:
        raise EmptyCorpus("no documents to train embeddings on")
    index = vocab.index
    sequences = [np.array([index[t] for t in doc if t in index], dtype=np.int64)
                 for doc in docs]
    total_tokens = sum(len(seq) for seq in sequences)
    if total_tokens == 0:
        raise EmptyCorpus("no in-vocabulary tokens in the corpus")

    n = len(vocab)
    d = cfg.depth
    rng = np.random.default_rng(cfg.seed)
    w_in = (rng.random((n, d)) - 0.5) / d
    w_out = np.zeros((n, d))

    counts = np.zeros(n, dtype=np.int64)
    for seq in sequences:
        np.add.at(counts, seq, 1)
    noise = counts.astype(np.float64) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    # fixed evaluation pairs for the per-epoch loss trace
    eval_pairs = _sample_eval_pairs(sequences, cfg, rng, noise_cdf)

    lr0 = cfg.learning_rate
    planned = max(1, total_tokens * cfg.epochs)
    processed = 0
    loss_trace = []
    for _ in range(cfg.epochs):
        for seq in sequences:
            length = len(seq)
            for pos in range(length):
                lr = max(lr0 * (1.0 - processed / planned), lr0 * 1e-4)
                processed += 1
                center = seq[pos]
                lo = max(0, pos - cfg.window)
                hi = min(length, pos + cfg.window + 1)
                h = w_in[center]
                for ctx_pos in range(lo, hi):
                    if ctx_pos == pos:
                        continue
                    target = seq[ctx_pos]
                    negs = np.searchsorted(noise_cdf, rng.random(cfg.negatives))
                    negs = negs[negs != target]
                    idx = np.concatenate(([target], negs))
                    labels = np.zeros(len(idx))
                    labels[0] = 1.0
                    outv = w_out[idx]
                    g = (_sigma(outv @ h) - labels) * lr
                    dh = g @ outv
                    np.subtract.at(w_out, idx, g[:, None] * h)
                    h -= dh  # in-place view update of w_in[center]
        if eval_pairs is not None:
            loss_trace.append(_sgns_eval_loss(w_in, w_out, *eval_pairs))
    return EmbeddingMatrix(w_in, d, tuple(loss_trace))


def _sample_eval_pairs(sequences, cfg, rng, noise_cdf, max_pairs=2000):
    centers, contexts = [], []
    for seq in sequences:
        for pos in range(len(seq)):
            lo = max(0, pos - cfg.window)
            hi = min(len(seq), pos + cfg.window + 1)
            for ctx_pos in range(lo, hi):
                if ctx_pos != pos:
                    centers.append(seq[pos])
                    contexts.append(seq[ctx_pos])
    if not centers:
        return None
    centers = np.array(centers, dtype=np.int64)
    contexts = np.array(contexts, dtype=np.int64)
    if len(centers) > max_pairs:
        pick = rng.choice(len(centers), size=max_pairs, replace=False)
        centers, contexts = centers[pick], contexts[pick]
    negatives = np.searchsorted(noise_cdf, rng.random((len(centers), cfg.negatives)))
    return centers, contexts, negatives


def cost_matrix(emb: EmbeddingMatrix, normalize: bool = True) -> CostMatrix:
    """Squared Euclidean distances, exactly symmetric with a zero diagonal.

    When ``normalize`` is set the matrix is divided by its median
    off-diagonal entry so that a fixed regularization strength keeps the
    same meaning regardless of embedding scale.
    """
    x = np.asarray(emb.vectors, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("embedding matrix contains non-finite entries")
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    upper = np.triu(np.maximum(d2, 0.0), k=1)
    entries = upper + upper.T  # computed once, mirrored; diagonal exactly zero
    scale = 1.0
    if normalize and entries.shape[0] > 1:
        off = upper[np.triu_indices_from(upper, k=1)]
        median = float(np.median(off))
        if median > 0:
            scale = median
            entries = entries / median
    return CostMatrix(entries, normalized=normalize, scale=scale)
