"""Shared fixtures and synthetic-data builders for the test suite."""

import itertools
import json

import numpy as np
import pytest

from otindex.training import _unrolled_forward


def random_cost(rng, n, dim=3, scale=1.0):
    """Cost matrix from random points: symmetric, zero diagonal, nonnegative."""
    x = rng.standard_normal((n, dim))
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    upper = np.triu(np.maximum(d2, 0.0), k=1)
    c = upper + upper.T
    off = c[np.triu_indices(n, 1)]
    med = np.median(off)
    if med > 0:
        c = c / med * scale
    return c


def line_cost(n, spacing=1.0):
    """Squared distances of n evenly spaced points on a line."""
    coords = np.arange(n, dtype=float) * spacing
    return (coords[:, None] - coords[None, :]) ** 2


def circle_cost(n, neighbor_sq=0.6):
    """Squared chord distances of n points on a circle.

    Neighbor costs stay large (sharp transport kernel) while the largest
    cost stays bounded, which keeps exp(-C/epsilon) representable.
    """
    r2 = neighbor_sq / (4 * np.sin(np.pi / n) ** 2)
    ang = 2 * np.pi * np.arange(n) / n
    x = np.sqrt(r2) * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    sq = (x * x).sum(axis=1)
    c = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    np.fill_diagonal(c, 0.0)
    return c


def random_simplex(rng, n, zeros=0):
    """Random histogram, optionally with a few exact-zero coordinates."""
    h = rng.dirichlet(np.ones(n))
    if zeros:
        idx = rng.choice(n, size=min(zeros, n - 1), replace=False)
        h[idx] = 0.0
        h = h / h.sum()
    return h


def mean_tv_best_permutation(fitted, truth):
    """Mean total-variation distance under the best column matching."""
    k = truth.shape[1]
    best = np.inf
    for perm in itertools.permutations(range(k)):
        tv = np.mean([0.5 * np.abs(fitted[:, perm[j]] - truth[:, j]).sum()
                      for j in range(k)])
        best = min(best, tv)
    return best


def planted_problem(n=30, k=3, m=300, epsilon=0.1, unroll=50, neighbor_sq=0.6,
                    sigma=2.0, floor=1e-2, alpha=0.4, seed=11):
    """Synthetic corpus generated as exact unrolled barycenters of known topics.

    Tokens sit on a circle so neighbor costs are large relative to
    ``epsilon`` (little kernel blur, hence identifiable topics) while the
    maximum cost keeps the Gibbs factor representable.  Topics are angular
    bumps with a mass floor; weights are corner-leaning Dirichlet draws.
    Returns (Y, C, true_topics, true_weights).
    """
    C = circle_cost(n, neighbor_sq)
    grid = np.arange(n, dtype=float)
    centers = np.arange(k) * (n / k) + (n / (2 * k))
    def bump(c):
        d = np.minimum(np.abs(grid - c), n - np.abs(grid - c))
        return np.exp(-d ** 2 / (2 * sigma ** 2)) + floor
    topics = np.stack([bump(c) for c in centers], axis=1)
    topics /= topics.sum(axis=0, keepdims=True)
    rng = np.random.default_rng(seed)
    lam = rng.dirichlet(np.full(k, alpha), size=m).T
    gibbs = np.exp(-C / epsilon)
    beta, _ = _unrolled_forward(np.log(topics), lam, gibbs, unroll,
                                keep_tape=False)
    Y = np.exp(beta - beta.max(axis=0, keepdims=True))
    Y /= Y.sum(axis=0, keepdims=True)
    return Y, C, topics, lam


_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]


def synthetic_lexicon(size, seed=0):
    """Deterministic pronounceable tokens that survive the default rules."""
    from otindex.corpus import default_rules

    rules = default_rules()
    rng = np.random.default_rng(seed)
    words = []
    seen = set()
    while len(words) < size:
        n_syll = int(rng.integers(2, 4))
        word = "".join(_SYLLABLES[int(rng.integers(len(_SYLLABLES)))]
                       for _ in range(n_syll))
        if word in seen or word in rules.stopwords or word in rules.lemmas:
            continue
        seen.add(word)
        words.append(word)
    return words


def write_headline_corpus(path, n_docs, n_months, vocab_size=500, seed=0,
                          start_year=2001):
    """JSON-lines corpus of dated synthetic headlines with a themed lexicon."""
    rng = np.random.default_rng(seed)
    words = synthetic_lexicon(vocab_size, seed=seed + 1)
    n_themes = 4
    theme_pools = np.array_split(np.array(words[: vocab_size - 40]), n_themes)
    common = words[vocab_size - 40:]
    fillers = ["the", "of", "and", "in", "a", "on"]
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n_docs):
            month = int(rng.integers(n_months))
            year = start_year + month // 12
            day = int(rng.integers(1, 29))
            date = f"{year:04d}-{month % 12 + 1:02d}-{day:02d}"
            theme = theme_pools[int(rng.integers(n_themes))]
            length = int(rng.integers(5, 10))
            parts = []
            for _ in range(length):
                roll = rng.random()
                if roll < 0.62:
                    # mild Zipf inside the theme pool
                    r = int(len(theme) * rng.random() ** 2)
                    parts.append(str(theme[min(r, len(theme) - 1)]))
                elif roll < 0.85:
                    parts.append(common[int(rng.integers(len(common)))])
                else:
                    parts.append(fillers[int(rng.integers(len(fillers)))])
            text = " ".join(parts).capitalize() + ("!" if rng.random() < 0.2 else "")
            fh.write(json.dumps({"date": date, "text": text}) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
