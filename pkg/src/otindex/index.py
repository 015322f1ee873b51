"""From topics and weights to a scaled monthly index.

The topic matrix collapses to one score per topic via its leading left
singular vector, documents are scored by weighting those topic scores,
scores are summed per calendar month, and the series is standardized to
mean 100 with unit sample standard deviation.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSVD, EmptyInput, ZeroVariance


@dataclass(frozen=True)
class IndexSeries:
    """Ordered (YYYY-MM, value) pairs; months need not be contiguous."""

    months: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.months) != len(self.values):
            raise ValueError("months and values must have equal length")
        if any(a >= b for a, b in zip(self.months, self.months[1:])):
            raise ValueError("months must be strictly increasing")

    def __len__(self) -> int:
        return len(self.months)


def svd_project(topics: np.ndarray, flip: bool = False) -> np.ndarray:
    """Collapse the N x K topic matrix to K scalar scores.

    Returns ``u1^T T`` (equivalently ``sigma1 * v1^T``) where ``u1`` is the
    leading left singular vector; the sign is fixed so the scores sum to a
    nonnegative value, and ``flip`` negates them for callers who want the
    opposite orientation.
    """
    topics = np.asarray(topics, dtype=np.float64)
    if topics.ndim != 2:
        raise ValueError("topics must be a 2-D matrix")
    if not np.all(np.isfinite(topics)):
        raise ValueError("topics contain non-finite entries")
    u, s, _ = np.linalg.svd(topics, full_matrices=False)
    if s[0] <= 0:
        # impossible for a column-stochastic matrix; guard anyway
        raise DegenerateSVD("leading singular value is zero")
    scores = u[:, 0] @ topics
    if scores.sum() < 0:
        scores = -scores
    if flip:
        scores = -scores
    return scores


def document_scores(topic_scores: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Score each document as the weight-averaged topic score."""
    topic_scores = np.asarray(topic_scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != topic_scores.shape[0]:
        raise ValueError("weights rows must match the number of topic scores")
    return topic_scores @ weights


def month_key(date: dt.date) -> str:
    return f"{date.year:04d}-{date.month:02d}"


def aggregate_monthly(scores, dates, mean: bool = False) -> IndexSeries:
    """Combine document scores into one value per calendar month.

    Months without documents are absent (never zero-filled).  Summation
    happens in a canonical (sorted-value) order, so permuting the documents
    leaves the result bit-identical.  ``mean=True`` divides by the document
    count, for callers who want volume-independent values.
    """
    scores = np.asarray(scores, dtype=np.float64)
    dates = list(dates)
    if len(scores) != len(dates):
        raise ValueError("scores and dates must have equal length")
    if len(scores) == 0:
        raise EmptyInput("no documents to aggregate")
    groups: dict[str, list[float]] = {}
    for value, date in zip(scores, dates):
        groups.setdefault(month_key(date), []).append(value)
    months = tuple(sorted(groups))
    values = np.empty(len(months))
    for i, month in enumerate(months):
        bucket = np.sort(np.array(groups[month]))
        total = float(bucket.sum())
        values[i] = total / len(bucket) if mean else total
    return IndexSeries(months, values)


def scale_index(raw: IndexSeries) -> IndexSeries:
    """Standardize to mean 100 and unit sample standard deviation.

    A spread at the level of float rounding noise counts as constant:
    degenerate inputs must raise rather than amplify noise into an index.
    """
    if len(raw) < 2:
        raise ZeroVariance("need at least two monthly values to scale")
    values = np.asarray(raw.values, dtype=np.float64)
    sd = float(values.std(ddof=1))
    if sd <= 1e-12 * max(1.0, float(np.abs(values).max())):
        raise ZeroVariance("monthly values are constant; cannot standardize")
    scaled = (values - values.mean()) / sd + 100.0
    return IndexSeries(raw.months, scaled)


def top_tokens(topics: np.ndarray, vocab, n_top: int = 20):
    """Per topic, the ``n_top`` highest-weight tokens as (token, weight) pairs."""
    topics = np.asarray(topics)
    result = []
    for k in range(topics.shape[1]):
        order = np.argsort(-topics[:, k], kind="stable")[:n_top]
        result.append([(vocab.tokens[i], float(topics[i, k])) for i in order])
    return result
