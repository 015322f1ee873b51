"""Corpus ingestion: dated raw text to per-document word distributions.

The pipeline is tokenize -> build vocabulary -> vectorize.  All functions are
pure and deterministic: documents are ordered by (date, input position) at
load time and the vocabulary is sorted lexicographically, so identical input
files always produce identical matrices.
"""

from __future__ import annotations

import datetime as dt
import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import AllDocumentsEmpty, DataError, EmptyVocabulary

_KEEP = frozenset("abcdefghijklmnopqrstuvwxyz0123456789")


@dataclass(frozen=True)
class RawDocument:
    date: dt.date
    text: str


@dataclass(frozen=True)
class TokenRules:
    """Normalization tables applied by :func:`tokenize`.

    ``phrases`` are multiword surface sequences joined into single
    underscore-connected tokens before stopword removal, so entities that
    contain stopwords survive intact.
    """

    stopwords: frozenset[str] = frozenset()
    lemmas: dict[str, str] = field(default_factory=dict)
    phrases: tuple[tuple[str, ...], ...] = ()


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def load_stopwords(path) -> frozenset[str]:
    return frozenset(line.strip().lower() for line in _read_lines(path))


def load_lemmas(path) -> dict[str, str]:
    lemmas = {}
    for i, line in enumerate(_read_lines(path), 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{i}: expected 'surface<TAB>lemma'")
        lemmas[parts[0].strip().lower()] = parts[1].strip().lower()
    return lemmas


def load_phrases(path) -> tuple[tuple[str, ...], ...]:
    phrases = []
    for line in _read_lines(path):
        words = tuple(line.strip().lower().split())
        if len(words) >= 2:
            phrases.append(words)
    return tuple(phrases)


def default_rules(stopwords_path=None, lemma_path=None,
                  phrase_path=None) -> TokenRules:
    """Rules backed by the shipped stopword/lemma files, each overridable."""
    if stopwords_path is None:
        ref = resources.files("otindex.data").joinpath("stopwords.txt")
        stop = frozenset(ref.read_text(encoding="utf-8").split())
    else:
        stop = load_stopwords(stopwords_path)
    if lemma_path is None:
        ref = resources.files("otindex.data").joinpath("lemmas.txt")
        lemmas = {}
        for line in ref.read_text(encoding="utf-8").splitlines():
            if line.strip():
                surface, lemma = line.split("\t")
                lemmas[surface] = lemma
    else:
        lemmas = load_lemmas(lemma_path)
    phrases = load_phrases(phrase_path) if phrase_path is not None else ()
    return TokenRules(stop, lemmas, phrases)


def _join_phrases(tokens: list[str], phrases) -> list[str]:
    if not phrases:
        return tokens
    by_first: dict[str, list[tuple[str, ...]]] = {}
    for p in phrases:
        by_first.setdefault(p[0], []).append(p)
    for v in by_first.values():
        v.sort(key=len, reverse=True)  # longest match wins
    out = []
    i = 0
    while i < len(tokens):
        candidates = by_first.get(tokens[i], ())
        for p in candidates:
            if tuple(tokens[i:i + len(p)]) == p:
                out.append("_".join(p))
                i += len(p)
                break
        else:
            out.append(tokens[i])
            i += 1
    return out


def tokenize(text: str, rules: TokenRules) -> list[str]:
    """Normalize one text into tokens.

    Lowercases, splits on whitespace, deletes every character outside
    [a-z0-9] in place (hyphens and other punctuation vanish rather than
    split), joins configured phrases, removes stopwords, maps each survivor
    through the lemma table (identity if absent), and drops tokens shorter
    than two characters.  An empty result is legal.
    """
    cleaned = []
    for chunk in text.lower().split():
        token = "".join(ch for ch in chunk if ch in _KEEP)
        if token:
            cleaned.append(token)
    cleaned = _join_phrases(cleaned, rules.phrases)
    out = []
    for token in cleaned:
        if token in rules.stopwords:
            continue
        token = rules.lemmas.get(token, token)
        if len(token) >= 2:
            out.append(token)
    return out


def load_jsonl(path) -> list[RawDocument]:
    """Read one JSON record per line with ``date`` (YYYY-MM-DD) and ``text``.

    Documents come back sorted by (date, input position); malformed lines
    raise :class:`DataError` with their line number.
    """
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict) or "date" not in record or "text" not in record:
                raise DataError(f"{path}:{lineno}: record needs 'date' and 'text'")
            try:
                date = dt.date.fromisoformat(str(record["date"]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad date {record['date']!r}") from exc
            text = str(record["text"])
            if not text.strip():
                raise DataError(f"{path}:{lineno}: empty text")
            docs.append((date, lineno, text))
    docs.sort(key=lambda rec: (rec[0], rec[1]))
    return [RawDocument(date, text) for date, _, text in docs]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(compare=False)

    @classmethod
    def from_tokens(cls, tokens) -> "Vocabulary":
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        return cls(tokens, {tok: i for i, tok in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)


def build_vocabulary(docs, min_count: int = 1) -> Vocabulary:
    """Lexicographically ordered tokens with corpus frequency >= min_count."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freq = Counter()
    for tokens in docs:
        freq.update(tokens)
    kept = sorted(tok for tok, count in freq.items() if count >= min_count)
    if not kept:
        raise EmptyVocabulary(
            f"no token reaches corpus frequency {min_count}"
        )
    return Vocabulary.from_tokens(kept)


@dataclass
class DocumentMatrix:
    """Bag-of-words counts and simplex-normalized distributions, with dates.

    Columns are documents; every ``distributions`` column sums to one.
    """

    counts: np.ndarray
    distributions: np.ndarray
    dates: tuple[dt.date, ...]

    @property
    def n_words(self) -> int:
        return self.counts.shape[0]

    @property
    def n_documents(self) -> int:
        return self.counts.shape[1]


def vectorize(docs, dates, vocab: Vocabulary):
    """Count tokens against the vocabulary and normalize columns.

    Documents whose counts are all zero (nothing in vocabulary) are dropped
    together with their dates.  Returns ``(DocumentMatrix, dropped)`` where
    ``dropped`` lists the (input position, date) of each removed document.
    """
    docs = list(docs)
    dates = list(dates)
    if len(docs) != len(dates):
        raise ValueError("docs and dates must have equal length")
    n = len(vocab)
    if n == 0:
        raise EmptyVocabulary("vocabulary is empty")
    m = len(docs)
    assert n * m < 2 ** 63, "matrix size exceeds 64-bit indexing"
    counts = np.zeros((n, m), dtype=np.int64)
    index = vocab.index
    for j, tokens in enumerate(docs):
        for tok in tokens:
            i = index.get(tok)
            if i is not None:
                counts[i, j] += 1
    col_sums = counts.sum(axis=0)
    keep = col_sums > 0
    dropped = [(j, dates[j]) for j in np.nonzero(~keep)[0]]
    if not np.any(keep):
        raise AllDocumentsEmpty("every document is empty after vectorization")
    counts = counts[:, keep]
    distributions = counts / counts.sum(axis=0, keepdims=True)
    kept_dates = tuple(d for d, k in zip(dates, keep) if k)
    return DocumentMatrix(counts, distributions, kept_dates), dropped
