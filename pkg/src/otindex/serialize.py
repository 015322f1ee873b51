"""File formats for every pipeline intermediate and output.

Binary matrices use a fixed little-endian layout: an 8-byte magic, the two
dimensions as unsigned 64-bit integers, then row-major float64 data.  The
model checkpoint extends that with a JSON metadata block (serialized with
sorted keys, so identical models produce identical bytes).  Delimited
outputs are plain CSV.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import struct

import numpy as np

from .corpus import DocumentMatrix, Vocabulary
from .errors import DataError
from .index import IndexSeries

MATRIX_MAGIC = b"OTIXMAT1"
DOCS_MAGIC = b"OTIXDOC1"
CKPT_MAGIC = b"OTIXCKP1"


def _write_array(fh, arr: np.ndarray):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, shape) -> np.ndarray:
    count = int(np.prod(shape))
    data = fh.read(count * 8)
    if len(data) != count * 8:
        raise DataError("truncated matrix payload")
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def write_matrix(path, arr: np.ndarray):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("only 2-D matrices are serialized")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", *arr.shape))
        _write_array(fh, arr)


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise DataError(f"{path}: not a matrix file (magic {magic!r})")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        return _read_array(fh, (rows, cols))


def matrix_to_csv(path, arr: np.ndarray):
    np.savetxt(path, np.asarray(arr, dtype=np.float64), delimiter=",", fmt="%.17g")


def write_document_matrix(path, matrix: DocumentMatrix, vocab: Vocabulary):
    """Counts, distributions, dates, and the vocabulary in one file."""
    n, m = matrix.counts.shape
    vocab_blob = "\n".join(vocab.tokens).encode("utf-8")
    dates_blob = "\n".join(d.isoformat() for d in matrix.dates).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DOCS_MAGIC)
        fh.write(struct.pack("<QQQQ", n, m, len(vocab_blob), len(dates_blob)))
        fh.write(vocab_blob)
        fh.write(dates_blob)
        fh.write(np.ascontiguousarray(matrix.counts, dtype="<i8").tobytes())
        _write_array(fh, matrix.distributions)


def read_document_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != DOCS_MAGIC:
            raise DataError(f"{path}: not a document matrix file")
        n, m, vocab_len, dates_len = struct.unpack("<QQQQ", fh.read(32))
        vocab = Vocabulary.from_tokens(fh.read(vocab_len).decode("utf-8").split("\n"))
        dates = tuple(dt.date.fromisoformat(s)
                      for s in fh.read(dates_len).decode("utf-8").split("\n"))
        counts_data = fh.read(n * m * 8)
        counts = np.frombuffer(counts_data, dtype="<i8").reshape(n, m).copy()
        distributions = _read_array(fh, (n, m))
    return DocumentMatrix(counts, distributions, dates), vocab


def write_checkpoint(path, topic_logits, weight_logits, meta: dict):
    """Model parameters plus a config echo; identical runs give identical bytes."""
    topic_logits = np.asarray(topic_logits, dtype=np.float64)
    weight_logits = np.asarray(weight_logits, dtype=np.float64)
    n, k = topic_logits.shape
    k2, m = weight_logits.shape
    if k2 != k:
        raise ValueError("topic and weight logits disagree on the topic count")
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<QQQQ", n, k, m, len(blob)))
        fh.write(blob)
        _write_array(fh, topic_logits)
        _write_array(fh, weight_logits)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        n, k, m, blob_len = struct.unpack("<QQQQ", fh.read(32))
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        topic_logits = _read_array(fh, (n, k))
        weight_logits = _read_array(fh, (k, m))
    return topic_logits, weight_logits, meta


def write_tokens(path, token_docs):
    """Space-joined tokens, one document per line (tokens never contain spaces)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tokens in token_docs:
            fh.write(" ".join(tokens))
            fh.write("\n")


def read_tokens(path):
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def write_index_csv(path, series: IndexSeries):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["month", "value"])
        for month, value in zip(series.months, series.values):
            writer.writerow([month, f"{value:.12f}"])


def read_index_csv(path) -> IndexSeries:
    months, values = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["month", "value"]:
            raise DataError(f"{path}: expected header 'month,value'")
        for row in reader:
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}: malformed row {row!r}")
            months.append(row[0].strip())
            try:
                values.append(float(row[1]))
            except ValueError as exc:
                raise DataError(f"{path}: bad value {row[1]!r}") from exc
    if not months:
        raise DataError(f"{path}: no data rows")
    order = sorted(range(len(months)), key=months.__getitem__)
    return IndexSeries(tuple(months[i] for i in order),
                       np.array([values[i] for i in order]))


def write_topics_csv(path, ranked_tokens):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["topic", "rank", "token", "weight"])
        for k, rows in enumerate(ranked_tokens):
            for rank, (token, weight) in enumerate(rows, 1):
                writer.writerow([k, rank, token, f"{weight:.12f}"])


def write_loss_trace_csv(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "heldout_loss"])
        for row in trace:
            heldout = "" if row.heldout_loss is None else f"{row.heldout_loss:.12f}"
            writer.writerow([row.epoch, f"{row.train_loss:.12f}", heldout])


def write_report_csv(path, report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for key, value in report.correlations().items():
            writer.writerow([key, f"{value:.12f}"])
        writer.writerow(["hp_lambda", f"{report.hp_lambda:.6f}"])


def write_dropped_csv(path, dropped):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["input_position", "date"])
        for pos, date in dropped:
            writer.writerow([pos, date.isoformat()])


def write_vocab(path, vocab: Vocabulary):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token in vocab.tokens:
            fh.write(token)
            fh.write("\n")


def read_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        return Vocabulary.from_tokens(fh.read().splitlines())


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, values: dict):
    """Sorted key=value lines; contains no timestamps by design."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(values):
            fh.write(f"{key}={values[key]}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                out[key] = value
    return out
