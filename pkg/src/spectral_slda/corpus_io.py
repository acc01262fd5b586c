"""Readers and writers for corpora, responses and model files.

Corpora use the UCI bag-of-words triplet layout::

    N
    V
    NNZ
    docId wordId count
    ...

with 1-based ids. Responses are one decimal per line in document order.
Models are JSON documents carrying a format version tag.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import Corpus, ModelValidationError, SldaModel, check_stochastic

MODEL_FORMAT_VERSION = "slda-model/1"


class CorpusFormatError(ValueError):
    """Malformed input file; the message names the offending line."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        where = f"{path}:{lineno}" if lineno else str(path)
        super().__init__(f"{where}: {message}")


def _header_int(path, lines, lineno, name):
    try:
        raw = next(lines)
    except StopIteration:
        raise CorpusFormatError(path, lineno, f"missing {name} header line") from None
    try:
        value = int(raw.strip())
    except ValueError:
        raise CorpusFormatError(path, lineno, f"bad {name} header {raw.strip()!r}") from None
    if value < 0:
        raise CorpusFormatError(path, lineno, f"negative {name}")
    return value


def read_docword(path) -> Corpus:
    """Parse a docword file into a corpus without responses.

    Repeated ``(doc, word)`` pairs are summed.
    """
    path = Path(path)
    rows, cols, vals = [], [], []
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = iter(fh)
        n_docs = _header_int(path, lines, 1, "document count")
        vocab = _header_int(path, lines, 2, "vocabulary size")
        nnz = _header_int(path, lines, 3, "nonzero count")
        lineno = 3
        for lineno, line in enumerate(lines, start=4):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CorpusFormatError(path, lineno, "expected 'docId wordId count'")
            try:
                d, w, c = (int(p) for p in parts)
            except ValueError:
                raise CorpusFormatError(path, lineno, "non-integer field") from None
            if not 1 <= d <= n_docs:
                raise CorpusFormatError(path, lineno, f"doc id {d} outside 1..{n_docs}")
            if not 1 <= w <= vocab:
                raise CorpusFormatError(path, lineno, f"word id {w} outside 1..{vocab}")
            if c <= 0:
                raise CorpusFormatError(path, lineno, f"count {c} is not positive")
            rows.append(d - 1)
            cols.append(w - 1)
            vals.append(c)
    if len(vals) != nnz:
        raise CorpusFormatError(path, 3, f"header declares {nnz} triplets, found {len(vals)}")
    if n_docs == 0:
        raise CorpusFormatError(path, 1, "corpus has no documents")
    counts = sp.coo_matrix((np.asarray(vals, dtype=np.int64), (rows, cols)),
                           shape=(n_docs, vocab)).tocsr()
    lengths = np.asarray(counts.sum(axis=1)).ravel()
    short = np.flatnonzero(lengths < 3)
    if short.size:
        raise CorpusFormatError(path, 0, f"document {short[0] + 1} has fewer than 3 words")
    return Corpus(counts)


def write_docword(corpus: Corpus, path) -> None:
    coo = corpus.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{corpus.num_docs}\n{corpus.vocab_size}\n{coo.nnz}\n")
        for d, w, c in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{d + 1} {w + 1} {c}\n")


def read_responses(path, expected: int) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise CorpusFormatError(path, lineno, f"unparsable response {text!r}") from None
    if len(values) != expected:
        raise CorpusFormatError(path, 0, f"expected {expected} responses, found {len(values)}")
    return np.asarray(values, dtype=float)


def write_responses(y, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(y, dtype=float):
            fh.write(f"{float(v)!r}\n")


def read_corpus(docword_path, responses_path=None) -> Corpus:
    corpus = read_docword(docword_path)
    if responses_path is not None:
        corpus = corpus.with_responses(read_responses(responses_path, corpus.num_docs))
    return corpus


def model_to_dict(model: SldaModel) -> dict:
    # json writes floats with repr(), the shortest string that round-trips
    return {
        "version": MODEL_FORMAT_VERSION,
        "k": model.k,
        "V": model.vocab_size,
        "alpha0": model.alpha0,
        "alpha": model.alpha.tolist(),
        "eta": model.eta.tolist(),
        "sigma": model.sigma,
        "topics": model.topics.tolist(),
    }


def model_from_dict(data: dict, source="<model>") -> SldaModel:
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise ModelValidationError(
            f"{source}: unsupported model version {data.get('version')!r}")
    try:
        k, vocab = int(data["k"]), int(data["V"])
        alpha = np.asarray(data["alpha"], dtype=float)
        eta = np.asarray(data["eta"], dtype=float)
        topics = np.asarray(data["topics"], dtype=float)
        sigma = float(data["sigma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelValidationError(f"{source}: malformed model field ({exc})") from None
    if topics.shape != (vocab, k):
        raise ModelValidationError(f"{source}: topics shape {topics.shape} != ({vocab}, {k})")
    if np.any(topics < 0):
        raise ModelValidationError(f"{source}: negative topic entry")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        topics = check_stochastic(topics)
    for w in caught:
        warnings.warn(f"{source}: {w.message}", stacklevel=3)
    return SldaModel(alpha, topics, eta, sigma).validate()


def write_model(model: SldaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def read_model(path) -> SldaModel:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    return model_from_dict(data, source=str(path))


def write_moment_dump(moments, path) -> None:
    """Debug dump of first/second-order moments as plain text arrays."""
    vocab = moments.m1.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# V={vocab} num_docs={moments.num_docs} "
                 f"mean_y={moments.mean_y!r} mean_y2={moments.mean_y2!r}\n")
        for name in ("m1", "m2", "my"):
            arr = np.atleast_2d(getattr(moments, name))
            fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
            np.savetxt(fh, arr, fmt="%.17g")
