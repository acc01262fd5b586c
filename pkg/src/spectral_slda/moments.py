"""Empirical moment estimators.

Second-order moments are formed densely in word space.  Third-order moments
only ever exist in whitened ``k``-dimensional form: for a document with count
vector ``n`` and length ``m`` the unbiased third-position estimator is

    (n⊗n⊗n - sym(diag(n)⊗n) + 2 diag3(n)) / (m (m-1) (m-2))

and every piece is contracted with the whitening matrix before it is summed,
so the cost per document is ``O(nnz k^2 + k^3)``.

The joint (response-augmented) moments treat a document as the vectors
``z = [scale * x; y]`` where the response ``y`` is shared by all positions.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp

from .model import Corpus

CHUNK_DOCS = 1024


def _chunks(num_docs, size=CHUNK_DOCS):
    return [(s, min(s + size, num_docs)) for s in range(0, num_docs, size)]


def _map_chunks(func, num_docs, threads):
    """Apply ``func(start, stop)`` over fixed-size chunks, results in order.

    Chunk boundaries do not depend on ``threads`` so the ordered merge that
    follows is bitwise reproducible for any worker count.
    """
    spans = _chunks(num_docs)
    if threads is None or threads <= 1 or len(spans) == 1:
        return [func(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: func(*ab), spans))


def _responses(corpus: Corpus, responses):
    if responses is None:
        responses = corpus.responses
    if responses is None:
        return np.zeros(corpus.num_docs)
    y = np.asarray(responses, dtype=float)
    if y.shape != (corpus.num_docs,):
        raise ValueError(f"expected {corpus.num_docs} responses, found {y.size}")
    return y


def sym3(mat, vec):
    """``mat⊗vec`` summed over the three placements of the vector index."""
    return (np.einsum("ij,l->ijl", mat, vec)
            + np.einsum("il,j->ijl", mat, vec)
            + np.einsum("jl,i->ijl", mat, vec))


def cube(vec):
    return np.einsum("i,j,l->ijl", vec, vec, vec)


def symmetrize(t):
    return (t + t.transpose(0, 2, 1) + t.transpose(1, 0, 2)
            + t.transpose(1, 2, 0) + t.transpose(2, 0, 1)
            + t.transpose(2, 1, 0)) / 6.0


@dataclass
class MomentAccumulator:
    """Sums of per-document word-space statistics.

    ``xx`` holds sums of ``(n n^T - diag n) / (m (m-1))``, ``x`` sums of
    ``n / m``; the ``y*`` fields weight those by the document response.
    """

    num_docs: int
    x: np.ndarray
    xx: np.ndarray
    yx: np.ndarray
    yxx: np.ndarray
    y2x: np.ndarray
    y: float
    y2: float
    y3: float

    @classmethod
    def empty(cls, vocab_size):
        z1 = np.zeros(vocab_size)
        z2 = np.zeros((vocab_size, vocab_size))
        return cls(0, z1, z2, z1.copy(), z2.copy(), z1.copy(), 0.0, 0.0, 0.0)

    @classmethod
    def from_counts(cls, counts: sp.csr_matrix, y) -> "MomentAccumulator":
        counts = sp.csr_matrix(counts, dtype=float)
        y = np.asarray(y, dtype=float)
        m = np.asarray(counts.sum(axis=1)).ravel()
        w1 = 1.0 / m
        w2 = 1.0 / (m * (m - 1))

        def pair_sum(weights):
            weighted = sp.diags(weights) @ counts
            out = (counts.T @ weighted).toarray()
            out[np.diag_indices_from(out)] -= np.asarray(weighted.sum(axis=0)).ravel()
            return out

        freq = sp.diags(w1) @ counts
        return cls(
            num_docs=counts.shape[0],
            x=np.asarray(freq.sum(axis=0)).ravel(),
            xx=pair_sum(w2),
            yx=np.asarray(freq.T @ y).ravel(),
            yxx=pair_sum(w2 * y),
            y2x=np.asarray(freq.T @ (y * y)).ravel(),
            y=float(y.sum()),
            y2=float(y @ y),
            y3=float(np.sum(y ** 3)),
        )

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        return MomentAccumulator(**{
            f.name: getattr(self, f.name) + getattr(other, f.name)
            for f in fields(self)})

    def means(self):
        n = self.num_docs
        if n < 1:
            raise ValueError("no documents accumulated")
        return {f.name: getattr(self, f.name) / n
                for f in fields(self) if f.name != "num_docs"}


def accumulate(corpus: Corpus, responses=None, threads=1) -> MomentAccumulator:
    y = _responses(corpus, responses)
    parts = _map_chunks(
        lambda a, b: MomentAccumulator.from_counts(corpus.counts[a:b], y[a:b]),
        corpus.num_docs, threads)
    acc = parts[0]
    for part in parts[1:]:
        acc = acc.merge(part)
    return acc


@dataclass(frozen=True)
class MomentSet:
    m1: np.ndarray
    m2: np.ndarray
    my: np.ndarray
    mean_y: float
    mean_y2: float
    num_docs: int


@dataclass(frozen=True)
class JointMomentSet:
    n1: np.ndarray
    n2: np.ndarray
    sigma_assumed: float
    scale: float
    num_docs: int


def finalize_moments(acc: MomentAccumulator, alpha0: float) -> MomentSet:
    e = acc.means()
    m1 = e["x"]
    c_y = alpha0 / (alpha0 + 2)
    c_111 = 2 * alpha0 ** 2 / ((alpha0 + 1) * (alpha0 + 2))
    m2 = e["xx"] - alpha0 / (alpha0 + 1) * np.outer(m1, m1)
    my = (e["yxx"]
          - c_y * (e["y"] * e["xx"] + np.outer(m1, e["yx"]) + np.outer(e["yx"], m1))
          + c_111 * e["y"] * np.outer(m1, m1))
    return MomentSet(m1, (m2 + m2.T) / 2, (my + my.T) / 2,
                     float(e["y"]), float(e["y2"]), acc.num_docs)


def finalize_joint_moments(acc: MomentAccumulator, alpha0: float,
                           sigma: float, scale: float) -> JointMomentSet:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if scale <= 0:
        raise ValueError("scale must be positive")
    e = acc.means()
    vocab = e["x"].shape[0]
    n1 = np.append(scale * e["x"], e["y"])
    ezz = np.empty((vocab + 1, vocab + 1))
    ezz[:vocab, :vocab] = scale ** 2 * e["xx"]
    ezz[:vocab, vocab] = ezz[vocab, :vocab] = scale * e["yx"]
    ezz[vocab, vocab] = e["y2"]
    n2 = ezz - alpha0 / (alpha0 + 1) * np.outer(n1, n1)
    n2[vocab, vocab] -= sigma ** 2
    return JointMomentSet(n1, (n2 + n2.T) / 2, float(sigma), float(scale), acc.num_docs)


def estimate_moments(corpus: Corpus, responses=None, alpha0: float = 1.0,
                     threads=1) -> MomentSet:
    """Empirical ``M1``, ``M2``, ``My`` and response means."""
    return finalize_moments(accumulate(corpus, responses, threads), alpha0)


def estimate_joint_moments(corpus: Corpus, responses=None, alpha0: float = 1.0,
                           sigma: float = 0.0, scale: float = 1.0,
                           threads=1) -> JointMomentSet:
    """Empirical ``N1`` and ``N2`` over ``z = [scale * x; y]``."""
    return finalize_joint_moments(accumulate(corpus, responses, threads),
                                  alpha0, sigma, scale)


@dataclass
class WhitenedAccumulator:
    """Sums of whitened per-document ``E[z]``, ``E[z z]``, ``E[z z z]``."""

    num_docs: int
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray

    def merge(self, other):
        return WhitenedAccumulator(self.num_docs + other.num_docs,
                                   self.e1 + other.e1, self.e2 + other.e2,
                                   self.e3 + other.e3)


def _whitened_chunk(counts, y, wx, wy, scale):
    counts = sp.csr_matrix(counts, dtype=float)
    k = wx.shape[1]
    m = np.asarray(counts.sum(axis=1)).ravel()
    c1 = 1.0 / m
    c2 = 1.0 / (m * (m - 1))
    c3 = 1.0 / (m * (m - 1) * (m - 2))

    a = np.asarray(counts @ wx)                                 # W^T n per doc
    gram = np.einsum("vi,vj->vij", wx, wx).reshape(-1, k * k)
    b = np.asarray(counts @ gram).reshape(-1, k, k)            # W^T diag(n) W
    word_weights = np.asarray(counts.T @ c3).ravel()
    used = np.flatnonzero(word_weights)
    g = wx[used]

    # word-word-word block
    t_www = (np.einsum("d,di,dj,dl->ijl", c3, a, a, a, optimize=True)
             - sym3_batched(c3, b, a)
             + 2 * np.einsum("v,vi,vj,vl->ijl", word_weights[used], g, g, g,
                             optimize=True))
    pair = np.einsum("d,di,dj->ij", c2, a, a) - np.einsum("d,dij->ij", c2, b)
    e3 = scale ** 3 * t_www
    e2 = scale ** 2 * pair
    e1 = scale * (c1 @ a)
    if np.any(wy) and np.any(y):
        ypair = (np.einsum("d,di,dj->ij", c2 * y, a, a)
                 - np.einsum("d,dij->ij", c2 * y, b))
        yfreq = (c1 * y) @ a
        y2freq = (c1 * y * y) @ a
        wyy = np.outer(wy, wy)
        e3 = (e3 + scale ** 2 * sym3(ypair, wy)
              + scale * sym3(wyy, y2freq) + np.sum(y ** 3) * cube(wy))
        e2 = e2 + scale * (np.outer(yfreq, wy) + np.outer(wy, yfreq)) + (y @ y) * wyy
        e1 = e1 + y.sum() * wy
    return WhitenedAccumulator(counts.shape[0], e1, e2, e3)


def sym3_batched(weights, mats, vecs):
    """``sum_d weights[d] * sym3(mats[d], vecs[d])``."""
    return (np.einsum("d,dij,dl->ijl", weights, mats, vecs, optimize=True)
            + np.einsum("d,dil,dj->ijl", weights, mats, vecs, optimize=True)
            + np.einsum("d,djl,di->ijl", weights, mats, vecs, optimize=True))


def accumulate_whitened(corpus: Corpus, responses, w, scale=1.0,
                        threads=1) -> WhitenedAccumulator:
    """Whitened raw moments of ``z = [scale*x; y]``.

    ``w`` is ``V x k`` (word-only; responses are ignored) or ``(V+1) x k``.
    """
    w = np.asarray(w, dtype=float)
    vocab = corpus.vocab_size
    if w.shape[0] == vocab:
        wx, wy = w, np.zeros(w.shape[1])
    elif w.shape[0] == vocab + 1:
        wx, wy = w[:vocab], w[vocab]
    else:
        raise ValueError(
            f"whitening matrix has {w.shape[0]} rows; corpus vocabulary is {vocab}")
    y = _responses(corpus, responses)
    parts = _map_chunks(
        lambda a, b: _whitened_chunk(corpus.counts[a:b], y[a:b], wx, wy, scale),
        corpus.num_docs, threads)
    acc = parts[0]
    for part in parts[1:]:
        acc = acc.merge(part)
    return acc


def center_whitened_m3(e3, e2, m1w, alpha0):
    """Apply the LDA third-moment centering in whitened space."""
    return (e3 - alpha0 / (alpha0 + 2) * sym3(e2, m1w)
            + 2 * alpha0 ** 2 / ((alpha0 + 1) * (alpha0 + 2)) * cube(m1w))


def center_whitened_n3(e3, e2, n1w, ew, alpha0, sigma):
    """Joint third-moment centering with the response-noise correction.

    The noise enters ``E[z z z]`` as ``sigma^2 sym(e e, N1)`` and ``E[z z]``
    as ``sigma^2 e e``; both are removed before the LDA centering.
    """
    noise = sigma ** 2 * np.outer(ew, ew)
    return center_whitened_m3(e3 - sym3(noise, n1w), e2 - noise, n1w, alpha0)


def _as_array(w):
    return np.asarray(getattr(w, "w", w), dtype=float)


def whitened_m3(corpus: Corpus, responses, alpha0, w, m1, threads=1) -> np.ndarray:
    """Empirical ``M3(W, W, W)`` (``k x k x k``), symmetrized."""
    w = _as_array(w)
    if w.shape[0] != corpus.vocab_size:
        raise ValueError(
            f"whitening matrix has {w.shape[0]} rows; corpus vocabulary is {corpus.vocab_size}")
    acc = accumulate_whitened(corpus, None, w, threads=threads)
    n = acc.num_docs
    t = center_whitened_m3(acc.e3 / n, acc.e2 / n, w.T @ np.asarray(m1), alpha0)
    return symmetrize(t)


def whitened_n3(corpus: Corpus, responses, alpha0, sigma, scale, w, n1,
                threads=1) -> np.ndarray:
    """Empirical joint ``N3(W, W, W)`` with ``W`` of shape ``(V+1) x k``."""
    w = _as_array(w)
    if w.shape[0] != corpus.vocab_size + 1:
        raise ValueError(
            f"joint whitening matrix needs {corpus.vocab_size + 1} rows, got {w.shape[0]}")
    acc = accumulate_whitened(corpus, responses, w, scale=scale, threads=threads)
    n = acc.num_docs
    t = center_whitened_n3(acc.e3 / n, acc.e2 / n, w.T @ np.asarray(n1),
                           w[-1], alpha0, sigma)
    return symmetrize(t)
