"""Supervised LDA parameters, synthetic generation and exact moment oracles.

The generative process: each document draws a topic mixture
``h ~ Dirichlet(alpha)``, every word position draws a topic from ``h`` and a
word from that topic's distribution, and the response is
``y = eta @ h + sigma * eps`` with standard normal ``eps``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

STOCHASTIC_ATOL = 1e-9


class ModelValidationError(ValueError):
    """Raised when model parameters violate the sLDA invariants."""


@dataclass(frozen=True)
class SldaModel:
    """Parameters of a supervised LDA model.

    Attributes
    ----------
    alpha : (k,) array
        Dirichlet prior, strictly positive.
    topics : (V, k) array
        Topic-word distributions, one column per topic.
    eta : (k,) array
        Regression weights of the response on the topic mixture.
    sigma : float
        Standard deviation of the response noise.
    """

    alpha: np.ndarray
    topics: np.ndarray
    eta: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "topics", np.asarray(self.topics, dtype=float))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.topics.shape[0]

    @property
    def alpha0(self) -> float:
        return float(self.alpha.sum())

    def validate(self, atol: float = STOCHASTIC_ATOL) -> "SldaModel":
        if self.alpha.ndim != 1 or self.alpha.size < 1:
            raise ModelValidationError("alpha must be a non-empty vector")
        k = self.alpha.size
        if self.topics.ndim != 2 or self.topics.shape[1] != k:
            raise ModelValidationError(
                f"topics must be V x {k}, got shape {self.topics.shape}")
        if self.eta.shape != (k,):
            raise ModelValidationError(f"eta must have length {k}")
        if self.topics.shape[0] < k:
            raise ModelValidationError("vocabulary smaller than topic count")
        if not np.all(np.isfinite(self.alpha)) or np.any(self.alpha <= 0):
            raise ModelValidationError("alpha entries must be positive")
        if not np.all(np.isfinite(self.topics)) or np.any(self.topics < 0):
            raise ModelValidationError("topic entries must be nonnegative")
        if not np.all(np.isfinite(self.eta)):
            raise ModelValidationError("eta must be finite")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ModelValidationError("sigma must be nonnegative")
        sums = self.topics.sum(axis=0)
        bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
        if bad.size:
            raise ModelValidationError(
                f"topic column {bad[0]} sums to {sums[bad[0]]!r}, not 1")
        return self

    def permuted(self, perm) -> "SldaModel":
        """Return the same model with topics reordered by ``perm``."""
        perm = np.asarray(perm)
        return SldaModel(self.alpha[perm], self.topics[:, perm],
                         self.eta[perm], self.sigma)


@dataclass(frozen=True)
class JointTopicMatrix:
    """Topic columns stacked with their regression weight, ``[scale*mu_i; eta_i]``."""

    vstar: np.ndarray
    scale: float

    @classmethod
    def from_model(cls, model: SldaModel, scale: float = 1.0) -> "JointTopicMatrix":
        if scale <= 0:
            raise ValueError("scale must be positive")
        vstar = np.vstack([scale * model.topics, model.eta[None, :]])
        return cls(vstar, float(scale))


@dataclass(frozen=True)
class Document:
    """A bag-of-words document: word ids (0-based) with positive counts."""

    word_ids: np.ndarray
    counts: np.ndarray
    response: float = 0.0

    @property
    def length(self) -> int:
        return int(self.counts.sum())

    def tokens(self) -> np.ndarray:
        """Expand to one word id per position."""
        return np.repeat(self.word_ids, self.counts)


@dataclass
class Corpus:
    """Documents as a sparse ``num_docs x vocab_size`` count matrix.

    ``responses`` is optional; the recovery code receives responses as a
    separate argument so that a corpus read from disk can be paired with a
    response file later.
    """

    counts: sp.csr_matrix
    responses: np.ndarray | None = None
    lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = sp.csr_matrix(self.counts, dtype=np.int64)
        counts.sum_duplicates()
        counts.eliminate_zeros()
        counts.sort_indices()
        self.counts = counts
        if counts.shape[0] == 0:
            raise ValueError("corpus must contain at least one document")
        if counts.nnz and counts.data.min() < 0:
            raise ValueError("word counts must be positive")
        self.lengths = np.asarray(counts.sum(axis=1)).ravel()
        short = np.flatnonzero(self.lengths < 3)
        if short.size:
            raise ValueError(
                f"document {short[0] + 1} has fewer than 3 words")
        if self.responses is not None:
            self.responses = np.asarray(self.responses, dtype=float)
            if self.responses.shape != (counts.shape[0],):
                raise ValueError(
                    f"expected {counts.shape[0]} responses, "
                    f"found {self.responses.shape[0]}")

    @property
    def num_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]

    def __len__(self):
        return self.num_docs

    def __getitem__(self, d: int) -> Document:
        row = self.counts[d]
        y = 0.0 if self.responses is None else float(self.responses[d])
        return Document(row.indices.copy(), row.data.copy(), y)

    @property
    def documents(self):
        return [self[d] for d in range(self.num_docs)]

    def subset(self, rows) -> "Corpus":
        rows = np.asarray(rows)
        y = None if self.responses is None else self.responses[rows]
        return Corpus(self.counts[rows], y)

    def with_responses(self, responses) -> "Corpus":
        return Corpus(self.counts, responses)

    def stats(self) -> dict:
        return {
            "docs": self.num_docs,
            "vocab": self.vocab_size,
            "tokens": int(self.lengths.sum()),
            "median_doc_length": float(np.median(self.lengths)),
        }


def standardize_responses(y):
    """Shift and scale responses to zero mean and unit variance."""
    y = np.asarray(y, dtype=float)
    sd = y.std()
    if sd == 0:
        return y - y.mean()
    return (y - y.mean()) / sd


def random_model(vocab_size, k, alpha0=1.0, sigma=0.0, seed=0,
                 min_singular=1e-3, alpha=None) -> SldaModel:
    """Draw a synthetic model: uniform topic entries normalized per column,
    standard normal ``eta`` and homogeneous ``alpha`` unless given.

    Draws whose smallest singular value falls below ``min_singular`` are
    rejected so the topic columns are safely linearly independent.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        topics = rng.uniform(size=(vocab_size, k))
        topics /= topics.sum(axis=0)
        if np.linalg.svd(topics, compute_uv=False)[-1] >= min_singular:
            break
    else:
        raise RuntimeError("could not draw well-conditioned topics")
    eta = rng.standard_normal(k)
    if alpha is None:
        alpha = np.full(k, alpha0 / k)
    return SldaModel(np.asarray(alpha, dtype=float), topics, eta, sigma).validate()


def _draw_document(model, doc_len, rng):
    h = rng.dirichlet(model.alpha) if model.k > 1 else np.ones(1)
    topic_counts = rng.multinomial(doc_len, h)
    words = rng.multinomial(topic_counts, model.topics.T).sum(axis=0)
    y = model.eta @ h
    if model.sigma > 0:
        y += model.sigma * rng.standard_normal()
    return words, y


def generate_corpus(model: SldaModel, num_docs: int, doc_len: int,
                    seed: int = 0) -> Corpus:
    """Sample ``num_docs`` documents of ``doc_len`` words from ``model``.

    Document ``d`` uses its own generator seeded with ``(seed, d)``, so any
    split of the index range reproduces the same documents.
    """
    model.validate()
    if doc_len < 3:
        raise ValueError("doc_len must be at least 3")
    if num_docs < 1:
        raise ValueError("num_docs must be at least 1")
    counts = np.zeros((num_docs, model.vocab_size), dtype=np.int64)
    y = np.empty(num_docs)
    for d in range(num_docs):
        rng = np.random.default_rng([seed, d])
        counts[d], y[d] = _draw_document(model, doc_len, rng)
    return Corpus(sp.csr_matrix(counts), y)


def dirichlet_moments(alpha):
    """Closed-form ``E[h]``, ``E[h h^T]`` and ``E[h x h x h]`` for Dirichlet(alpha)."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha entries must be positive")
    a0 = alpha.sum()
    k = alpha.size
    mean = alpha / a0
    second = (np.outer(alpha, alpha) + np.diag(alpha)) / (a0 * (a0 + 1))
    third = np.einsum("i,j,l->ijl", alpha, alpha, alpha)
    idx = np.arange(k)
    aa = np.outer(alpha, alpha)
    # +1 shift for each repeated index pair
    third[idx, idx, :] += aa
    third[idx, :, idx] += aa
    third[:, idx, idx] += aa.T
    third[idx, idx, idx] += 2 * alpha
    third /= a0 * (a0 + 1) * (a0 + 2)
    return mean, second, third


@dataclass(frozen=True)
class ExactMoments:
    """Population moments of a model, dense (toy vocabularies only)."""

    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    my: np.ndarray
    mean_y: float
    mean_y2: float

    def whitened_third(self, w):
        return np.einsum("abc,ai,bj,cl->ijl", self.m3, w, w, w, optimize=True)


@dataclass(frozen=True)
class ExactJointMoments:
    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray
    scale: float
    sigma: float

    def whitened_third(self, w):
        return np.einsum("abc,ai,bj,cl->ijl", self.n3, w, w, w, optimize=True)


def _cube_sum(weights, cols):
    return np.einsum("i,ai,bi,ci->abc", weights, cols, cols, cols, optimize=True)


def population_moments(model: SldaModel) -> ExactMoments:
    model.validate()
    a, a0, mu = model.alpha, model.alpha0, model.topics
    c2 = 1.0 / (a0 * (a0 + 1))
    c3 = 2.0 / (a0 * (a0 + 1) * (a0 + 2))
    mean, second, _ = dirichlet_moments(a)
    return ExactMoments(
        m1=mu @ mean,
        m2=c2 * (mu * a) @ mu.T,
        m3=c3 * _cube_sum(a, mu),
        my=c3 * (mu * (a * model.eta)) @ mu.T,
        mean_y=float(model.eta @ mean),
        mean_y2=float(model.eta @ second @ model.eta + model.sigma ** 2),
    )


def population_joint_moments(model: SldaModel, scale: float = 1.0) -> ExactJointMoments:
    model.validate()
    v = JointTopicMatrix.from_model(model, scale).vstar
    a, a0 = model.alpha, model.alpha0
    mean, _, _ = dirichlet_moments(a)
    return ExactJointMoments(
        n1=v @ mean,
        n2=(v * a) @ v.T / (a0 * (a0 + 1)),
        n3=2.0 / (a0 * (a0 + 1) * (a0 + 2)) * _cube_sum(a, v),
        scale=float(scale),
        sigma=model.sigma,
    )


def check_stochastic(topics, strict_atol=1e-6, loose_atol=STOCHASTIC_ATOL):
    """Renormalize columns whose sums are off by less than ``strict_atol``.

    Columns further off raise; columns off by more than ``loose_atol`` are
    renormalized with a warning.
    """
    topics = np.array(topics, dtype=float)
    sums = topics.sum(axis=0)
    err = np.abs(sums - 1.0)
    if np.any(err > strict_atol):
        j = int(np.argmax(err))
        raise ModelValidationError(f"topic column {j} sums to {sums[j]!r}, not 1")
    if np.any(err > loose_atol):
        warnings.warn("topic columns renormalized (sum off by "
                      f"{err.max():.3g})", stacklevel=2)
        topics /= sums
    return topics
