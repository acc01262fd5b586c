import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from spectral_slda.model import Corpus, dirichlet_moments, random_model


def position_triples(tokens):
    """Mean of e_a ⊗ e_b ⊗ e_c over ordered triples of distinct positions."""
    return [tuple(tokens[list(p)]) for p in itertools.permutations(range(len(tokens)), 3)]


def naive_third(counts_row, vocab):
    """Dense V^3 third-position estimator for one document by enumeration."""
    tokens = np.repeat(np.arange(vocab), counts_row)
    t = np.zeros((vocab,) * 3)
    triples = position_triples(tokens)
    for a, b, c in triples:
        t[a, b, c] += 1
    return t / len(triples)


def naive_joint_third(counts_row, y, scale):
    """Dense (V+1)^3 estimator over z_j = [scale * e_{w_j}; y] by enumeration."""
    vocab = counts_row.size
    tokens = np.repeat(np.arange(vocab), counts_row)
    zs = np.zeros((tokens.size, vocab + 1))
    zs[np.arange(tokens.size), tokens] = scale
    zs[:, vocab] = y
    t = np.zeros((vocab + 1,) * 3)
    perms = list(itertools.permutations(range(tokens.size), 3))
    for a, b, c in perms:
        t += np.einsum("i,j,l->ijl", zs[a], zs[b], zs[c])
    return t / len(perms)


def naive_pairs(counts_row, y=None, scale=1.0):
    vocab = counts_row.size
    tokens = np.repeat(np.arange(vocab), counts_row)
    dim = vocab if y is None else vocab + 1
    zs = np.zeros((tokens.size, dim))
    zs[np.arange(tokens.size), tokens] = scale
    if y is not None:
        zs[:, vocab] = y
    out = np.zeros((dim, dim))
    perms = list(itertools.permutations(range(tokens.size), 2))
    for a, b in perms:
        out += np.outer(zs[a], zs[b])
    return out / len(perms), zs.mean(axis=0)


def sym_place(mat, vec):
    return (np.einsum("ij,l->ijl", mat, vec) + np.einsum("il,j->ijl", mat, vec)
            + np.einsum("jl,i->ijl", mat, vec))


def random_small_corpus(rng, num_docs, vocab, max_len, min_len=3, responses=True):
    counts = np.zeros((num_docs, vocab), dtype=np.int64)
    for d in range(num_docs):
        m = rng.integers(min_len, max_len + 1)
        np.add.at(counts[d], rng.integers(0, vocab, size=m), 1)
    y = rng.standard_normal(num_docs) if responses else None
    return Corpus(sp.csr_matrix(counts), y)


def raw_population_joint(model, scale):
    """E[z], E[z z], E[z z z] for z = [scale x; y] from Dirichlet moments."""
    v = np.vstack([scale * model.topics, model.eta])
    mean, second, third = dirichlet_moments(model.alpha)
    e1 = v @ mean
    e2 = v @ second @ v.T
    e3 = np.einsum("abc,ia,jb,lc->ijl", third, v, v, v)
    e = np.zeros(v.shape[0])
    e[-1] = 1.0
    noise = model.sigma ** 2 * np.outer(e, e)
    return e1, e2 + noise, e3 + sym_place(noise, e1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_model():
    return random_model(6, 2, alpha0=1.0, sigma=0.3, seed=3, alpha=[0.3, 0.7])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
