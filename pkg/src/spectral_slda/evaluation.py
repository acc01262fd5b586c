"""Topic matching, test-time topic inference and prediction metrics."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment

from .model import Corpus, Document, SldaModel

EPS_SMOOTH = 1e-12
CSV_SCHEMA = "# slda-eval-csv/1"


@dataclass(frozen=True)
class TopicMatching:
    """``permutation[i]`` is the recovered topic matched to true topic ``i``."""

    permutation: np.ndarray
    cost: float


def l1_cost_matrix(truth_topics, recovered_topics):
    return np.abs(truth_topics[:, :, None] - recovered_topics[:, None, :]).sum(axis=0)


def match_cost(cost, perm):
    return float(cost[np.arange(len(perm)), perm].sum())


def match_topics(truth: SldaModel, recovered: SldaModel) -> TopicMatching:
    """Minimum total L1 distance bijection between topic columns."""
    if truth.topics.shape != recovered.topics.shape:
        raise ValueError(
            f"topic shapes differ: {truth.topics.shape} vs {recovered.topics.shape}")
    cost = l1_cost_matrix(truth.topics, recovered.topics)
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    return TopicMatching(perm, match_cost(cost, perm))


@njit(cache=True)
def _gibbs_chain(probs, alpha, u, burnin, samples):
    """Collapsed Gibbs over topic assignments of one document.

    ``probs[j, t]`` is the probability of the j-th token under topic ``t``;
    ``u`` holds one uniform per (sweep, token), row 0 seeds the start state.
    Returns the topic counts averaged over the retained sweeps.
    """
    m, k = probs.shape
    z = np.empty(m, dtype=np.int64)
    counts = np.zeros(k)
    weights = np.empty(k)
    for j in range(m):
        total = 0.0
        for t in range(k):
            total += alpha[t] * probs[j, t]
            weights[t] = total
        target = u[0, j] * total
        t = 0
        while t < k - 1 and weights[t] < target:
            t += 1
        z[j] = t
        counts[t] += 1
    acc = np.zeros(k)
    for sweep in range(burnin + samples):
        for j in range(m):
            counts[z[j]] -= 1
            total = 0.0
            for t in range(k):
                total += (alpha[t] + counts[t]) * probs[j, t]
                weights[t] = total
            target = u[sweep + 1, j] * total
            t = 0
            while t < k - 1 and weights[t] < target:
                t += 1
            z[j] = t
            counts[t] += 1
        if sweep >= burnin:
            for t in range(k):
                acc[t] += counts[t]
    return acc / samples


def infer_mixture_gibbs(doc: Document, model: SldaModel, burnin=200, samples=200,
                        seed=0) -> np.ndarray:
    """Posterior-mean topic mixture of ``doc`` with the model held fixed.

    Topic assignments are resampled from
    ``P(z_j = t | rest) ∝ (alpha_t + n_t^{-j}) * mu[w_j, t]`` and the estimate
    averages ``(alpha + n_z) / (alpha0 + m)`` over the retained sweeps.
    """
    if samples < 1 or burnin < 0:
        raise ValueError("need samples >= 1 and burnin >= 0")
    tokens = doc.tokens()
    probs = np.ascontiguousarray(model.topics[tokens])
    if np.any(probs.sum(axis=1) <= 0):
        warnings.warn("word with zero probability under every topic; smoothing",
                      RuntimeWarning, stacklevel=2)
        probs = probs + EPS_SMOOTH
    rng = np.random.default_rng(seed)
    u = rng.random((burnin + samples + 1, tokens.size))
    mean_counts = _gibbs_chain(probs, model.alpha, u, burnin, samples)
    return (model.alpha + mean_counts) / (model.alpha0 + tokens.size)


def infer_corpus_mixtures(corpus: Corpus, model: SldaModel, burnin=200, samples=200,
                          seed=0, threads=1) -> np.ndarray:
    """Topic mixtures for every document; document ``d`` is seeded ``(seed, d)``."""
    def one(d):
        return infer_mixture_gibbs(corpus[d], model, burnin, samples, [seed, d])

    if threads is None or threads <= 1:
        rows = [one(d) for d in range(corpus.num_docs)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(corpus.num_docs)))
    return np.asarray(rows).reshape(corpus.num_docs, model.k)


def exact_posterior_mean(doc: Document, model: SldaModel) -> np.ndarray:
    """``E[h | words]`` by enumerating every topic assignment (tiny docs only)."""
    from itertools import product
    from scipy.special import gammaln

    tokens = doc.tokens()
    k, alpha, a0 = model.k, model.alpha, model.alpha0
    m = tokens.size
    log_w, means = [], []
    for z in product(range(k), repeat=m):
        z = np.asarray(z)
        counts = np.bincount(z, minlength=k)
        with np.errstate(divide="ignore"):
            lik = np.sum(np.log(model.topics[tokens, z]))
        prior = np.sum(gammaln(alpha + counts) - gammaln(alpha))
        log_w.append(lik + prior)
        means.append((alpha + counts) / (a0 + m))
    log_w = np.asarray(log_w)
    w = np.exp(log_w - log_w.max())
    return (w[:, None] * np.asarray(means)).sum(axis=0) / w.sum()


def mse(y, y_hat) -> float:
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    return float(np.mean((y - y_hat) ** 2))


def predictive_r2(y, y_hat) -> float:
    """``1 - SS_res / SS_tot`` around the test-set mean; NaN when ``y`` is constant."""
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return float("nan")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def neg_perword_loglik(corpus: Corpus, mixtures, topics) -> float:
    counts = corpus.counts.tocoo()
    p = np.einsum("nt,nt->n", mixtures[counts.row], topics[counts.col])
    return float(-(counts.data * np.log(p)).sum() / counts.data.sum())


@dataclass
class EvalReport:
    mse: float
    pr2: float
    neg_perword_ll: float
    l1_alpha: float | None = None
    l1_eta: float | None = None
    l1_mu: float | None = None
    per_topic: list = field(default_factory=list)

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v
        data = {key: clean(val) for key, val in asdict(self).items()}
        return json.dumps(data, indent=1)

    CSV_FIELDS = ("mse", "pr2", "neg_perword_ll", "l1_alpha", "l1_eta", "l1_mu")

    def csv_row(self) -> dict:
        return {key: getattr(self, key) for key in self.CSV_FIELDS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_SCHEMA + "\n")
        writer = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: ("" if v is None else repr(v)) for k, v in self.csv_row().items()})
        return buf.getvalue()


def parameter_errors(truth: SldaModel, recovered: SldaModel):
    """L1 errors of alpha, eta and the topic matrix after optimal matching."""
    match = match_topics(truth, recovered)
    p = match.permutation
    per_topic = [
        {"topic": i, "matched": int(p[i]),
         "l1_mu": float(np.abs(truth.topics[:, i] - recovered.topics[:, p[i]]).sum()),
         "alpha": float(truth.alpha[i]), "alpha_hat": float(recovered.alpha[p[i]]),
         "eta": float(truth.eta[i]), "eta_hat": float(recovered.eta[p[i]])}
        for i in range(truth.k)]
    return (float(np.abs(truth.alpha - recovered.alpha[p]).sum()),
            float(np.abs(truth.eta - recovered.eta[p]).sum()),
            match.cost, per_topic)


def evaluate(recovered: SldaModel, test_corpus: Corpus, test_responses,
             truth: SldaModel | None = None, burnin=200, samples=200,
             seed=0, threads=1) -> EvalReport:
    if recovered.vocab_size != test_corpus.vocab_size:
        raise ValueError(
            f"model vocabulary {recovered.vocab_size} != corpus vocabulary "
            f"{test_corpus.vocab_size}")
    y = np.asarray(test_responses if test_responses is not None
                   else test_corpus.responses, dtype=float)
    h = infer_corpus_mixtures(test_corpus, recovered, burnin, samples, seed, threads)
    y_hat = h @ recovered.eta
    report = EvalReport(mse=mse(y, y_hat), pr2=predictive_r2(y, y_hat),
                        neg_perword_ll=neg_perword_loglik(test_corpus, h, recovered.topics))
    if truth is not None:
        if truth.topics.shape != recovered.topics.shape:
            raise ValueError("truth and recovered models have different shapes")
        (report.l1_alpha, report.l1_eta, report.l1_mu,
         report.per_topic) = parameter_errors(truth, recovered)
    return report
