"""Two-stage and joint spectral recovery of sLDA parameters."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .model import Corpus, SldaModel, dirichlet_moments
from .moments import (estimate_joint_moments, estimate_moments, whitened_m3,
                      whitened_n3)
from .spectral import WhiteningMatrix, robust_tpm, whiten

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecoveryConfig:
    method: str = "two_stage"
    alpha0: float = 1.0
    k: int = 2
    restarts: int = 100
    iters: int = 100
    sigma_assumed: float = 0.0
    scale: float = 100.0
    whitening: str = "exact"
    oversample: int = 10
    seed: int = 0
    rank_tol: float = 1e-10
    threads: int = 1

    def __post_init__(self):
        if self.method not in ("two_stage", "joint"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.sigma_assumed < 0:
            raise ValueError("sigma_assumed must be nonnegative")
        if self.whitening not in ("exact", "randomized"):
            raise ValueError(f"unknown whitening {self.whitening!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RecoveredModel:
    model: SldaModel
    config: RecoveryConfig
    lambdas: np.ndarray
    residual_norm: float
    whitening_residual: float
    clamped_mass: float = 0.0
    sigma_two_stage: float | None = None
    notes: tuple = field(default_factory=tuple)

    def provenance(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "lambdas": self.lambdas.tolist(),
            "residual_norm": self.residual_norm,
            "whitening_residual": self.whitening_residual,
            "clamped_mass": self.clamped_mass,
            "sigma_two_stage_estimate": self.sigma_two_stage,
            "notes": list(self.notes),
        }


def alpha_from_lambda(lambdas, alpha0):
    lambdas = np.asarray(lambdas, dtype=float)
    return 4 * alpha0 * (alpha0 + 1) / ((alpha0 + 2) ** 2 * lambdas ** 2)


def clamp_topics(columns):
    """Clip negative entries to zero and renormalize each column.

    Returns the cleaned matrix and the largest clipped mass in any column.
    """
    cols = np.array(columns, dtype=float)
    negative = np.where(cols < 0, -cols, 0.0).sum(axis=0)
    cols = np.clip(cols, 0.0, None)
    sums = cols.sum(axis=0)
    if np.any(sums <= 0):
        raise ValueError("recovered topic column has no positive mass")
    return cols / sums, float(negative.max(initial=0.0))


def recover_sigma(mean_y, mean_y2, alpha_hat, eta_hat, tol=1e-8) -> float:
    """Noise level from ``E[y^2] = eta^T E[h h^T] eta + sigma^2``."""
    mean, second, _ = dirichlet_moments(alpha_hat)
    eta_hat = np.asarray(eta_hat, dtype=float)
    implied = float(eta_hat @ mean)
    if abs(implied - mean_y) > 1e-6 * max(1.0, abs(mean_y)):
        log.info("E[y] mismatch: observed %.6g, implied by recovered model %.6g",
                 mean_y, implied)
    var = mean_y2 - float(eta_hat @ second @ eta_hat)
    if var < -tol:
        warnings.warn(f"moment mismatch: sigma^2 estimate {var:.3g} < 0", RuntimeWarning,
                      stacklevel=2)
    return float(np.sqrt(max(var, 0.0)))


def _decompose(m2, third: Callable, cfg: RecoveryConfig, word_rows: int | None):
    wm: WhiteningMatrix = whiten(m2, cfg.k, cfg.whitening, cfg.oversample,
                                 cfg.seed, cfg.rank_tol)
    t = third(wm.w)
    ref_rows = wm.w_pinv if word_rows is None else wm.w_pinv[:, :word_rows]
    eig = robust_tpm(t, cfg.k, cfg.restarts, cfg.iters, cfg.seed,
                     sign_reference=ref_rows.sum(axis=1))
    # (W^+)^T omega_i, scaled back by the eigenvalue
    unwhitened = (cfg.alpha0 + 2) / 2 * eig.lambdas * (wm.w_pinv.T @ eig.omegas)
    return wm, eig, unwhitened


def recover_two_stage_from_moments(moments, third: Callable, cfg: RecoveryConfig) -> RecoveredModel:
    """Two-stage recovery given ``m2``, ``my``, response means and a callable
    returning the whitened third moment for a whitening matrix."""
    a0 = cfg.alpha0
    wm, eig, mu = _decompose(moments.m2, third, cfg, None)
    alpha = alpha_from_lambda(eig.lambdas, a0)
    topics, clamped = clamp_topics(mu)
    my_w = wm.w.T @ moments.my @ wm.w
    eta = (a0 + 2) / 2 * np.einsum("ai,ab,bi->i", eig.omegas, my_w, eig.omegas)
    sigma = recover_sigma(moments.mean_y, moments.mean_y2, alpha, eta)
    model = SldaModel(alpha, topics, eta, sigma)
    return RecoveredModel(model, cfg, eig.lambdas, eig.residual_norm,
                          wm.residual(moments.m2), clamped, sigma, eig.warnings)


def recover_joint_from_moments(n2, third: Callable, cfg: RecoveryConfig,
                               vocab_size: int, mean_y=None, mean_y2=None) -> RecoveredModel:
    wm, eig, v = _decompose(n2, third, cfg, vocab_size)
    alpha = alpha_from_lambda(eig.lambdas, cfg.alpha0)
    topics, clamped = clamp_topics(v[:vocab_size] / cfg.scale)
    eta = v[vocab_size].copy()
    sigma_ts = None
    if mean_y is not None and mean_y2 is not None:
        sigma_ts = recover_sigma(mean_y, mean_y2, alpha, eta)
    model = SldaModel(alpha, topics, eta, cfg.sigma_assumed)
    return RecoveredModel(model, cfg, eig.lambdas, eig.residual_norm,
                          wm.residual(n2), clamped, sigma_ts, eig.warnings)


def recover_two_stage(corpus: Corpus, responses, cfg: RecoveryConfig) -> RecoveredModel:
    if cfg.method != "two_stage":
        raise ValueError("config method must be two_stage")
    moments = estimate_moments(corpus, responses, cfg.alpha0, threads=cfg.threads)
    return recover_two_stage_from_moments(
        moments,
        lambda w: whitened_m3(corpus, responses, cfg.alpha0, w, moments.m1,
                              threads=cfg.threads),
        cfg)


def recover_joint(corpus: Corpus, responses, cfg: RecoveryConfig) -> RecoveredModel:
    if cfg.method != "joint":
        raise ValueError("config method must be joint")
    jm = estimate_joint_moments(corpus, responses, cfg.alpha0, cfg.sigma_assumed,
                                cfg.scale, threads=cfg.threads)
    y = corpus.responses if responses is None else np.asarray(responses, dtype=float)
    return recover_joint_from_moments(
        jm.n2,
        lambda w: whitened_n3(corpus, responses, cfg.alpha0, cfg.sigma_assumed,
                              cfg.scale, w, jm.n1, threads=cfg.threads),
        cfg, corpus.vocab_size,
        mean_y=None if y is None else float(y.mean()),
        mean_y2=None if y is None else float(y @ y / y.size))


def recover(corpus: Corpus, responses, cfg: RecoveryConfig) -> RecoveredModel:
    if cfg.method == "two_stage":
        return recover_two_stage(corpus, responses, cfg)
    return recover_joint(corpus, responses, cfg)
