"""Whitening and the robust tensor power method."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class RankDeficientError(RuntimeError):
    """The second moment has fewer than ``k`` usable positive directions."""


class NegativeEigenvalueError(RuntimeError):
    """A tensor eigenpair came out with a nonpositive eigenvalue."""


@dataclass(frozen=True)
class WhiteningMatrix:
    w: np.ndarray
    w_pinv: np.ndarray
    sigma_k: float

    def residual(self, m2) -> float:
        """Frobenius norm of ``W^T M2 W - I``."""
        k = self.w.shape[1]
        return float(np.linalg.norm(self.w.T @ m2 @ self.w - np.eye(k)))


def _check_rank(vals, k, rank_tol):
    top = max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
    if vals[k - 1] <= rank_tol * top:
        raise RankDeficientError(
            f"rank deficient: {k}-th eigenvalue {vals[k - 1]:.3g} is below "
            f"{rank_tol:.1g} x largest; reduce k")


def whiten_exact(m2, k: int, rank_tol: float = 1e-10) -> WhiteningMatrix:
    """``W = U_k S_k^{-1/2}`` from the top-``k`` eigenpairs of ``m2``."""
    m2 = np.asarray(m2, dtype=float)
    if k > m2.shape[0]:
        raise RankDeficientError(f"rank deficient: k={k} exceeds dimension {m2.shape[0]}")
    vals, vecs = np.linalg.eigh((m2 + m2.T) / 2)
    vals, vecs = vals[::-1][:k], vecs[:, ::-1][:, :k]
    _check_rank(vals, k, rank_tol)
    root = np.sqrt(vals)
    return WhiteningMatrix(vecs / root, (vecs * root).T, float(vals[-1]))


def whiten_randomized(m2, k: int, oversample_factor: int = 10, seed=0,
                      rank_tol: float = 1e-10) -> WhiteningMatrix:
    """Nyström-style whitening from a random Gaussian sketch of ``m2``.

    With ``C = M2 S`` and ``Omega = S^T M2 S`` the whitening matrix is
    ``U_C Sigma_C^{-1} D_C^T D_Omega Sigma_Omega^{1/2}`` after truncating both
    SVDs to rank ``k``.
    """
    m2 = np.asarray(m2, dtype=float)
    dim = m2.shape[0]
    if k > dim:
        raise RankDeficientError(f"rank deficient: k={k} exceeds dimension {dim}")
    width = min(oversample_factor * k, dim)
    rng = np.random.default_rng(seed)
    sketch = rng.standard_normal((dim, width))
    c = m2 @ sketch
    omega = sketch.T @ c
    omega = (omega + omega.T) / 2
    u_c, s_c, dt_c = np.linalg.svd(c, full_matrices=False)
    _, s_o, dt_o = np.linalg.svd(omega)
    _check_rank(s_c, k, rank_tol)
    _check_rank(s_o, k, rank_tol)
    u_c, s_c, d_c = u_c[:, :k], s_c[:k], dt_c[:k].T
    d_o, s_o = dt_o[:k].T, s_o[:k]
    w = (u_c / s_c) @ (d_c.T @ d_o) * np.sqrt(s_o)
    w_pinv = np.linalg.pinv(w)
    # smallest singular value of the rank-k Nystrom approximation
    sigma_k = float(1.0 / np.linalg.svd(w, compute_uv=False)[0] ** 2)
    return WhiteningMatrix(w, w_pinv, sigma_k)


def whiten(m2, k, method="exact", oversample=10, seed=0, rank_tol=1e-10):
    if method == "exact":
        return whiten_exact(m2, k, rank_tol)
    if method == "randomized":
        return whiten_randomized(m2, k, oversample, seed, rank_tol)
    raise ValueError(f"unknown whitening method {method!r}")


@dataclass(frozen=True)
class EigenDecomposition:
    lambdas: np.ndarray
    omegas: np.ndarray          # k x k, column i is the i-th eigenvector
    residual_norm: float
    warnings: tuple = field(default_factory=tuple)

    @property
    def pairs(self):
        return [(float(l), self.omegas[:, i]) for i, l in enumerate(self.lambdas)]

    def reconstruct(self):
        return np.einsum("i,ai,bi,ci->abc", self.lambdas, self.omegas,
                         self.omegas, self.omegas)


def tensor_apply(t, theta):
    """``t(I, theta, theta)`` for a batch of row vectors ``theta``."""
    return np.einsum("ijl,nj,nl->ni", t, theta, theta)


def _power_steps(t, theta, iters):
    for _ in range(iters):
        nxt = tensor_apply(t, theta)
        norms = np.linalg.norm(nxt, axis=1, keepdims=True)
        theta = nxt / np.where(norms > 0, norms, 1.0)
    return theta


def probe_norm(t, probes=20, seed=0) -> float:
    """Estimate of the operator norm: max ``|t(u,u,u)|`` over random unit ``u``."""
    rng = np.random.default_rng([seed, 0x5EED])
    u = rng.standard_normal((probes, t.shape[0]))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return float(np.max(np.abs(np.einsum("ijl,ni,nj,nl->n", t, u, u, u))))


def robust_tpm(t, k: int, restarts: int = 100, iters: int = 100, seed=0,
               sign_reference=None, tol=1e-6) -> EigenDecomposition:
    """Eigenpairs of a symmetric ``k x k x k`` tensor by power iteration with
    restarts and deflation.

    Each round runs ``restarts`` random starts for ``iters`` steps, keeps the
    start with the largest ``t(theta, theta, theta)``, refines it for another
    ``iters`` steps and deflates.  Eigenvectors are sign-flipped so the
    eigenvalue is positive.  When ``sign_reference`` is given, a valid
    eigenvector must also have a positive inner product with it; a component
    that can only be oriented the other way has a negative eigenvalue and
    raises :class:`NegativeEigenvalueError`.
    """
    t = np.array(t, dtype=float)
    dim = t.shape[0]
    if t.shape != (dim, dim, dim):
        raise ValueError("expected a cubic third-order tensor")
    if k > dim:
        raise ValueError(f"cannot extract {k} components from dimension {dim}")
    if restarts < 1 or iters < 1:
        raise ValueError("restarts and iters must be positive")
    lambdas, omegas, notes = [], [], []
    for rnd in range(k):
        rng = np.random.default_rng([seed, rnd])
        theta = rng.standard_normal((restarts, dim))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        theta = _power_steps(t, theta, iters)
        scores = np.einsum("ni,ni->n", tensor_apply(t, theta), theta)
        best = theta[int(np.argmax(scores))][None, :]
        best = _power_steps(t, best, iters - 1)
        last = _power_steps(t, best, 1)
        drift = min(np.linalg.norm(last - best), np.linalg.norm(last + best))
        if drift > tol:
            msg = f"round {rnd}: power iteration not converged (step {drift:.2g})"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        theta = last[0]
        lam = float(theta @ tensor_apply(t, theta[None, :])[0])
        if lam < 0:
            lam, theta = -lam, -theta
        if sign_reference is not None and float(np.dot(sign_reference, theta)) < 0:
            lam, theta = -lam, -theta
        if lam <= 0:
            raise NegativeEigenvalueError(
                f"negative eigenvalue {lam:.3g} in round {rnd}: "
                f"whitened tensor not decomposable at k={k}")
        lambdas.append(lam)
        omegas.append(theta)
        t = t - lam * np.einsum("i,j,l->ijl", theta, theta, theta)
    lambdas = np.asarray(lambdas)
    omegas = np.asarray(omegas).T
    order = np.argsort(-lambdas, kind="stable")
    return EigenDecomposition(lambdas[order], omegas[:, order],
                              probe_norm(t, seed=seed), tuple(notes))
