import logging

import numpy as np
import pytest

from spectral_slda.evaluation import match_topics
from spectral_slda.model import (SldaModel, dirichlet_moments, generate_corpus,
                                 population_joint_moments, population_moments,
                                 random_model)
from spectral_slda.moments import MomentSet
from spectral_slda.recovery import (RecoveryConfig, alpha_from_lambda, clamp_topics,
                                    recover, recover_joint, recover_joint_from_moments,
                                    recover_sigma, recover_two_stage,
                                    recover_two_stage_from_moments)


def exact_two_stage(model, **cfg):
    pm = population_moments(model)
    ms = MomentSet(pm.m1, pm.m2, pm.my, pm.mean_y, pm.mean_y2, 1)
    cfg = RecoveryConfig(k=model.k, alpha0=model.alpha0, **cfg)
    return recover_two_stage_from_moments(ms, pm.whitened_third, cfg)


def exact_joint(model, scale=100.0, **cfg):
    pj = population_joint_moments(model, scale)
    pm = population_moments(model)
    cfg = RecoveryConfig(method="joint", k=model.k, alpha0=model.alpha0,
                         sigma_assumed=model.sigma, scale=scale, **cfg)
    return recover_joint_from_moments(pj.n2, pj.whitened_third, cfg, model.vocab_size,
                                      pm.mean_y, pm.mean_y2)


def assert_recovered(truth, got, tol=1e-6):
    p = match_topics(truth, got).permutation
    assert np.max(np.abs(truth.topics - got.topics[:, p]).sum(axis=0)) <= tol
    assert np.max(np.abs(truth.alpha - got.alpha[p])) <= tol
    assert np.max(np.abs(truth.eta - got.eta[p])) <= tol


@pytest.mark.parametrize("recoverer", [exact_two_stage, exact_joint])
def test_exact_round_trip(recoverer):
    m = random_model(6, 2, sigma=0.4, seed=1, alpha=[0.35, 0.9])
    r = recoverer(m)
    assert_recovered(m, r.model)
    assert r.model.sigma == pytest.approx(0.4, abs=1e-6)
    assert r.whitening_residual < 1e-6


def test_lambda_to_alpha():
    assert alpha_from_lambda([4 / 3], 1.0)[0] == pytest.approx(0.5)
    alpha = np.array([0.2, 0.3, 0.5])
    lam = 2 / 3 * np.sqrt(2 / alpha)
    assert np.allclose(alpha_from_lambda(lam, 1.0), alpha)


def test_duplicate_eta():
    m = random_model(8, 2, seed=3)
    m = SldaModel(m.alpha, m.topics, [1.0, 1.0], 0.0)
    for r in (exact_two_stage(m), exact_joint(m)):
        assert np.allclose(r.model.eta, 1.0, atol=1e-6)


def test_joint_scale_invariance():
    m = random_model(9, 3, sigma=0.2, seed=5, alpha=[0.3, 0.3, 0.6])
    a, b = exact_joint(m, scale=1.0), exact_joint(m, scale=100.0)
    p = match_topics(a.model, b.model).permutation
    assert np.allclose(a.model.topics, b.model.topics[:, p], atol=1e-8)
    assert np.allclose(a.model.eta, b.model.eta[p], atol=1e-8)


def test_zero_eta_zero_responses():
    m = random_model(7, 2, seed=2)
    m = SldaModel(m.alpha, m.topics, [0.0, 0.0], 0.0)
    c = generate_corpus(m, 200, 10, seed=0)
    assert np.all(c.responses == 0)
    pj = population_joint_moments(m, 100.0)
    cfg = RecoveryConfig(method="joint", k=2, alpha0=m.alpha0, sigma_assumed=0.0)
    r = recover_joint_from_moments(pj.n2, pj.whitened_third, cfg, 7)
    assert np.allclose(r.model.eta, 0, atol=1e-8)


def test_two_stage_and_joint_agree_on_exact_moments():
    m = random_model(10, 3, sigma=0.5, seed=8, alpha=[0.5, 0.2, 0.3])
    a, b = exact_two_stage(m).model, exact_joint(m).model
    p = match_topics(a, b).permutation
    assert np.allclose(a.topics, b.topics[:, p], atol=1e-6)
    assert np.allclose(a.eta, b.eta[p], atol=1e-6)
    assert np.allclose(a.alpha, b.alpha[p], atol=1e-6)


def test_permutation_invariance():
    m = random_model(8, 3, seed=9, alpha=[0.2, 0.3, 0.5])
    a = exact_two_stage(m).model
    b = exact_two_stage(m.permuted([2, 0, 1])).model
    p = match_topics(a, b).permutation
    assert np.allclose(a.topics, b.topics[:, p], atol=1e-8)


def test_recover_sigma_exact():
    m = random_model(5, 3, sigma=0.5, seed=0, alpha=[0.2, 0.5, 0.8])
    pm = population_moments(m)
    assert recover_sigma(pm.mean_y, pm.mean_y2, m.alpha, m.eta) == pytest.approx(0.5, abs=1e-6)


def test_recover_sigma_pure_noise():
    assert recover_sigma(0.0, 2.25, [0.5, 0.5], [0.0, 0.0]) == pytest.approx(1.5)


def test_recover_sigma_clamps_negative():
    alpha, eta = np.array([0.5, 0.5]), np.array([1.0, 2.0])
    _, second, _ = dirichlet_moments(alpha)
    with pytest.warns(RuntimeWarning, match="moment mismatch"):
        assert recover_sigma(1.5, eta @ second @ eta - 1e-3, alpha, eta) == 0.0
    # tiny negative values within tolerance clamp silently
    assert recover_sigma(1.5, eta @ second @ eta - 1e-9, alpha, eta) == 0.0


def test_recover_sigma_logs_mean_mismatch(caplog):
    with caplog.at_level(logging.INFO, logger="spectral_slda.recovery"):
        recover_sigma(5.0, 30.0, [0.5, 0.5], [1.0, 2.0])
    assert "E[y] mismatch" in caplog.text


def test_clamp_topics():
    cols = np.array([[0.6, 0.5], [0.5, 0.5], [-0.1, 0.0]])
    out, clipped = clamp_topics(cols)
    assert clipped == pytest.approx(0.1)
    assert np.allclose(out.sum(axis=0), 1)
    assert np.all(out >= 0)
    with pytest.raises(ValueError):
        clamp_topics(np.array([[-1.0], [0.0]]))


def test_config_validation():
    with pytest.raises(ValueError):
        RecoveryConfig(method="other")
    with pytest.raises(ValueError):
        RecoveryConfig(alpha0=0)
    with pytest.raises(ValueError):
        RecoveryConfig(scale=-1)
    with pytest.raises(ValueError):
        RecoveryConfig(sigma_assumed=-0.1)
    with pytest.raises(ValueError):
        RecoveryConfig(whitening="fast")
    with pytest.raises(ValueError):
        RecoveryConfig(k=0)


def test_method_mismatch():
    m = random_model(10, 2, seed=0)
    c = generate_corpus(m, 50, 10, seed=0)
    with pytest.raises(ValueError):
        recover_two_stage(c, None, RecoveryConfig(method="joint", k=2))
    with pytest.raises(ValueError):
        recover_joint(c, None, RecoveryConfig(k=2))


@pytest.mark.parametrize("method", ["two_stage", "joint"])
def test_corpus_recovery_is_close(method):
    m = random_model(30, 3, sigma=0.1, seed=4)
    c = generate_corpus(m, 20000, 50, seed=0)
    cfg = RecoveryConfig(method=method, k=3, alpha0=m.alpha0, sigma_assumed=0.1)
    r = recover(c, None, cfg)
    p = match_topics(m, r.model).permutation
    assert np.abs(m.topics - r.model.topics[:, p]).sum(axis=0).max() < 0.2
    assert np.abs(m.eta - r.model.eta[p]).max() < 0.3
    prov = r.provenance()
    assert prov["config"]["method"] == method
    assert len(prov["lambdas"]) == 3
    if method == "joint":
        assert r.model.sigma == 0.1
        assert prov["sigma_two_stage_estimate"] is not None


def test_randomized_whitening_pipeline():
    m = random_model(30, 3, sigma=0.5, seed=4)
    c = generate_corpus(m, 5000, 50, seed=0)
    r = recover(c, None, RecoveryConfig(k=3, alpha0=1.0, whitening="randomized"))
    assert r.model.topics.shape == (30, 3)
    assert np.allclose(r.model.topics.sum(axis=0), 1)
