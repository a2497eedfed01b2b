import math

import numpy as np
import pytest
from scipy import stats

from lsgvae.data import Dataset
from lsgvae.errors import ContractError, UndefinedMetricError
from lsgvae.metrics import (DEFAULT_LEVELS, EvalConfig, coverage, crps_cells, crps_samples,
                            evaluate, nmae, qice, volatility_recovery)
from lsgvae.model import ModelConfig, init_params

# closed-form CRPS of N(0, 1) at its own mean: 2*phi(0) - 1/sqrt(pi)
GAUSS_CRPS_AT_MEAN = 2 * stats.norm.pdf(0.0) - 1 / math.sqrt(math.pi)


def gaussian_crps(mu, sigma, x):
    z = (x - mu) / sigma
    return sigma * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z)
                    - 1 / math.sqrt(math.pi))


def naive_crps(samples, truth):
    x = np.asarray(samples, dtype=float)
    S = x.shape[0]
    term1 = np.abs(x - truth).mean(axis=0)
    term2 = np.abs(x[:, None] - x[None, :]).sum(axis=(0, 1)) / (2 * S * S)
    return term1 - term2


def test_crps_examples():
    assert crps_samples(np.full((5, 3, 2), 1.5), np.full((3, 2), 1.5)) == 0.0
    assert crps_samples(np.array([0.0, 2.0]), np.array(1.0)) == 0.5
    assert GAUSS_CRPS_AT_MEAN == pytest.approx(0.2337, abs=1e-4)
    with pytest.raises(ContractError):
        crps_samples(np.zeros((1, 3)), np.zeros(3))


def test_crps_matches_quadratic_estimator(rng):
    x = rng.normal(size=(37, 4, 3))
    y = rng.normal(size=(4, 3))
    np.testing.assert_allclose(crps_cells(x, y), naive_crps(x, y), rtol=1e-12, atol=1e-14)


def test_crps_gaussian_oracle():
    sigma = 3.0
    x = np.random.default_rng(0).normal(2.0, sigma, size=100_000)
    assert crps_samples(x, np.array(2.0)) == pytest.approx(GAUSS_CRPS_AT_MEAN * sigma, rel=0.02)


def test_crps_prefers_the_true_distribution():
    r = np.random.default_rng(11)
    S, cells, chunk = 100_000, 1_000, 50
    truth = r.normal(size=cells)
    for shift in (0.5, -0.5, 1.0):
        diffs = []
        for s in range(0, cells, chunk):
            y = truth[s:s + chunk]
            base = r.normal(size=(S, len(y)))
            diffs.append(crps_cells(base + shift, y) - crps_cells(base, y))
        d = np.concatenate(diffs)
        assert d.mean() - 3 * d.std(ddof=1) / math.sqrt(cells) > 0


def test_crps_error_shrinks_with_samples():
    errs_small, errs_large = [], []
    for seed in range(20):
        r = np.random.default_rng(seed)
        errs_small.append(abs(crps_samples(r.normal(size=1_000), np.array(0.0))
                              - GAUSS_CRPS_AT_MEAN))
        errs_large.append(abs(crps_samples(r.normal(size=100_000), np.array(0.0))
                              - GAUSS_CRPS_AT_MEAN))
    assert np.median(errs_large) < np.median(errs_small)


def test_crps_closed_form_off_center():
    x = np.random.default_rng(4).normal(0.0, 1.0, size=200_000)
    assert crps_samples(x, np.array(1.3)) == pytest.approx(gaussian_crps(0, 1, 1.3), rel=0.01)


def test_nmae_examples():
    assert nmae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert nmae([2.0, 3.0, 4.0], [1.0, 2.0, 3.0]) == 0.5
    t, f = np.array([1.0, -2.0, 3.5]), np.array([0.5, -1.0, 3.0])
    assert nmae(2 * f, 2 * t) == nmae(f, t)
    with pytest.raises(UndefinedMetricError):
        nmae([1.0], [0.0])


def test_nmae_two_pass(rng):
    t, f = rng.normal(size=(30, 4)), rng.normal(size=(30, 4))
    mae = sum(abs(a - b) for a, b in zip(t.ravel(), f.ravel())) / t.size
    mean_abs = sum(abs(a) for a in t.ravel()) / t.size
    assert nmae(f, t) == pytest.approx(mae / mean_abs, rel=1e-12)


def test_qice_examples():
    samples = np.random.default_rng(0).uniform(1, 2, size=(20, 5, 2))
    assert qice(samples, np.zeros((5, 2))) == pytest.approx(0.5)
    np.testing.assert_array_equal(coverage(samples, np.zeros((5, 2))), np.ones(9))
    assert DEFAULT_LEVELS == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    with pytest.raises(ContractError):
        qice(samples[:9], np.zeros((5, 2)))


def test_qice_calibrated_sampler():
    r = np.random.default_rng(5)
    samples = r.normal(size=(100, 100, 100))
    truth = r.normal(size=(100, 100))
    assert qice(samples, truth) < 0.02


def test_volatility_recovery_examples():
    s = np.abs(np.sin(np.linspace(0, 7, 50))) + 0.1
    assert volatility_recovery(s, s) == pytest.approx(1.0, abs=1e-12)
    assert volatility_recovery(3 * s + 2, s) == pytest.approx(1.0, abs=1e-12)
    t = np.linspace(0, 4 * np.pi, 80)
    assert volatility_recovery(1 + 0.5 * np.cos(t), 1 - 0.5 * np.cos(t)) == pytest.approx(
        -1.0, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        volatility_recovery(np.ones(5), s[:5])
    # the mean of a constant 0.1 trace is not exactly 0.1 in floating point
    with pytest.raises(UndefinedMetricError):
        volatility_recovery(np.full(1000, 0.1), np.arange(1000.0))


CFG = ModelConfig(L=24, H=12, C=2, P=6, D=8, hidden_width=16, enc_layers=2)


def test_evaluate_is_deterministic_and_well_formed():
    ds = Dataset(np.random.default_rng(0).normal(size=(120, 2)), ("a", "b"))
    params = init_params(CFG, 0)
    ec = EvalConfig(samples=30)
    a, b = evaluate(params, ds, ec), evaluate(params, ds, ec)
    assert a.to_dict() == b.to_dict()
    assert a.window_count == (120 - 36) // 12 + 1
    assert a.crps >= 0 and a.nmae >= 0 and 0 <= a.qice <= 0.5
    assert a.crps_per_step.shape == (12,) and a.sample_count == 30
    assert EvalConfig().samples == 100


def test_inflated_scale_is_penalized_by_crps_not_qice():
    ds = Dataset(np.random.default_rng(1).normal(size=(240, 2)), ("a", "b"))
    params = init_params(CFG, 0)
    b = params["dec.out.b"].data.copy()
    b[CFG.P:] = 1e4                        # normalized sigma ~ 1e4
    vague = params.replace({"dec.out.b": b})
    ec = EvalConfig(samples=100)
    base, wide = evaluate(params, ds, ec), evaluate(vague, ds, ec)
    assert wide.crps > 100 * base.crps
    # an over-dispersed sampler puts the truth near the median of every cell,
    # so coverage saturates and QICE stays bounded (about 0.22)
    assert wide.qice < 0.25
