import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from anderson_lab.asymptotics import (beta_closed_form, block_statistics, estimate_lyapunov,
                                      estimate_negative_moment, fit_stretched_exponential, fit_stretched_log,
                                      log_norm_samples, sum_envelope)
from anderson_lab.model import DisorderSpec, ModelConfig, sample_realization
from anderson_lab.sampling import sample_seeds
from anderson_lab.transfer import propagate


def _beta_by_quadrature(lam, E, f):
    re = integrate.quad(lambda y: math.cos(f * y), 0.25, 0.75)[0]
    im = integrate.quad(lambda y: math.sin(f * y), 0.25, 0.75)[0]
    return lam ** 2 / (8 * E) * (re * re + im * im)


def test_beta_conventions():
    cfg = ModelConfig(0.25, 1.0)
    assert beta_closed_form(cfg, 1.0, "twoK") == pytest.approx(0.0287311, abs=1e-6)
    assert beta_closed_form(cfg, 1.0, "sqrtE") == pytest.approx(0.0306045, abs=1e-6)
    assert beta_closed_form(cfg, 1.0, "twoK") == pytest.approx(math.sin(0.5) ** 2 / 8, rel=1e-12)
    assert beta_closed_form(cfg, 1.0, "sqrtE") == pytest.approx(math.sin(0.25) ** 2 / 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 30), st.floats(0.1, 5))
def test_beta_quadrature_and_lambda_squared(E, lam):
    k = math.sqrt(E)
    if abs(k / math.pi - round(k / math.pi)) < 1e-6:
        return
    b1 = beta_closed_form(ModelConfig(0.25, lam), E)
    assert b1 == pytest.approx(_beta_by_quadrature(lam, E, 2 * k), rel=1e-8, abs=1e-14)
    assert beta_closed_form(ModelConfig(0.25, 2 * lam), E) == pytest.approx(4 * b1, rel=1e-12)


def test_beta_rejects_resonance():
    with pytest.raises(ValueError):
        beta_closed_form(ModelConfig(0.25, 1.0), math.pi ** 2)
    with pytest.raises(ValueError):
        beta_closed_form(ModelConfig(0.25, 1.0), -1.0)


def test_sum_envelope():
    assert sum_envelope(1, 4, 0.5) == pytest.approx(2.78446, abs=1e-5)
    assert sum_envelope(1, 1, 0.7) == 1.0
    n = 10 ** 6
    # Euler-Maclaurin: 2 sqrt(n) + zeta(1/2) + n^(-1/2)/2 + O(n^(-3/2))
    oracle = 2 * math.sqrt(n) + special.zeta(0.5) + 0.5 / math.sqrt(n)
    assert sum_envelope(1, n, 0.5) == pytest.approx(oracle, rel=1e-4)


def test_zero_disorder_lyapunov():
    cfg = ModelConfig(0.25, 1.0, disorder=DisorderSpec("zero"))
    res = estimate_lyapunov(cfg, 1.0, 500, 8, root_seed=1)
    assert abs(res.mean) < 10 / sum_envelope(1, 500, 0.5)
    assert res.std_error == 0.0


def test_lyapunov_stabilizes_and_checkpoints_agree():
    cfg = ModelConfig(0.25, 1.0)
    a, b = estimate_lyapunov(cfg, 1.0, 2000, 256, root_seed=3, checkpoints=[2000, 4000])
    assert abs(a.mean - b.mean) < 5 * math.hypot(a.std_error, b.std_error)
    single = estimate_lyapunov(cfg, 1.0, 2000, 256, root_seed=3)
    assert single.mean == a.mean and single.std_error == a.std_error


def test_backward_log_norms_match_forward_structure():
    cfg = ModelConfig(0.25, 1.0)
    fwd = log_norm_samples(cfg, 0.8, 10, [10, 60], 4, root_seed=2)
    assert np.all(fwd[:, 0] == 0)
    back = log_norm_samples(cfg, 0.8, 10, [-40, 10], 4, root_seed=2)
    assert np.all(back[:, 1] == 0)
    for i, seed in enumerate(sample_seeds(2, 0, 4)):
        r = sample_realization(cfg, (-40, 70), int(seed))
        assert back[i, 0] == pytest.approx(propagate(r, 10, -40, 0.8, [1.0, 0.0]).log_norm, abs=1e-10)
        assert fwd[i, 1] == pytest.approx(propagate(r, 10, 60, 0.8, [1.0, 0.0]).log_norm, abs=1e-10)
    with pytest.raises(ValueError):
        log_norm_samples(cfg, 0.8, 10, [0, 20], 4, root_seed=2)


def test_block_statistics_scaling():
    cfg = ModelConfig(0.25, 1.0)
    beta = beta_closed_form(cfg, 1.0)
    n0 = 200
    first, second = block_statistics(cfg, 1.0, 10, n0, 256, root_seed=5)
    sig = sum_envelope(9 * n0 + 1, 10 * n0, 0.5)
    assert first.metadata["sigma_block"] == pytest.approx(sig)
    assert first.mean >= 0.5 * (0.5 * beta) * sig
    # second moment bounded by a frozen multiple of the block sum
    assert second.mean < 0.1 * sig
    # block l against block 4l: sums differ by about 2^(1/(2 alpha)) / 2 = 2
    f4, _ = block_statistics(cfg, 1.0, 4, 1000, 2000, root_seed=5)
    f16, _ = block_statistics(cfg, 1.0, 16, 1000, 2000, root_seed=5)
    expected = f4.metadata["sigma_block"] / f16.metadata["sigma_block"]
    assert f4.mean / f16.mean == pytest.approx(expected, rel=0.2)


def test_negative_moment():
    cfg = ModelConfig(0.25, 1.0)
    assert estimate_negative_moment(cfg, 1.0, 5, 5, 0.1, 16, root_seed=1).mean == 1.0
    a, b = estimate_negative_moment(cfg, 1.0, 0, [50, 200], 0.1, 1000, root_seed=4)
    assert b.mean + 3 * math.hypot(a.std_error, b.std_error) < a.mean
    with pytest.raises(ValueError):
        estimate_negative_moment(cfg, 1.0, 0, 10, 1.5, 16, root_seed=1)


def test_fit_examples():
    xs = np.linspace(1, 100, 30)
    fit = fit_stretched_exponential(xs, np.exp(-2 * xs ** 0.5), 0.5)
    assert fit.rate == pytest.approx(2, abs=1e-10) and fit.r_squared == pytest.approx(1, abs=1e-10)
    fit = fit_stretched_exponential(xs, np.full(30, 0.3), 0.5)
    assert fit.rate == 0.0
    with pytest.raises(ValueError):
        fit_stretched_exponential(xs, -np.ones(30), 0.5)
    with pytest.raises(ValueError):
        fit_stretched_log([1, 2], [0, 1], 0.5)


def test_fit_with_noise():
    rng = np.random.default_rng(7)
    xs = np.geomspace(10, 100, 20)
    ys = 5 * np.exp(-0.8 * xs ** 0.5) * (1 + 0.01 * rng.standard_normal(20))
    assert fit_stretched_exponential(xs, ys, 0.5).rate == pytest.approx(0.8, rel=0.05)
