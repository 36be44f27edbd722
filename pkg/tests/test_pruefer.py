import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anderson_lab.asymptotics import batch_couplings
from anderson_lab.model import DisorderSpec, ModelConfig, SingleSitePotential, realization_from_values, sample_realization, single_site_fourier
from anderson_lab.pruefer import (PrueferState, flow_cell, flow_interval, from_pruefer, martingale_decompose,
                                  martingale_terms, second_order_fourier, to_pruefer, winding_count)
from anderson_lab.sampling import sample_seeds
from anderson_lab.transfer import propagate, unit_cell_transfer


def test_coordinate_examples():
    k = 1.7
    s = to_pruefer(0.0, k, k)
    assert s.log_R == pytest.approx(0.0, abs=1e-15) and s.theta == pytest.approx(0.0, abs=1e-15)
    s = to_pruefer(1.0, 0.0, k)
    assert s.log_R == pytest.approx(0.0, abs=1e-15) and s.theta == pytest.approx(math.pi / 2)
    with pytest.raises(ValueError):
        to_pruefer(0.0, 0.0, k)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.05, 20))
def test_round_trip(phi, dphi, k):
    if math.hypot(phi, dphi) < 1e-6:
        return
    back = from_pruefer(to_pruefer(phi, dphi, k))
    assert back[0] == pytest.approx(phi, rel=1e-12, abs=1e-12 * abs(dphi / k))
    assert back[1] == pytest.approx(dphi, rel=1e-12, abs=1e-12 * abs(k * phi))


def test_theta_hint_selects_branch():
    s = to_pruefer(0.3, 0.4, 1.0, theta_hint=20.0)
    assert abs(s.theta - 20.0) <= math.pi
    assert from_pruefer(s) == pytest.approx((0.3, 0.4))


def test_free_flow():
    s = PrueferState(0.3, 0.2, 1.4)
    out = flow_interval(SingleSitePotential.default(), 0.0, s)
    assert out.theta == pytest.approx(0.2 + 1.4, abs=1e-12)
    assert out.log_R == pytest.approx(0.3, abs=1e-12)


def test_flow_matches_transfer_matrix():
    cfg = ModelConfig(0.25, 2.0)
    r = sample_realization(cfg, (1, 40), seed=6)
    E = 1.3
    k = math.sqrt(E)
    rng = np.random.default_rng(0)
    for n in range(1, 40):
        th = rng.uniform(0, 2 * math.pi)
        s = PrueferState(0.0, th, k)
        out = flow_cell(r, n, s, E)
        v = unit_cell_transfer(r, n, E) @ np.array(s.to_solution())
        ref = to_pruefer(v[0], v[1], k, theta_hint=out.theta)
        assert out.log_R == pytest.approx(ref.log_R, abs=1e-7)
        assert out.theta == pytest.approx(ref.theta, abs=1e-7)


def test_half_cells_compose():
    u = SingleSitePotential.default()
    s = PrueferState(0.1, 0.9, 0.8)
    whole = flow_interval(u, 1.7, s)
    half = flow_interval(u, 1.7, flow_interval(u, 1.7, s, 0.0, 0.5), 0.5, 1.0)
    assert half.theta == pytest.approx(whole.theta, abs=1e-9)
    assert half.log_R == pytest.approx(whole.log_R, abs=1e-9)


def test_flow_rejects_wrong_k():
    r = sample_realization(ModelConfig(0.25, 1.0), (0, 3), seed=1)
    with pytest.raises(ValueError):
        flow_cell(r, 1, PrueferState(0.0, 0.0, 2.0), 1.0)


@pytest.mark.parametrize("a,b,n", [(0.1, 0.2, 0), (0.1, math.pi + 0.1, 1), (-0.1, 2 * math.pi, 3)])
def test_winding_examples(a, b, n):
    assert winding_count(a, b) == n


def test_winding_counts_zeros():
    # zeros of phi on a free stretch are where theta crosses multiples of pi
    k = 2.0
    s0 = PrueferState(0.0, 0.3, k)
    u = SingleSitePotential.default()
    s1 = flow_interval(u, 0.0, s0)
    xs = np.linspace(0, 1, 20001)
    phi = np.sin(0.3 + k * xs)
    assert winding_count(s0.theta, s1.theta) == int(np.sum(np.diff(np.sign(phi)) != 0))


def test_second_order_fourier_quadrature():
    from scipy import integrate
    u = SingleSitePotential(segments=(((0.1, 0.3), 0.5), ((0.4, 0.8), 2.0)), c_u=2.0, C_u=2.0, J=(0.4, 0.8))
    U = lambda y: integrate.quad(u.value, 0, y, points=[0.1, 0.3, 0.4, 0.8])[0]
    f = 2.6
    re = integrate.quad(lambda y: u.value(y) * U(y) * math.cos(f * y), 0, 1, points=[0.1, 0.3, 0.4, 0.8])[0]
    im = integrate.quad(lambda y: u.value(y) * U(y) * math.sin(f * y), 0, 1, points=[0.1, 0.3, 0.4, 0.8])[0]
    assert second_order_fourier(u, f) == pytest.approx(complex(re, im), abs=1e-9)
    assert second_order_fourier(u, 0.0) == pytest.approx(u.mass() ** 2 / 2)


def test_zero_disorder_gives_zero_terms():
    cfg = ModelConfig(0.25, 1.0, disorder=DisorderSpec("zero"))
    r = sample_realization(cfg, (1, 60), seed=0)
    d = martingale_decompose(r, 1, 60, 1.0, 0.4)
    assert (d.term1, d.term2, d.term3, d.term4) == (0.0, 0.0, 0.0, 0.0)
    assert abs(d.residual) < 1e-12


def test_total_matches_transfer_and_term4_direct_sum():
    cfg = ModelConfig(0.25, 0.7)
    r = sample_realization(cfg, (0, 400), seed=12)
    E, th = 1.0, 0.37
    k = 1.0
    d = martingale_decompose(r, 10, 300, E, th)
    psi = np.array([math.sin(th), k * math.cos(th)])
    res = propagate(r, 10, 300, E, psi / np.linalg.norm(psi))
    # log R uses the k-weighted norm; at k = 1 it is the Euclidean one
    assert d.total == pytest.approx(res.log_norm, abs=1e-9)
    uh = abs(single_site_fourier(cfg.single_site, 2 * k)) ** 2
    direct = math.fsum(c * c * uh / (8 * k * k) for c in r.couplings(10, 299))
    assert d.term4 == pytest.approx(direct, rel=1e-12)


def test_residual_is_third_order():
    u = SingleSitePotential.default()
    base = batch_couplings(ModelConfig(0.25, 1.0), sample_seeds(5, 0, 1), 1, 200)
    r1 = martingale_terms(u, 0.05 * base, 1.1, 0.3)[0, 4]
    r2 = martingale_terms(u, 0.1 * base, 1.1, 0.3)[0, 4]
    assert 5.0 < r2 / r1 < 11.0


def test_term1_centered():
    cfg = ModelConfig(0.25, 0.5)
    q = batch_couplings(cfg, sample_seeds(3, 0, 2000), 1, 300)
    th = np.random.default_rng(1).uniform(0, math.pi, 2000)
    t1 = martingale_terms(cfg.single_site, q, 1.0, th)[:, 0]
    assert abs(t1.mean()) < 3 * t1.std(ddof=1) / math.sqrt(2000)


def test_checkpoints_match_separate_runs():
    cfg = ModelConfig(0.25, 0.8)
    q = batch_couplings(cfg, sample_seeds(9, 0, 4), 5, 84)
    full = martingale_terms(cfg.single_site, q, 1.2, 0.1, upto=[40, 80])
    assert np.allclose(full[:, 0], martingale_terms(cfg.single_site, q[:, :40], 1.2, 0.1), atol=1e-12)
    assert np.allclose(full[:, 1], martingale_terms(cfg.single_site, q, 1.2, 0.1), atol=1e-12)
    with pytest.raises(ValueError):
        martingale_terms(cfg.single_site, q, 1.2, 0.1, upto=[0])


def test_decompose_preconditions():
    r = realization_from_values(ModelConfig(0.25, 1.0), 0, np.ones(10))
    with pytest.raises(ValueError):
        martingale_decompose(r, 0, 5, 1.0, 0.0)
    with pytest.raises(ValueError):
        martingale_decompose(r, 5, 5, 1.0, 0.0)
