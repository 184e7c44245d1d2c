import math
import warnings

import numpy as np
import pytest

from ampminimax.denoisers import ShrinkParams
from ampminimax.minimax import mse_block_soft, mse_firm, mse_soft
from ampminimax.risk import TwoPointPrior, risk_two_point
from ampminimax.state_evolution import (MixtureRisk, SEConfig, check_starshaped,
                                        check_superquadratic, delta_se, hfp, hfp_of, iterate, psi,
                                        superquadratic_report, write_trace_csv)


def _cfg(eps, delta, mu=1.0, kind="soft"):
    pt = mse_soft(eps) if kind == "soft" else mse_firm(eps)
    return SEConfig(delta, pt.tau_star, TwoPointPrior(eps, mu)), pt


def test_psi_matches_mixture_risk():
    cfg, _ = _cfg(0.1, 0.4, mu=2.0)
    m = 0.3
    sigma = math.sqrt(m / cfg.delta)
    want = sigma**2 * risk_two_point(cfg.params, TwoPointPrior(0.1, 2.0 / sigma))
    assert psi(m, cfg) == pytest.approx(want, rel=1e-12)
    assert psi(0.0, cfg) == 0.0
    with pytest.raises(ValueError):
        psi(-1.0, cfg)


def test_default_start():
    cfg, _ = _cfg(0.1, 0.4, mu=3.0)
    assert cfg.m0 == pytest.approx(0.1 * 9.0)


def test_above_transition_converges():
    cfg, pt = _cfg(0.05, pt_delta := mse_soft(0.05).M + 0.03)
    tr = iterate(cfg, 500, 1e-10)
    assert tr.converged
    assert hfp(cfg) == 0.0


def test_below_transition_stalls():
    eps = 0.05
    cfg, pt = _cfg(eps, mse_soft(eps).M - 0.03)
    tr = iterate(cfg, 500)
    h = hfp(cfg)
    assert not tr.converged and h > 0
    assert tr.states[-1] == pytest.approx(h, rel=1e-4)


def test_unit_delta_converges_fast():
    cfg, _ = _cfg(0.1, 1.0)
    tr = iterate(cfg, 200, 1e-12)
    assert tr.converged and len(tr.states) < 200


def test_infinite_amplitude_is_linear():
    eps = 0.1
    pt = mse_soft(eps)
    mix = MixtureRisk(pt.tau_star, eps)
    for d in (pt.M - 0.01, pt.M + 0.01):
        cfg = SEConfig(d, pt.tau_star, TwoPointPrior(eps, math.inf), m0=1.0)
        m = np.array([0.1, 0.5, 1.0])
        np.testing.assert_allclose(psi(m, cfg, mix), m * mix(np.inf) / d)
        assert hfp(cfg, mix=mix) == (math.inf if d < pt.M else 0.0)


def test_hfp_of_simple_map():
    # f(m) = 0.5 m + 0.1 crosses the diagonal at 0.2
    assert hfp_of(lambda m: 0.5 * m + 0.1, 1.0) == pytest.approx(0.2, rel=1e-8)
    assert hfp_of(lambda m: 0.5 * m, 1.0) == 0.0
    with pytest.warns(RuntimeWarning):
        hfp_of(lambda m: 2 * m, 1.0)


def test_starshaped_soft_and_counterexample():
    cfg, _ = _cfg(0.1, 0.35, mu=2.0)
    rep = check_starshaped(cfg, np.geomspace(1e-4, 10, 200))
    assert rep["passed"]
    bad = check_starshaped(lambda m: m**2, np.linspace(0.1, 1, 10))
    assert not bad["passed"] and bad["violations"]


def test_limit_equals_hfp_on_samples():
    for eps, d, mu in [(0.05, 0.15, 1.0), (0.1, 0.25, 2.0), (0.2, 0.45, 0.5)]:
        cfg, _ = _cfg(eps, d, mu)
        tr = iterate(cfg, 3000, 0.0)
        assert tr.states[-1] == pytest.approx(hfp(cfg), rel=1e-5, abs=1e-12)


@pytest.mark.parametrize("eps", [0.05, 0.15])
def test_delta_se_soft(eps):
    assert abs(delta_se(eps, mse_soft(eps).tau_star) - mse_soft(eps).M) <= 2e-3


def test_delta_se_block_soft():
    pt = mse_block_soft(0.10, 4)
    assert abs(delta_se(0.10, pt.tau_star) - pt.M) <= 2e-3


def test_superquadratic_firm_and_counterexample():
    for eps in (0.05, 0.15):
        pt = mse_firm(eps)
        rep = superquadratic_report(pt.tau_star, eps, pt.mu_star)
        assert rep["passed"]
        assert len(rep["m_fp"]) == 200
    rep = check_superquadratic(lambda mu: np.asarray(mu, float) ** 3, 2.0)
    assert not rep["passed"]
    with pytest.raises(ValueError):
        check_superquadratic(lambda mu: mu, math.inf)


def test_below_transition_bounded_by_certificate():
    # with a superquadratic risk the trace cannot fall below the fixed point of the parabola
    eps = 0.1
    pt = mse_firm(eps)
    d = pt.M - 0.02
    cfg = SEConfig(d, pt.tau_star, TwoPointPrior(eps, pt.mu_star))
    tr = iterate(cfg, 400)
    mix = MixtureRisk(pt.tau_star, eps)
    R_star = float(mix(np.array([pt.mu_star]))[0])
    # on m <= m_fp the map satisfies Psi(m) >= m * R(mu*) / delta > m
    m_fp = cfg.m0 * 0.999
    assert R_star > d
    assert min(tr.states) >= 0.5 * min(m_fp, hfp(cfg, mix=mix))


def test_trace_csv(tmp_path):
    cfg, _ = _cfg(0.1, 0.5)
    tr = iterate(cfg, 5)
    path = tmp_path / "t.csv"
    write_trace_csv(path, tr)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,m_t" and len(lines) == len(tr.states) + 1
