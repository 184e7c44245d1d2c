import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from ampminimax.denoisers import ShrinkParams
from ampminimax.experiments import (PTGridResult, SignalSpec, default_delta_grid, fit_logistic,
                                    fit_offset_scaling, fit_report, fit_slope_scaling,
                                    read_grid_csv, run_pt_grid, sample_signal, trial_seeds, tuned,
                                    write_fit_json, write_grid_csv)
from ampminimax.minimax import IntervalDistribution, mse_soft

MONO_DIST = IntervalDistribution([(4, "none", 0.5), (16, "none", 0.5)])
TV_DIST = IntervalDistribution([(5, "++", 0.5), (15, "+-", 0.5)])


def binom_ci(k, n, z=4.0):
    p = k / n
    return p - z * math.sqrt(p * (1 - p) / n), p + z * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("cls", ["simple_sparse", "positive_sparse"])
def test_sparse_fraction(cls):
    x = sample_signal(SignalSpec(cls, 20_000, 0.1, amplitude=3.0), 1)
    lo, hi = binom_ci(np.count_nonzero(x), x.size)
    assert lo <= 0.1 <= hi
    assert set(np.unique(np.abs(x))) == {0.0, 3.0}
    if cls == "positive_sparse":
        assert x.min() >= 0


def test_box_signal():
    x = sample_signal(SignalSpec("box", 20_000, 0.2), 2)
    inner = (x > 0) & (x < 1)
    lo, hi = binom_ci(np.count_nonzero(inner), x.size)
    assert lo <= 0.2 <= hi
    assert x.min() >= 0 and x.max() <= 1


def test_block_sparse_signal():
    x = sample_signal(SignalSpec("block_sparse", 4000, 0.25, amplitude=2.0, B=4), 3).reshape(-1, 4)
    norms = np.linalg.norm(x, axis=1)
    on = norms > 0
    np.testing.assert_allclose(norms[on], 2.0)
    lo, hi = binom_ci(on.sum(), on.size)
    assert lo <= 0.25 <= hi
    with pytest.raises(ValueError):
        SignalSpec("block_sparse", 10, 0.1, B=3)


def test_monotone_signal():
    x = sample_signal(SignalSpec("monotone_lf", 1000, 0.1, amplitude=2.5, interval_dist=MONO_DIST), 4)
    d = np.diff(x)
    assert x[0] == 2.5
    assert np.all(d >= 0)
    np.testing.assert_allclose(d[d > 0], 2.5)
    lengths = np.diff(np.flatnonzero(np.r_[True, d > 0, True]))
    # every plateau but the truncated last one comes from the distribution
    assert set(lengths[:-1]) <= {4, 16}


def test_tv_random_plateaus_geometric():
    eps = 0.05
    x = sample_signal(SignalSpec("tv_random", 200_000, eps, amplitude=1.0), 5)
    d = np.diff(x)
    assert set(np.unique(np.abs(d))) <= {0.0, 1.0}
    lengths = np.diff(np.flatnonzero(np.r_[True, d != 0, True]))[1:-1]
    assert lengths.mean() == pytest.approx(1 / eps, rel=0.05)
    # memoryless: the lengths pass a goodness-of-fit test against the geometric law
    edges = np.array([1, 5, 10, 15, 20, 30, 45, 70, np.inf])
    obs = np.histogram(lengths, edges)[0]
    p = np.diff(stats.geom(eps).cdf(edges - 1))
    assert stats.chisquare(obs, p * obs.sum()).pvalue > 1e-3


def test_tv_lf_signal():
    x = sample_signal(SignalSpec("tv_lf", 600, 0.1, amplitude=1.0, interval_dist=TV_DIST), 6)
    d = np.diff(x)
    assert set(np.unique(np.abs(d))) <= {0.0, 1.0}
    assert np.count_nonzero(d) >= 20
    with pytest.raises(ValueError):
        SignalSpec("tv_lf", 100, 0.1)


def test_signal_validation():
    with pytest.raises(ValueError):
        SignalSpec("plaid", 10, 0.1)
    with pytest.raises(ValueError):
        SignalSpec("simple_sparse", 10, 1.5)


def test_trial_seeds_distinct():
    a = trial_seeds(0, 1, 2)
    b = trial_seeds(0, 2, 1)
    draws = {np.random.default_rng(s).integers(1 << 62) for s in (*a, *b)}
    assert len(draws) == 4


def test_tuned_kinds():
    assert tuned("soft", 0.1).M == mse_soft(0.1).M
    assert tuned("cap", 0.2).M == 0.6
    with pytest.raises(ValueError):
        tuned("quantum", 0.1)


# --- grids --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_grid():
    eps = 0.1
    pt = mse_soft(eps)
    spec = SignalSpec("simple_sparse", 400, eps)
    grid = default_delta_grid(pt.M, 0.1, 5)
    return pt, spec, grid, run_pt_grid(eps, pt.tau_star, spec, grid, 12, seed=3)


def test_grid_reproducible_and_worker_independent(small_grid):
    pt, spec, grid, res = small_grid
    again = run_pt_grid(0.1, pt.tau_star, spec, grid, 12, seed=3)
    assert again.rows == res.rows
    split = run_pt_grid(0.1, pt.tau_star, spec, grid, 12, seed=3, workers=2)
    assert split.rows == res.rows
    other = run_pt_grid(0.1, pt.tau_star, spec, grid, 12, seed=4)
    assert other.rows != res.rows


def test_grid_success_increases(small_grid):
    _, _, _, res = small_grid
    f = res.fractions()
    assert f[0] < 0.5 < f[-1]
    # allow one Monte Carlo reversal between neighbours
    assert np.sum(np.diff(f) < 0) <= 1


def test_grid_validation():
    spec = SignalSpec("simple_sparse", 50, 0.1)
    with pytest.raises(ValueError):
        run_pt_grid(0.1, ShrinkParams("soft", 1.0), spec, [0.3], 0)
    with pytest.raises(ValueError):
        run_pt_grid(0.1, ShrinkParams("soft", 1.0), spec, [1.3], 2)
    with pytest.raises(ValueError):
        run_pt_grid(0.1, ShrinkParams("soft", 1.0), spec, [0.3], 2, criterion="vibes")
    with pytest.raises(ValueError):
        PTGridResult(0.1, 50, [(0.3, 5, 4)])


def test_grid_csv_roundtrip(small_grid, tmp_path):
    _, _, _, res = small_grid
    path = tmp_path / "g.csv"
    write_grid_csv(path, [res])
    back, = read_grid_csv(path)
    assert back.N == res.N and back.kind == "soft" and back.seed == 3
    np.testing.assert_allclose([r[0] for r in back.rows], [r[0] for r in res.rows], rtol=1e-9)
    assert [r[1:] for r in back.rows] == [r[1:] for r in res.rows]


# --- logistic fits --------------------------------------------------------------

def synthetic(alpha, beta, pred, n, seed, deltas=None):
    rng = np.random.default_rng(seed)
    deltas = np.linspace(pred - 0.05, pred + 0.05, 11) if deltas is None else deltas
    p = special.expit(alpha + beta * (deltas - pred))
    return PTGridResult(0.1, 1000, [(d, int(k), n) for d, k in zip(deltas, rng.binomial(n, p))])


def test_logistic_recovers_parameters():
    fit = fit_logistic(synthetic(0.0, 50.0, 0.3, 100_000, 1), 0.3)
    assert fit.alpha_hat == pytest.approx(0.0, abs=0.02)
    assert fit.beta_hat == pytest.approx(50.0, rel=0.01)
    assert abs(fit.offset) < 1e-3 and fit.ci_lo < 0 < fit.ci_hi
    assert not fit.separated


def test_logistic_offset_sign_and_level():
    # success midpoint sits 0.01 above the prediction
    fit = fit_logistic(synthetic(-0.5, 50.0, 0.3, 200_000, 2), 0.3)
    assert fit.offset == pytest.approx(0.01, abs=5e-4)
    hi = fit_logistic(synthetic(-0.5, 50.0, 0.3, 200_000, 2), 0.3, level=0.9)
    assert hi.offset == pytest.approx((math.log(9) + 0.5) / 50, abs=1e-3)


@settings(max_examples=25)
@given(st.floats(-2, 2), st.floats(10, 200), st.integers(0, 10_000))
def test_logistic_offset_equals_half_crossing(alpha, beta, seed):
    res = synthetic(alpha, beta, 0.25, 400, seed)
    try:
        fit = fit_logistic(res, 0.25)
    except np.linalg.LinAlgError:
        return
    if fit.separated:
        s = np.array([r[1] for r in res.rows])
        assert np.all((s == 0) | (s == 400))
    else:
        # the fitted curve crosses 1/2 exactly at the offset
        assert special.expit(fit.alpha_hat + fit.beta_hat * fit.offset) == pytest.approx(0.5)


def test_separation_flag():
    res = PTGridResult(0.1, 100, [(0.2, 0, 10), (0.25, 0, 10), (0.3, 10, 10), (0.35, 10, 10)])
    fit = fit_logistic(res, 0.26)
    assert fit.separated and fit.beta_hat == math.inf
    assert fit.offset == pytest.approx(0.015)
    res = PTGridResult(0.1, 100, [(0.2, 10, 10), (0.25, 10, 10), (0.3, 10, 10)])
    assert fit_logistic(res, 0.25).separated
    with pytest.raises(ValueError):
        fit_logistic(PTGridResult(0.1, 100, [(0.2, 3, 10), (0.3, 6, 10)]), 0.25)


def test_offset_interval_coverage():
    # 2000 replications keep the Monte Carlo SD of the coverage near 0.5%
    alpha, beta, pred = 0.3, 60.0, 0.3
    true = -alpha / beta
    hits = 0
    reps = 2000
    for s in range(reps):
        f = fit_logistic(synthetic(alpha, beta, pred, 200, 1000 + s), pred)
        hits += f.ci_lo <= true <= f.ci_hi
    cov = hits / reps
    print(f"offset interval coverage {cov:.4f}")
    assert 0.93 <= cov <= 0.97


def test_fit_report_and_json(tmp_path):
    fits = {("soft", 0.1, 1000): fit_logistic(synthetic(0.0, 50.0, 0.3, 1000, 3), 0.3),
            ("soft", 0.1, 2000): fit_logistic(PTGridResult(0.1, 2000, [(0.2, 0, 5), (0.3, 0, 5),
                                                                          (0.4, 5, 5)]), 0.3)}
    rows = fit_report(fits)
    assert len(rows) == 1
    assert set(rows[0]) >= {"Pred", "off.1000", "ci.1000.lo", "ci.1000.hi", "off.2000"}
    path = tmp_path / "f.json"
    write_fit_json(path, fits)
    text = path.read_text()
    assert "Infinity" not in text and "NaN" not in text and "null" in text


# --- scaling ------------------------------------------------------------------------

def test_offset_scaling_picks_cube_root():
    rng = np.random.default_rng(0)
    Ns = [500, 1000, 2000, 4000, 8000]
    recs = [(g, N, c * N ** (-1 / 3) * (1 + 0.01 * rng.standard_normal()), 1e-3)
            for g, c in (("a", 0.5), ("b", -0.3)) for N in Ns]
    rep = fit_offset_scaling(recs)
    best = max(rep, key=lambda g: rep[g]["R2"])
    assert best == pytest.approx(1 / 3)
    assert rep[best]["coef"]["a"] == pytest.approx(0.5, rel=0.02)


def test_slope_scaling_picks_square_root():
    Ns = [250, 1000, 4000]
    recs = [("s", N, 3.0 * math.sqrt(N), 1.0) for N in Ns]
    rep = fit_slope_scaling(recs)
    assert max(rep, key=lambda g: rep[g]["R2"]) == pytest.approx(0.5)
    assert rep[0.5]["R2"] == pytest.approx(1.0)


def test_scaling_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_offset_scaling([])
    with pytest.raises(ValueError):
        fit_offset_scaling([("a", 1000, 0.1, 0.01), ("a", 1000, 0.2, 0.01)])
