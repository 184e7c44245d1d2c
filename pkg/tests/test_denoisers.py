import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ampminimax import _kernels
from ampminimax.denoisers import (KINDS, ScoreTable, ShrinkParams, apply, apply_block_soft,
                                  apply_cap, apply_firm, apply_hard, apply_james_stein,
                                  apply_minimax_scalar, apply_monotone, apply_soft, apply_softpos,
                                  apply_tv, divergence, divergence_fd, implied_penalty,
                                  tv_stationarity_residual)

finite = st.floats(-50, 50, allow_nan=False)


def _table():
    # a small valid odd table: soft-like with a gentler tail
    g = np.linspace(-4, 4, 81)
    psi = np.clip(g, -1.2, 1.2)
    return ScoreTable(g, psi, 1.2, 0.1)


PARAMS = {
    "soft": ShrinkParams("soft", 1.1),
    "softpos": ShrinkParams("softpos", 0.7),
    "cap": ShrinkParams("cap"),
    "hard": ShrinkParams("hard", 1.5),
    "firm": ShrinkParams("firm", 0.8, 2.4),
    "minimax_scalar": ShrinkParams("minimax_scalar", score_table=_table()),
    "block_soft": ShrinkParams("block_soft", 1.5, block_size=4),
    "james_stein": ShrinkParams("james_stein", block_size=5),
    "monotone": ShrinkParams("monotone"),
    "tv": ShrinkParams("tv", 0.6),
}


# --- pointwise examples ---------------------------------------------------------------

@pytest.mark.parametrize("fn, y, want", [
    (lambda y: apply_soft(y, 0.5), 2.0, 1.5),
    (lambda y: apply_soft(y, 0.5), 0.3, 0.0),
    (lambda y: apply_soft(y, 0.5), -2.0, -1.5),
    (lambda y: apply_softpos(y, 0.2), 1.2, 1.0),
    (lambda y: apply_softpos(y, 0.2), -3.0, 0.0),
    (lambda y: apply_softpos(y, 0.2), 0.2, 0.0),
    (apply_cap, 1.7, 1.0),
    (apply_cap, -0.4, 0.0),
    (apply_cap, 0.6, 0.6),
    (lambda y: apply_hard(y, 0.5), 2.0, 2.0),
    (lambda y: apply_hard(y, 0.5), 0.3, 0.0),
    (lambda y: apply_hard(y, 0.5), -0.6, -0.6),
    (lambda y: apply_firm(y, 1.0, 2.0), 1.5, 1.0),
    (lambda y: apply_firm(y, 1.0, 2.0), 3.0, 3.0),
    (lambda y: apply_firm(y, 0.5, np.inf), 2.0, 1.5),
])
def test_scalar_examples(fn, y, want):
    assert float(fn(np.array([y]))[0]) == pytest.approx(want, abs=1e-15)


def test_firm_approaches_soft():
    y = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(apply_firm(y, 0.5, 1e9), apply_soft(y, 0.5), atol=1e-8)


def test_firm_rejects_bad_order():
    with pytest.raises(ValueError):
        apply_firm([1.0], 2.0, 2.0)
    with pytest.raises(ValueError):
        ShrinkParams("firm", 2.0, 1.0)


@given(st.floats(0, 3), st.floats(0.01, 3), arrays(float, 20, elements=finite))
def test_firm_continuous_at_knots(t1, d, y):
    t2 = t1 + d
    for k in (t1, t2):
        lo, hi = apply_firm([k - 1e-9, k + 1e-9], t1, t2)
        assert abs(hi - lo) < 1e-6 * max(1.0, t2 / d)


def test_minimax_scalar_examples():
    tab = _table()
    assert apply_minimax_scalar(np.array([0.0]), tab)[0] == 0.0
    assert apply_minimax_scalar(np.array([9.0]), tab)[0] == pytest.approx(9.0 - 1.2)
    assert apply_minimax_scalar(np.array([-9.0]), tab)[0] == pytest.approx(-9.0 + 1.2)
    i = 50
    assert apply_minimax_scalar(tab.grid[i:i + 1], tab)[0] == pytest.approx(tab.grid[i] - tab.score[i])
    assert tab.check() == []
    with pytest.raises(ValueError):
        ScoreTable(np.array([]), np.array([]), 0.0)


def test_block_examples():
    np.testing.assert_allclose(apply_block_soft([1.2, 1.6], 0.5, 2), [0.9, 1.2])
    np.testing.assert_array_equal(apply_block_soft([0.3, 0.4], 0.5, 2), [0, 0])
    np.testing.assert_array_equal(apply_block_soft([0.3, -4.0], 0.0, 2), [0.3, -4.0])
    with pytest.raises(ValueError):
        apply_block_soft(np.ones(5), 0.5, 2)
    B = 6
    v = np.full(B, np.sqrt((B - 2) / B))
    np.testing.assert_allclose(apply_james_stein(v, B), 0, atol=1e-12)
    np.testing.assert_allclose(apply_james_stein(np.sqrt(2) * v, B), np.sqrt(2) * v / 2)
    big = np.full(B, 1e6)
    assert np.max(np.abs(apply_james_stein(big, B) - big) / big) < 1e-11
    with pytest.raises(ValueError):
        apply_james_stein(np.ones(4), 2)


def test_monotone_examples():
    np.testing.assert_allclose(apply_monotone([1, 2, 3]), [1, 2, 3])
    np.testing.assert_allclose(apply_monotone([3, 1, 2]), [2, 2, 2])
    np.testing.assert_allclose(apply_monotone([2, 1]), [1.5, 1.5])


def _pav_brute(y):
    """Best block-mean fit over all partitions into consecutive blocks with nondecreasing means."""
    n = len(y)
    best, arg = np.inf, None
    for cuts in itertools.product([0, 1], repeat=n - 1):
        edges = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        x = np.concatenate([np.full(b - a, np.mean(y[a:b])) for a, b in zip(edges[:-1], edges[1:])])
        if np.all(np.diff(x) >= -1e-12):
            err = np.sum((x - y) ** 2)
            if err < best:
                best, arg = err, x
    return arg


@given(arrays(float, st.integers(1, 8), elements=st.floats(-10, 10)))
def test_pav_matches_brute_force(y):
    np.testing.assert_allclose(apply_monotone(y), _pav_brute(y), atol=1e-9)


@given(arrays(float, st.integers(1, 60), elements=finite))
def test_pav_invariants(y):
    x = apply_monotone(y)
    assert np.all(np.diff(x) >= -1e-12)
    assert abs(x.sum() - y.sum()) <= 1e-9 * (1 + np.abs(y).sum())


def test_tv_examples():
    np.testing.assert_allclose(apply_tv(np.full(7, 2.5), 1.0), 2.5)
    y = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(apply_tv(y, 0.0), y)
    np.testing.assert_allclose(apply_tv(np.array([1.0, 0.0]), 0.25), [0.75, 0.25], atol=1e-14)


def test_tv_pair_against_grid_oracle():
    # brute-force minimization of the 2-d objective on a fine grid
    y, tau = np.array([1.0, 0.0]), 0.25
    g = np.linspace(-0.5, 1.5, 2001)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    F = 0.5 * ((X1 - y[0]) ** 2 + (X2 - y[1]) ** 2) + tau * np.abs(X2 - X1)
    i, j = np.unravel_index(np.argmin(F), F.shape)
    np.testing.assert_allclose(apply_tv(y, tau), [g[i], g[j]], atol=2e-3)


@given(arrays(float, st.integers(2, 80), elements=finite), st.floats(0, 5))
def test_tv_stationarity(y, tau):
    x = apply_tv(y, tau)
    assert tv_stationarity_residual(x, y, tau) <= 1e-8 * max(1.0, np.abs(y).max())


def test_tv_segment_means_shifted():
    rng = np.random.default_rng(3)
    y = np.repeat([0.0, 4.0, 1.0], 10) + 0.3 * rng.standard_normal(30)
    tau = 0.7
    x = apply_tv(y, tau)
    starts = np.concatenate([[0], np.nonzero(np.diff(x))[0] + 1, [x.size]])
    for k, (a, b) in enumerate(zip(starts[:-1], starts[1:])):
        s_left = 0 if a == 0 else np.sign(x[a] - x[a - 1])
        s_right = 0 if b == x.size else np.sign(x[b] - x[b - 1])
        # the segment value is the mean shifted by -tau*(s_left - s_right)/length
        want = np.mean(y[a:b]) - tau * (s_left - s_right) / (b - a)
        assert x[a] == pytest.approx(want, abs=1e-10)


# --- scale covariance ---------------------------------------------------------------

@pytest.mark.parametrize("kind", [k for k in KINDS if k != "cap"])
@given(y=arrays(float, 20, elements=finite), sigma=st.floats(0.05, 20))
def test_scale_covariance(kind, y, sigma):
    p = PARAMS[kind]
    lhs = apply(y, p, sigma)
    rhs = sigma * apply(y / sigma, p, 1.0)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * sigma * (1 + np.abs(y).max()))


# --- divergence ---------------------------------------------------------------------

def test_divergence_examples():
    assert divergence([2.0, 0.1, -3.0], ShrinkParams("soft", 0.5)) == 2
    assert divergence(np.full(9, 1.3), ShrinkParams("monotone")) == 1
    assert divergence(np.array([0.2, 0.5, 1.4, -1]), ShrinkParams("cap")) == 2


CONTINUOUS = ["soft", "softpos", "cap", "firm", "minimax_scalar", "block_soft",
              "james_stein", "monotone", "tv"]


@pytest.mark.parametrize("kind", CONTINUOUS)
@pytest.mark.parametrize("seed", range(3))
def test_divergence_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    N = 2000
    if kind in ("monotone", "tv"):
        y = np.repeat(rng.normal(0, 3, 40), N // 40) + rng.standard_normal(N)
        y = np.sort(y) if kind == "monotone" and seed == 0 else y
    elif kind == "cap":
        y = rng.uniform(-0.5, 1.5, N)
    else:
        y = rng.standard_normal(N) * np.where(rng.random(N) < 0.2, 4.0, 1.0)
    p = PARAMS[kind]
    sigma = 1.3
    exact = divergence(y, p, sigma)
    fd = divergence_fd(y, p, sigma, h=1e-7, n_probe=None)
    if kind not in ("monotone", "tv"):
        # random sign probes agree as well for the dense maps
        rand = divergence_fd(y, p, sigma, h=1e-7, n_probe=50, seed=seed)
        assert abs(rand - exact) <= 0.02 * exact
    assert abs(fd - exact) <= 0.02 * exact


def test_hard_divergence_is_a_count():
    y = np.array([3.0, -0.5, 0.9, -4.0])
    assert divergence(y, ShrinkParams("hard", 1.0)) == 2


# --- implied penalties --------------------------------------------------------------

def test_soft_penalty_linear():
    x = np.linspace(0, 5, 201)
    tab = implied_penalty(ShrinkParams("soft", 1.3), x)
    np.testing.assert_allclose(tab.J, 1.3 * x, atol=1e-8)
    assert tab.J[0] == 0


def test_firm_penalty_nonconvex_then_flat():
    t1, t2 = 1.0, 3.0
    x = np.linspace(0, 6, 601)
    J = implied_penalty(ShrinkParams("firm", t1, t2), x).J
    assert np.all(np.diff(J) >= -1e-12)
    d2 = np.diff(J, 2) / (x[1] - x[0]) ** 2
    assert d2.min() < -0.1          # strictly concave stretch
    flat = x[1:] > t2 + 1e-9
    np.testing.assert_allclose(np.diff(J)[flat], 0, atol=1e-8)
    # the plateau height is the area under tau1 * (1 - x/t2) on [0, t2]
    assert J[-1] == pytest.approx(t1 * t2 / 2, rel=1e-6)


def test_block_penalties():
    r = np.linspace(0, 10, 401)
    J = implied_penalty(ShrinkParams("block_soft", 2.0, block_size=3), r).J
    np.testing.assert_allclose(J, 2.0 * r, atol=1e-7)
    Jjs = implied_penalty(ShrinkParams("james_stein", block_size=10), r).J
    assert np.all(np.diff(Jjs) >= 0)
    # the residual (B-2)/|y| shrinks as the norm grows, so J is concave
    assert np.all(np.diff(Jjs, 2) <= 1e-9)


def test_hard_penalty_rejected():
    with pytest.raises(ValueError, match="not invertible"):
        implied_penalty(ShrinkParams("hard", 1.0), np.linspace(0, 3, 31))
