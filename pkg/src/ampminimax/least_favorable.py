"""Minimax over all scalar rules via least-favorable priors.

The Bayes risk of a prior nu under unit Gaussian noise is 1 - I(gamma * nu), with
I the Fisher information of the noisy marginal.  We minimize I over symmetric
priors with mass 1 - eps at zero whose nonzero part is K free atoms plus a
geometric tail.  1 - I at the fit is a lower bound on the minimax MSE.  For an
upper bound, Huber's inequality I >= (E psi')^2 / E psi^2 is evaluated at the
fitted score psi against the worst two-point mixture.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .denoisers import ScoreTable, ShrinkParams, scalar_pieces
from .minimax import MinimaxCurvePoint, _check_eps, mse_soft
from .risk import _trunc_moments, risk_scalar

_SQ2PI = 1.0 / math.sqrt(2 * math.pi)
NODES_PER_UNIT = 100


@dataclass
class MinimaxPriorFit:
    epsilon: float
    atoms: list           # (location, weight) for the free atoms, weights as fractions of eps
    tail: tuple           # (spacing c1, weight c0, decay lam)
    I_upper: float
    I_lower: float
    K: int

    def support(self, n_tail):
        """Nonzero atom locations and absolute masses (one side), with n_tail tail atoms."""
        locs = np.array([a[0] for a in self.atoms], float)
        w = np.array([a[1] for a in self.atoms], float)
        c1, c0, lam = self.tail
        j = np.arange(1, n_tail + 1)
        locs = np.concatenate([locs, locs[-1] + c1 * j])
        w = np.concatenate([w, c0 * (1 - lam) * lam ** (j - 1)])
        return locs, self.epsilon * w


def _unpack(theta, K):
    theta = np.asarray(theta, float)
    inc = np.exp(np.clip(theta[:K], math.log(1e-3), math.log(10.0)))
    locs = np.cumsum(inc)
    logits = np.concatenate([theta[K:2 * K], [0.0]])
    w = np.exp(logits - logits.max())
    w /= w.sum()
    c1 = math.exp(min(max(theta[2 * K], math.log(0.3)), math.log(10.0)))
    lam = 1.0 / (1.0 + math.exp(-theta[2 * K + 1]))
    lam = min(max(lam, 1e-8), 0.95)
    return locs, w, c1, lam


def _tail_count(lam, rel=1e-16, cap=60):
    return int(min(cap, max(1, math.ceil(math.log(rel) / math.log(lam)))))


def _marginal(y, eps, locs, mass):
    """Noisy marginal density f and derivative f' at y for the symmetric prior."""
    d1 = y[:, None] - locs[None, :]
    d2 = y[:, None] + locs[None, :]
    p1 = np.exp(-0.5 * d1 * d1)
    p2 = np.exp(-0.5 * d2 * d2)
    g0 = np.exp(-0.5 * y * y)
    f = (1 - eps) * g0 + (p1 + p2) @ (0.5 * mass)
    fp = -(1 - eps) * y * g0 - (d1 * p1 + d2 * p2) @ (0.5 * mass)
    return f * _SQ2PI, fp * _SQ2PI


def fisher_information(eps, locs, mass, h=1.0 / NODES_PER_UNIT):
    """I(f) = int f'^2 / f on [-(max atom + 6), max atom + 6], by the trapezoid rule."""
    Y = float(np.max(locs)) + 6.0 if len(locs) else 6.0
    y = np.arange(0.0, Y + 0.5 * h, h)
    f, fp = _marginal(y, eps, np.asarray(locs, float), np.asarray(mass, float))
    g = fp * fp / np.maximum(f, 1e-300)
    return 2.0 * h * (np.sum(g) - 0.5 * g[0] - 0.5 * g[-1])


def _objective(theta, K, eps):
    locs, w, c1, lam = _unpack(theta, K)
    j = np.arange(1, _tail_count(lam) + 1)
    all_locs = np.concatenate([locs, locs[-1] + c1 * j])
    mass = eps * np.concatenate([w[:-1], w[-1] * (1 - lam) * lam ** (j - 1)])
    return fisher_information(eps, all_locs, mass)


def fit_prior(eps, K=2, starts=None, maxfev=4000):
    """Minimize Fisher information over the K-atom-plus-geometric-tail family."""
    _check_eps(eps)
    if K < 2:
        raise ValueError("K must be >= 2")
    if starts is None:
        ts = mse_soft(eps).tau_star.tau1
        starts = [(ts + 0.5, 1.0), (ts + 1.5, 2.0)]
    best = None
    for m1, s in starts:
        th0 = np.concatenate([[math.log(m1)], np.full(K - 1, math.log(s)), np.zeros(K),
                              [math.log(s), 0.0]])
        r = optimize.minimize(_objective, th0, args=(K, eps), method="Nelder-Mead",
                              options=dict(maxfev=maxfev, xatol=1e-7, fatol=1e-13, adaptive=True))
        if best is None or r.fun < best.fun:
            best = r
    # restart once from the incumbent, then polish
    r = optimize.minimize(_objective, best.x, args=(K, eps), method="Nelder-Mead",
                          options=dict(maxfev=maxfev, xatol=1e-8, fatol=1e-14, adaptive=True))
    if r.fun < best.fun:
        best = r
    r = optimize.minimize(_objective, best.x, args=(K, eps), method="L-BFGS-B")
    if r.fun < best.fun:
        best = r
    locs, w, c1, lam = _unpack(best.x, K)
    return MinimaxPriorFit(eps, [(float(a), float(b)) for a, b in zip(locs, w[:-1])],
                           (c1, float(w[-1]), lam), float(best.fun), float("nan"), K)


def _half_score(fit: MinimaxPriorFit, periods, h=1.0 / NODES_PER_UNIT):
    c1 = fit.tail[0]
    locs, mass = fit.support(periods + 10)
    Y = fit.atoms[-1][0] + c1 * periods
    y = np.arange(0, int(math.ceil(Y / h)) + 1) * h
    f, fp = _marginal(y, fit.epsilon, locs, mass)
    return y, -fp / np.maximum(f, 1e-300)


def _table_from_half(y, psi, cut, eps):
    y, psi = y[:cut + 1], psi[:cut + 1]
    grid = np.concatenate([-y[:0:-1], y])
    score = np.concatenate([-psi[:0:-1], psi])
    return ScoreTable(grid, score, float(psi[-1]), eps)


def _shift_moments(params: ShrinkParams, mu):
    """E psi'(Y) and E psi(Y)^2 for psi = y - eta and Y = mu + Z."""
    lo, hi, s, c = scalar_pieces(params)
    m = np.atleast_1d(np.asarray(mu, float))[:, None]
    m0, m1, m2 = _trunc_moments(lo[None] - m, hi[None] - m)
    a0 = -c[None] + (1 - s[None]) * m
    a1 = 1 - s[None]
    return np.sum(a1 * m0, axis=1), np.sum(a0 * a0 * m0 + 2 * a0 * a1 * m1 + a1 * a1 * m2, axis=1)


def huber_bounds(params: ShrinkParams, eps, mu_max=None, step=0.02, chunk=200):
    """Worst two-point mixture for the rule y - psi.

    Returns (I_lower, mse_max, mu_ratio, mu_mse): I_lower is the smallest
    Huber ratio (E psi')^2 / E psi^2 over mixtures (1 - eps) N(0,1) + eps N(mu,1),
    mu in [0, inf], attained at mu_ratio; mse_max is the largest MSE of the rule
    itself over the same laws, attained at mu_mse.
    """
    tab = params.score_table
    if mu_max is None:
        mu_max = (tab.grid[-1] if tab is not None else 20.0) + 8.0
    a0, b0 = _shift_moments(params, 0.0)

    def scan(mu):
        out = [_shift_moments(params, mu[i:i + chunk]) for i in range(0, mu.size, chunk)]
        a = (1 - eps) * a0 + eps * np.concatenate([o[0] for o in out])
        b = (1 - eps) * b0 + eps * np.concatenate([o[1] for o in out])
        return a * a / b, 1 + b - 2 * a

    mu = np.arange(0.0, mu_max + step, step)
    J, mse = scan(mu)
    k = int(np.argmin(J))
    jmin, arg = float(J[k]), float(mu[k])
    k = int(np.argmax(mse))
    mse_max, arg_mse = float(mse[k]), float(mu[k])
    h = step
    for _ in range(3):
        loc = np.maximum(arg + np.linspace(-1, 1, 21) * h, 0.0)
        Jl, _ = scan(loc)
        j = int(np.argmin(Jl))
        if Jl[j] < jmin:
            jmin, arg = float(Jl[j]), float(loc[j])
        loc = np.maximum(arg_mse + np.linspace(-1, 1, 21) * h, 0.0)
        _, ml = scan(loc)
        j = int(np.argmax(ml))
        if ml[j] > mse_max:
            mse_max, arg_mse = float(ml[j]), float(loc[j])
        h /= 10
    # mu = inf: psi -> tail shift, psi' -> 0
    _, _, sl, ic = scalar_pieces(params)
    c = abs(ic[-1]) if sl[-1] == 1.0 else math.inf
    a_inf = (1 - eps) * a0[0]
    b_inf = (1 - eps) * b0[0] + eps * c * c
    if a_inf * a_inf / b_inf <= jmin:
        jmin, arg = a_inf * a_inf / b_inf, math.inf
    if 1 + b_inf - 2 * a_inf > mse_max:
        mse_max, arg_mse = 1 + b_inf - 2 * a_inf, math.inf
    return jmin, mse_max, arg, arg_mse


def score_table(fit: MinimaxPriorFit, periods=8, n_candidates=6):
    """Posterior-mean rule of the fitted prior, tabulated as psi = y - eta.

    Past the region holding the prior's mass the rule continues as y - c.  The
    table ends where psi crosses the shift c whose risk 1 + c^2 at infinity
    matches the level 1 - I_upper; among the first few such crossings the one
    with the smallest Huber upper bound is kept.
    """
    eps = fit.epsilon
    y, psi = _half_score(fit, periods)
    full = ShrinkParams("minimax_scalar", score_table=_table_from_half(y, psi, y.size - 1, eps))
    r0 = float(risk_scalar(full, 0.0))
    level = (1 - fit.I_upper - (1 - eps) * r0) / eps
    c = math.sqrt(max(level - 1.0, 0.0))
    d = psi - c
    start = fit.atoms[-1][0] + 0.5 * fit.tail[0]
    idx = np.nonzero((y[:-1] >= start) & (np.sign(d[:-1]) != np.sign(d[1:])))[0]
    if idx.size == 0:
        return full.score_table
    best = None
    for i in idx[:n_candidates]:
        # pick the node closer to the crossing
        cut = int(i if abs(d[i]) <= abs(d[i + 1]) else i + 1)
        tab = _table_from_half(y, psi, cut, eps)
        jmin = huber_bounds(ShrinkParams("minimax_scalar", score_table=tab), eps)[0]
        if best is None or jmin > best[0]:
            best = (jmin, tab)
    return best[1]


def mse_minimax_scalar(eps, K=2, max_width=5e-3, **fit_kw):
    """Minimax MSE over all scalar rules, bracketed by [1 - I_upper, 1 - I_lower].

    Returns (curve point, prior fit, score table).  Raises if the bracket is
    wider than ``max_width``.
    """
    fit = fit_prior(eps, K, **fit_kw)
    table = score_table(fit)
    params = ShrinkParams("minimax_scalar", score_table=table)
    fit.I_lower, mse_max, mu_ratio, mu_star = huber_bounds(params, eps)
    lo, upper = 1.0 - fit.I_upper, 1.0 - fit.I_lower
    width = upper - lo
    pt = MinimaxCurvePoint(eps, lo, params, mu_star,
                           {"I_upper": fit.I_upper, "I_lower": fit.I_lower,
                            "M_upper": upper, "bracket_width": width, "max_mse": mse_max,
                            "mu_ratio": mu_ratio})
    if width > max_width:
        raise ArithmeticError(f"Fisher bracket width {width:.2e} exceeds {max_width:.1e} at eps={eps}")
    return pt, fit, table
