"""Minimax MSE curves M(eps) for each denoiser family.

The value for a family is inf over tuning of sup over signal laws of the
per-coordinate MSE in the direct observation model y = x + z.
"""
import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, special, stats

from .denoisers import ShrinkParams
from .risk import (MonoRiskTable, TVRiskTable, _chi2_upper_moment, _trunc_moments,
                   risk_js_zero)


@dataclass
class MinimaxCurvePoint:
    epsilon: float
    M: float
    tau_star: Optional[ShrinkParams]
    mu_star: float = math.inf
    extras: dict = field(default_factory=dict)


@dataclass
class IntervalDistribution:
    """Weights over plateau lengths, optionally typed by boundary signs."""
    entries: list  # (length, boundary, weight)

    def __post_init__(self):
        w = sum(e[2] for e in self.entries)
        if self.entries and abs(w - 1) > 1e-9:
            raise ValueError(f"interval weights sum to {w}, not 1")
        if any(e[0] < 1 or e[2] < 0 for e in self.entries):
            raise ValueError("lengths must be >= 1 and weights >= 0")

    def mean_length(self):
        return sum(l * w for l, _, w in self.entries)

    def sample(self, rng, size):
        p = np.array([e[2] for e in self.entries])
        idx = rng.choice(len(self.entries), size=size, p=p / p.sum())
        return [(self.entries[i][0], self.entries[i][1]) for i in idx]


def _check_eps(eps):
    if not 0 < eps < 1:
        raise ValueError("epsilon must lie strictly between 0 and 1")


def _bisect_tau(eps_of_tau, eps, hi=60.0):
    # eps_of_tau is decreasing from 1 at tau = 0
    return optimize.brentq(lambda t: eps_of_tau(t) - eps, 0.0, hi, xtol=1e-14, rtol=1e-15)


# --- closed forms -----------------------------------------------------------------

def _soft_eps(t):
    phi, tail = stats.norm.pdf(t), special.ndtr(-t)
    num = 2 * phi - 2 * t * tail
    return num / (t + num)


def mse_soft(eps):
    _check_eps(eps)
    t = _bisect_tau(_soft_eps, eps)
    phi, tail = stats.norm.pdf(t), special.ndtr(-t)
    M = 2 * phi / (t + 2 * phi - 2 * t * tail)
    return MinimaxCurvePoint(eps, float(M), ShrinkParams("soft", t), math.inf)


def _softpos_eps(t):
    phi, tail = stats.norm.pdf(t), special.ndtr(-t)
    num = phi - t * tail
    return num / (t + num)


def mse_softpos(eps):
    _check_eps(eps)
    t = _bisect_tau(_softpos_eps, eps)
    phi, tail = stats.norm.pdf(t), special.ndtr(-t)
    M = phi / (t + phi - t * tail)
    return MinimaxCurvePoint(eps, float(M), ShrinkParams("softpos", t), math.inf)


def mse_cap(eps):
    if not 0 <= eps <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    return (1 + eps) / 2


def mse_pos(eps):
    if not 0 <= eps <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    return (1 + eps) / 2


# --- saddle search for firm and hard ------------------------------------------------

def _firm_pieces(t1, t2):
    """Piece arrays (C, 5) for a batch of firm rules; t2 = t1 gives hard thresholding."""
    t1 = np.asarray(t1, float)
    t2 = np.asarray(t2, float)
    inf = np.full_like(t1, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(t2 > t1, t2 / (t2 - t1), 0.0)
        s = np.where(np.isinf(t2), 1.0, s)
    z = np.zeros_like(t1)
    one = np.ones_like(t1)
    lo = np.stack([-inf, -t2, -t1, t1, t2], -1)
    hi = np.stack([-t2, -t1, t1, t2, inf], -1)
    slope = np.stack([one, s, z, s, one], -1)
    icpt = np.stack([z, s * t1, z, -s * t1, z], -1)
    # soft limit: the outer pieces carry the shift
    soft = np.isinf(t2)
    icpt[soft, 0] = t1[soft]
    icpt[soft, 4] = -t1[soft]
    return lo, hi, slope, icpt


def _risk_batch(pieces, mu):
    """Risk for C rules at their own mu rows: pieces (C, P), mu (C, M) -> (C, M)."""
    lo, hi, slope, icpt = (p[:, None, :] for p in pieces)
    m = mu[:, :, None]
    m0, m1, m2 = _trunc_moments(lo - m, hi - m)
    c0 = icpt + (slope - 1.0) * m
    return np.sum(c0 * c0 * m0 + 2 * c0 * slope * m1 + slope * slope * m2, axis=-1)


def _sup_risk(pieces, mu_hi, n_grid=200, rounds=3):
    """Sup over mu in [0, inf] of the risk, per rule; returns (sup, argmax)."""
    C = pieces[0].shape[0]
    grid = np.linspace(0.0, 1.0, n_grid + 1)[None, :] * mu_hi[:, None]
    R = _risk_batch(pieces, grid)
    k = np.argmax(R, axis=1)
    best = R[np.arange(C), k]
    arg = grid[np.arange(C), k]
    h = mu_hi / n_grid
    for _ in range(rounds):
        loc = arg[:, None] + np.linspace(-1.0, 1.0, 21)[None, :] * h[:, None]
        loc = np.maximum(loc, 0.0)
        R = _risk_batch(pieces, loc)
        k = np.argmax(R, axis=1)
        cand = R[np.arange(C), k]
        up = cand > best
        best = np.where(up, cand, best)
        arg = np.where(up, loc[np.arange(C), k], arg)
        h = h / 10
    # the risk at infinity is 1 + (tail shift)^2
    r_inf = 1.0 + pieces[3][:, -1] ** 2
    at_inf = r_inf >= best
    return np.where(at_inf, r_inf, best), np.where(at_inf, np.inf, arg)


def _saddle_objective(eps, t1, t2):
    p = _firm_pieces(t1, t2)
    zero = np.zeros((p[0].shape[0], 1))
    r0 = _risk_batch(p, zero)[:, 0]
    mu_hi = np.maximum(20.0, np.where(np.isfinite(t2), t2, t1) + 8.0)
    sup, arg = _sup_risk(p, mu_hi)
    return (1 - eps) * r0 + eps * sup, arg


def mse_hard(eps, tau_max=6.0):
    _check_eps(eps)
    t = np.linspace(0.0, tau_max, 601)
    h = t[1] - t[0]
    for rnd in range(4):
        F, arg = _saddle_objective(eps, t, t)
        i = int(np.argmin(F))
        best_t = t[i]
        t = np.clip(best_t + np.linspace(-1, 1, 21) * h, 0.0, None)
        h /= 10
    F, arg = _saddle_objective(eps, np.array([best_t]), np.array([best_t]))
    return MinimaxCurvePoint(eps, float(min(F[0], 1.0)), ShrinkParams("hard", float(best_t)), float(arg[0]))


def mse_firm(eps, t1_max=4.0, d_range=(0.02, 30.0), tol=1e-4):
    """Firm minimax via nested grid search with three rounds of 10x refinement.

    The upper threshold is searched as t1 + d with d on a log grid; the soft
    limit (t2 = inf) is always a candidate.
    """
    _check_eps(eps)
    t1 = np.linspace(0.0, t1_max, 41)
    ld = np.linspace(np.log(d_range[0]), np.log(d_range[1]), 41)
    h1, hd = t1[1] - t1[0], ld[1] - ld[0]
    T1, LD = np.meshgrid(t1, ld, indexing="ij")
    T1, LD = T1.ravel(), LD.ravel()
    F, _ = _saddle_objective(eps, T1, T1 + np.exp(LD))
    i = int(np.argmin(F))
    b1, bd, bF = T1[i], LD[i], F[i]
    history = [bF]
    for _ in range(3):
        g1 = np.clip(b1 + np.linspace(-1, 1, 21) * h1, 0.0, None)
        gd = bd + np.linspace(-1, 1, 21) * hd
        T1, LD = np.meshgrid(g1, gd, indexing="ij")
        T1, LD = T1.ravel(), LD.ravel()
        F, _ = _saddle_objective(eps, T1, T1 + np.exp(LD))
        i = int(np.argmin(F))
        if F[i] < bF:
            b1, bd, bF = T1[i], LD[i], F[i]
        history.append(bF)
        h1 /= 10
        hd /= 10
    t2 = b1 + math.exp(bd)
    # soft limit candidate
    soft = mse_soft(eps)
    extras = {"refinement_gain": history[-2] - history[-1]}
    if soft.M < bF:
        return MinimaxCurvePoint(eps, soft.M, ShrinkParams("firm", soft.tau_star.tau1, math.inf), math.inf, extras)
    _, arg = _saddle_objective(eps, np.array([b1]), np.array([t2]))
    if extras["refinement_gain"] > tol:
        extras["unconverged"] = True
    return MinimaxCurvePoint(eps, float(bF), ShrinkParams("firm", float(b1), float(t2)), float(arg[0]), extras)


# --- block rules --------------------------------------------------------------------

def _block_moments(t, B):
    """E[(sqrt X - t); X >= t^2] and E[(sqrt X - t)^2; X >= t^2] for X ~ chi2_B."""
    t2 = t * t
    q = special.gammaincc(0.5 * B, 0.5 * t2)
    s1 = _chi2_upper_moment(B, t2, 0.5)
    s2 = _chi2_upper_moment(B, t2, 1.0)
    e1 = s1 - t * q
    e2 = s2 - 2 * t * s1 + t2 * q
    return e1, e2


def mse_block_soft(eps, B):
    """Per-coordinate minimax MSE of block soft thresholding with block size B."""
    _check_eps(eps)
    if B < 1:
        raise ValueError("B must be >= 1")

    def eps_of(t):
        e1, _ = _block_moments(t, B)
        return e1 / (e1 + t)

    t = _bisect_tau(eps_of, eps, hi=math.sqrt(B) + 60.0)
    e1, e2 = _block_moments(t, B)
    h = t / e1
    g = t * e2 / e1
    M = (B + t * t + g) / (B * (1 + h))
    return MinimaxCurvePoint(eps, float(M), ShrinkParams("block_soft", t, block_size=B), math.inf)


def mse_james_stein(eps, B):
    if not 0 <= eps <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    if B <= 2:
        raise ValueError("James-Stein needs B > 2")
    M = (1 - eps) * risk_js_zero(B) / B + eps
    return MinimaxCurvePoint(eps, float(M), ShrinkParams("james_stein", block_size=B), math.inf)


# --- concave envelopes for monotone and TV --------------------------------------------

def upper_concave_envelope(x, y):
    """Indices of the vertices of the least concave majorant of points (x, y)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    order = np.argsort(x, kind="stable")
    hull = []
    for i in order:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or below the chord a -> i
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


def envelope_at(x, y, x0):
    """Envelope value at x0 with the two bracketing vertices and their weights."""
    v = upper_concave_envelope(x, y)
    xv, yv = np.asarray(x, float)[v], np.asarray(y, float)[v]
    if x0 < xv[0] - 1e-12 or x0 > xv[-1] + 1e-12:
        raise ValueError(f"abscissa {x0} outside table range [{xv[0]}, {xv[-1]}]")
    j = int(np.searchsorted(xv, x0, side="left"))
    if j < len(xv) and abs(xv[j] - x0) < 1e-12:
        return float(yv[j]), [(int(v[j]), 1.0)]
    a, b = j - 1, j
    wb = (x0 - xv[a]) / (xv[b] - xv[a])
    val = (1 - wb) * yv[a] + wb * yv[b]
    return float(val), [(int(v[a]), 1 - wb), (int(v[b]), wb)]


def table_lengths(max_len):
    """Lengths 1..64 plus powers of two up to max_len (and max_len itself)."""
    ls = list(range(1, min(64, max_len) + 1))
    p = 128
    while p < max_len:
        ls.append(p)
        p *= 2
    if max_len > 64:
        ls.append(max_len)
    return ls


def mse_monotone(eps, max_len=1024, table: Optional[MonoRiskTable] = None):
    """Minimax MSE over monotone signals via the concave envelope of l -> r(l)."""
    _check_eps(eps)
    if 1 / eps > max_len:
        raise ValueError("1/epsilon beyond table range")
    table = table or MonoRiskTable()
    ls = table_lengths(max_len)
    r = np.array([table.r(l) for l in ls])
    val, verts = envelope_at(ls, r, 1 / eps)
    dist = IntervalDistribution([(ls[i], "none", w) for i, w in verts if w > 0])
    pt = MinimaxCurvePoint(eps, eps * val, ShrinkParams("monotone"), math.inf,
                           {"interval_dist": dist})
    return pt, dist


def _tv_inner(eps, tau, ls, table: TVRiskTable):
    xs, ys, tags = [], [], []
    for l in ls:
        for s in ("++", "+-"):
            xs.append(l)
            ys.append(table.r(l, s, tau))
            tags.append((l, s))
    val, verts = envelope_at(xs, ys, 1 / eps)
    return eps * val, [(tags[i][0], tags[i][1], w) for i, w in verts if w > 0]


def mse_tv(eps, max_len=100, tau_grid=None, table: Optional[TVRiskTable] = None, refine=True):
    """inf over tau of eps * (concave envelope of {(l, r_s(l; tau))}) at 1/eps."""
    _check_eps(eps)
    if 1 / eps > max_len:
        raise ValueError("1/epsilon beyond table range")
    table = table or TVRiskTable()
    tau_grid = np.asarray(tau_grid if tau_grid is not None else np.linspace(0.0, 3.0, 16), float)
    ls = table_lengths(max_len)
    vals = [_tv_inner(eps, t, ls, table)[0] for t in tau_grid]
    i = int(np.argmin(vals))
    best_t, best_v = tau_grid[i], vals[i]
    if refine and 0 < i < len(tau_grid) - 1:
        res = optimize.minimize_scalar(lambda t: _tv_inner(eps, t, ls, table)[0],
                                       bounds=(tau_grid[i - 1], tau_grid[i + 1]),
                                       method="bounded", options={"xatol": 1e-3})
        if res.fun < best_v:
            best_t, best_v = float(res.x), float(res.fun)
    _, verts = _tv_inner(eps, best_t, ls, table)
    dist = IntervalDistribution(verts)
    extras = {"interval_dist": dist, "max_len": max_len,
              "tau_at_grid_edge": i in (0, len(tau_grid) - 1)}
    return MinimaxCurvePoint(eps, float(best_v), ShrinkParams("tv", float(best_t)), math.inf, extras), dist


def _geometric_lengths(eps, tail=1e-9):
    lmax = max(1, math.ceil(math.log(tail) / math.log1p(-eps))) if eps < 1 else 1
    l = np.arange(1, lmax + 1)
    return l, eps * (1 - eps) ** (l - 1)


def _tv_random_value(eps, tau, table: TVRiskTable):
    l, w = _geometric_lengths(eps)
    ls = table_lengths(int(l[-1]))
    r = np.array([table.r(x, "++", tau) for x in ls])
    return eps * float(np.sum(w * np.interp(l, ls, r)))


def mse_tv_random(eps, tau_grid=None, table: Optional[TVRiskTable] = None, refine=True):
    """Minimax MSE when plateaus have geometric(eps) lengths and alternate up/down."""
    _check_eps(eps)
    table = table or TVRiskTable()
    tau_grid = np.asarray(tau_grid if tau_grid is not None else np.linspace(0.0, 3.0, 16), float)
    vals = [_tv_random_value(eps, t, table) for t in tau_grid]
    i = int(np.argmin(vals))
    best_t, best_v = tau_grid[i], vals[i]
    if refine and 0 < i < len(tau_grid) - 1:
        res = optimize.minimize_scalar(lambda t: _tv_random_value(eps, t, table),
                                       bounds=(tau_grid[i - 1], tau_grid[i + 1]),
                                       method="bounded", options={"xatol": 1e-3})
        if res.fun < best_v:
            best_t, best_v = float(res.x), float(res.fun)
    return MinimaxCurvePoint(eps, float(best_v), ShrinkParams("tv", float(best_t)), math.inf,
                             {"tau_at_grid_edge": i in (0, len(tau_grid) - 1)})


# --- output -------------------------------------------------------------------------

CURVE_COLUMNS = ["denoiser", "epsilon", "M", "tau1", "tau2", "mu_star", "B", "I_upper", "I_lower"]


def curve_row(denoiser, pt: MinimaxCurvePoint):
    p = pt.tau_star
    fmt = lambda v: "" if v is None else f"{v:.10g}"
    return {
        "denoiser": denoiser,
        "epsilon": f"{pt.epsilon:.10g}",
        "M": f"{pt.M:.10g}",
        "tau1": fmt(p.tau1) if p else "",
        "tau2": fmt(p.tau2) if p else "",
        "mu_star": fmt(pt.mu_star),
        "B": p.block_size if p and p.kind in ("block_soft", "james_stein") else "",
        "I_upper": fmt(pt.extras.get("I_upper")),
        "I_lower": fmt(pt.extras.get("I_lower")),
    }


def write_curve_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        w.writerows(rows)
