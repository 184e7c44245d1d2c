"""Risk R(mu) = E|eta(mu + Z) - mu|^2 of the denoisers under unit Gaussian noise.

Scalar rules are piecewise linear, so their risk is a finite sum of truncated
Gaussian moments.  Block rules go through Stein's unbiased risk estimate
averaged over the noncentral chi-square law of the block norm.  Monotone and
TV risks at zero are Monte Carlo estimates with standard errors.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from . import _kernels
from .denoisers import ShrinkParams, apply, scalar_pieces


@dataclass(frozen=True)
class TwoPointPrior:
    epsilon: float
    mu: float
    symmetric: bool = True

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.mu >= 0:
            raise ValueError("mu must be >= 0")


# --- scalar rules -----------------------------------------------------------

def _trunc_moments(a, b):
    """E[1], E[u], E[u^2] of a standard normal u restricted to (a, b)."""
    flip = a > 0
    m0 = np.where(flip, special.ndtr(-a) - special.ndtr(-b), special.ndtr(b) - special.ndtr(a))
    pa = np.where(np.isfinite(a), np.exp(-0.5 * np.where(np.isfinite(a), a, 0.0) ** 2), 0.0)
    pb = np.where(np.isfinite(b), np.exp(-0.5 * np.where(np.isfinite(b), b, 0.0) ** 2), 0.0)
    pa = pa / math.sqrt(2 * math.pi)
    pb = pb / math.sqrt(2 * math.pi)
    apa = np.where(np.isfinite(a), np.where(np.isfinite(a), a, 0.0) * pa, 0.0)
    bpb = np.where(np.isfinite(b), np.where(np.isfinite(b), b, 0.0) * pb, 0.0)
    return m0, pa - pb, m0 + apa - bpb


def risk_at_infinity(params: ShrinkParams):
    lo, hi, slope, icpt = scalar_pieces(params)
    if slope[-1] != 1.0:
        return math.inf
    return 1.0 + icpt[-1] ** 2


def risk_scalar(params: ShrinkParams, mu, method="exact"):
    """Risk of a scalar rule at signal value(s) ``mu`` (``np.inf`` allowed).

    ``method="exact"`` sums closed-form pieces; ``"quad"`` integrates numerically.
    """
    if method == "quad":
        return risk_scalar_quad(params, mu)
    mu_arr = np.atleast_1d(np.asarray(mu, float))
    out = np.empty(mu_arr.shape)
    fin = np.isfinite(mu_arr)
    out[~fin] = risk_at_infinity(params)
    m = mu_arr[fin][:, None]
    if m.size:
        lo, hi, slope, icpt = scalar_pieces(params)
        m0, m1, m2 = _trunc_moments(lo[None, :] - m, hi[None, :] - m)
        c0 = icpt[None, :] + (slope[None, :] - 1.0) * m
        s = slope[None, :]
        out[fin] = np.sum(c0 * c0 * m0 + 2 * c0 * s * m1 + s * s * m2, axis=1)
    return out if np.ndim(mu) else float(out[0])


def risk_scalar_quad(params: ShrinkParams, mu, width=14.0):
    """Adaptive-quadrature risk, integrating between consecutive knots."""
    lo, hi, _, _ = scalar_pieces(params)
    knots = np.unique(np.concatenate([lo, hi]))
    knots = knots[np.isfinite(knots)]
    vals = []
    for m in np.atleast_1d(np.asarray(mu, float)):
        if not np.isfinite(m):
            vals.append(risk_at_infinity(params))
            continue
        f = lambda u: (float(apply(np.array([m + u]), params)[0]) - m) ** 2 * math.exp(-0.5 * u * u)
        inner = knots[(knots - m > -width) & (knots - m < width)] - m
        edges = np.concatenate([[-width], inner, [width]])
        tot = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b > a:
                r, _ = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
                tot += r
        vals.append(tot / math.sqrt(2 * math.pi))
    return np.array(vals) if np.ndim(mu) else vals[0]


def risk_two_point(params: ShrinkParams, prior: TwoPointPrior, method="exact"):
    """(1 - eps) R(0) + eps R(mu); the symmetric prior splits eps over +-mu."""
    e = prior.epsilon
    r0 = risk_scalar(params, 0.0, method)
    if prior.symmetric and np.isfinite(prior.mu):
        rm = 0.5 * (risk_scalar(params, prior.mu, method) + risk_scalar(params, -prior.mu, method))
    else:
        rm = risk_scalar(params, prior.mu, method)
    return (1 - e) * r0 + e * rm


def soft_risk_zero(tau):
    """Closed form 2(1 + tau^2) Phi(-tau) - 2 tau phi(tau)."""
    return 2 * (1 + tau * tau) * special.ndtr(-tau) - 2 * tau * stats.norm.pdf(tau)


# --- block rules --------------------------------------------------------------

def _chi2_upper_moment(k, t, p):
    """E[W^p ; W > t] for W ~ chi-square with k degrees of freedom."""
    a = 0.5 * k + p
    logc = p * math.log(2.0) + special.gammaln(a) - special.gammaln(0.5 * k)
    return np.exp(logc) * special.gammaincc(a, 0.5 * t)


def _chi2_lower_moment(k, t, p):
    a = 0.5 * k + p
    logc = p * math.log(2.0) + special.gammaln(a) - special.gammaln(0.5 * k)
    return np.exp(logc) * special.gammainc(a, 0.5 * t)


def poisson_window(xi, tail=1e-14):
    """Poisson(xi/2) indices carrying all but ``tail`` of the mass."""
    lam = 0.5 * xi
    if lam == 0:
        return np.array([0]), np.array([1.0])
    j0 = int(stats.poisson.ppf(tail, lam))
    j1 = int(stats.poisson.isf(tail, lam)) + 1
    j = np.arange(j0, j1 + 1)
    return j, stats.poisson.pmf(j, lam)


def _noncentral_mix(mu_norm, B, fn):
    j, w = poisson_window(mu_norm * mu_norm)
    k = B + 2 * j
    return float(np.sum(w * fn(k)))


def risk_block_soft_sure(mu_norm, tau, B):
    """Per-block risk of block soft thresholding at signal norm ``mu_norm``."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if not np.isfinite(mu_norm):
        return B + tau * tau
    t2 = tau * tau

    def one(k):
        lower = _chi2_lower_moment(k, t2, 1.0) - B * special.gammainc(0.5 * k, 0.5 * t2)
        upper = (B + t2) * special.gammaincc(0.5 * k, 0.5 * t2)
        if B > 1 and tau > 0:
            upper = upper - 2 * (B - 1) * tau * _chi2_upper_moment(k, t2, -0.5)
        return lower + upper

    return _noncentral_mix(mu_norm, B, one)


def risk_js_sure(mu_norm, B):
    """Per-block risk of positive-part James-Stein at signal norm ``mu_norm``."""
    if B <= 2:
        raise ValueError("James-Stein needs B > 2")
    if not np.isfinite(mu_norm):
        return float(B)
    c = B - 2.0

    def one(k):
        lower = _chi2_lower_moment(k, c, 1.0) - B * special.gammainc(0.5 * k, 0.5 * c)
        upper = B * special.gammaincc(0.5 * k, 0.5 * c) - c * c * _chi2_upper_moment(k, c, -1.0)
        return lower + upper

    return _noncentral_mix(mu_norm, B, one)


def risk_js_zero(B):
    """Per-block James-Stein risk at zero, D^-1 E(chi2_D - D)_+^2 with D = B - 2."""
    if B <= 2:
        raise ValueError("James-Stein needs B > 2")
    D = B - 2.0
    m2 = _chi2_upper_moment(D, D, 2.0)
    m1 = _chi2_upper_moment(D, D, 1.0)
    m0 = special.gammaincc(0.5 * D, 0.5 * D)
    return float((m2 - 2 * D * m1 + D * D * m0) / D)


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _mean_se(x):
    x = np.asarray(x, float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def risk_mc(params: ShrinkParams, mu_norm, n_mc=100_000, seed=0, B=None):
    """Monte Carlo risk (per block for block kinds) with its standard error."""
    B = B or params.block_size
    rng = _rng(seed, 1, B)
    Z = rng.standard_normal((n_mc, B))
    Z[:, 0] += mu_norm
    target = np.zeros(B)
    target[0] = mu_norm
    est = apply(Z.ravel(), params).reshape(n_mc, B)
    return _mean_se(np.sum((est - target) ** 2, axis=1))


# --- structured rules -----------------------------------------------------------

_CHUNK = 2_000_000


def _mc_rows(length, n_mc, seed, tag, fn):
    """Stream standard-normal rows of ``length`` through ``fn`` in memory-bounded chunks."""
    rng = _rng(seed, tag, length)
    rows = max(1, _CHUNK // length)
    vals = []
    left = n_mc
    while left > 0:
        m = min(rows, left)
        vals.append(fn(rng.standard_normal((m, length))))
        left -= m
    return _mean_se(np.concatenate(vals))


def risk_mono_zero(length, n_mc=100_000, seed=0):
    """MC estimate of r(l) = E|monotone projection of Z|^2 for Z in R^l."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if length == 1:
        return 1.0, 0.0
    return _mc_rows(length, n_mc, seed, 2, _kernels.pav_rows_sqnorm)


BOUNDARY_SIGNS = {"++": (1.0, 1.0), "+-": (1.0, -1.0)}


def risk_tv_zero(length, boundary, tau, n_mc=100_000, seed=0):
    """MC estimate of E|eta_s(Z; tau)|^2 for the boundary-tilted TV prox.

    ``boundary`` is ``"++"`` (both ends pushed down, a local extremum) or
    ``"+-"`` (a step in a staircase).  The same draws are reused for every tau
    and both boundary types, so tables are smooth in tau.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    s1, s2 = BOUNDARY_SIGNS[boundary.replace("−", "-")]
    return _mc_rows(length, n_mc, seed, 3, lambda Z: _kernels.tv_rows_sqerr(Z, float(tau), s1, s2, 0.0))


class MonoRiskTable:
    """Cache of r(l) estimates, filled on demand."""

    def __init__(self, n_mc=100_000, seed=0):
        self.n_mc = n_mc
        self.seed = seed
        self.entries = {}

    def get(self, length):
        if length not in self.entries:
            self.entries[length] = risk_mono_zero(length, self.n_mc, self.seed)
        return self.entries[length]

    def r(self, length):
        return self.get(length)[0]

    def rows(self):
        for l in sorted(self.entries):
            est, se = self.entries[l]
            yield dict(kind="monotone", B="", tau="", mu_or_len=l, boundary="",
                       estimate=est, std_error=se, n_mc=self.n_mc, seed=self.seed)


class TVRiskTable:
    """Cache of r_s(l; tau) estimates keyed by (length, boundary, tau)."""

    def __init__(self, n_mc=100_000, seed=0):
        self.n_mc = n_mc
        self.seed = seed
        self.entries = {}

    def get(self, length, boundary, tau):
        key = (int(length), boundary, round(float(tau), 12))
        if key not in self.entries:
            self.entries[key] = risk_tv_zero(length, boundary, tau, self.n_mc, self.seed)
        return self.entries[key]

    def r(self, length, boundary, tau):
        return self.get(length, boundary, tau)[0]

    def rows(self):
        for (l, s, tau) in sorted(self.entries):
            est, se = self.entries[(l, s, tau)]
            yield dict(kind="tv", B="", tau=tau, mu_or_len=l, boundary=s,
                       estimate=est, std_error=se, n_mc=self.n_mc, seed=self.seed)


def risk_at_infinity_mono(lengths, table: MonoRiskTable):
    """Limit risk of a monotone staircase with the given plateau lengths."""
    lengths = list(lengths)
    if any(l < 1 for l in lengths):
        raise ValueError("lengths must be >= 1")
    return float(sum(table.r(l) for l in lengths))


RISK_COLUMNS = ["kind", "B", "tau", "mu_or_len", "boundary", "estimate", "std_error", "n_mc", "seed"]


def write_risk_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RISK_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in r.items()})
