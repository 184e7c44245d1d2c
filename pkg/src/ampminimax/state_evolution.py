"""State evolution m_{t+1} = Psi(m_t) for AMP with a scale-covariant denoiser.

Here m is the per-coordinate MSE of the current estimate, and the effective
noise seen by the denoiser has variance m / delta.  For a two-point prior with
amplitude mu,

    Psi(m) = (m / delta) * R(mu * sqrt(delta / m)),

where R is the per-coordinate mixture risk at unit noise.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .denoisers import ShrinkParams
from .risk import (TwoPointPrior, risk_at_infinity, risk_block_soft_sure, risk_js_sure,
                   risk_scalar)


@dataclass
class SEConfig:
    delta: float
    params: ShrinkParams
    prior: TwoPointPrior
    m0: Optional[float] = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.m0 is None:
            self.m0 = self.prior.epsilon * self.prior.mu ** 2
        if self.m0 < 0:
            raise ValueError("m0 must be >= 0")


@dataclass
class SETrace:
    states: list
    converged: bool
    hfp: float = float("nan")


class MixtureRisk:
    """Per-coordinate risk (1 - eps) R(0) + eps R(nu) at unit noise, vectorized in nu.

    For block kinds nu is the block norm and risks are divided by B.  Block
    risks are tabulated once on a grid and interpolated.
    """

    def __init__(self, params: ShrinkParams, epsilon, nu_max=1e4):
        self.params = params
        self.eps = epsilon
        k = params.kind
        if k in ("block_soft", "james_stein"):
            B = params.block_size
            if k == "block_soft":
                one = lambda v: risk_block_soft_sure(v, params.tau1, B) / B
            else:
                one = lambda v: risk_js_sure(v, B) / B
            self._nu = np.concatenate([np.arange(0.0, 30.0, 0.02), np.geomspace(30.0, nu_max, 300)])
            self._r = np.array([one(v) for v in self._nu])
            self.r_inf = one(np.inf)
            self.r0 = self._r[0]
            self._single = None
        else:
            self._single = lambda v: risk_scalar(params, v)
            self.r0 = float(risk_scalar(params, 0.0))
            self.r_inf = float(risk_at_infinity(params))

    def single(self, nu):
        nu = np.asarray(nu, float)
        if self._single is not None:
            return np.asarray(self._single(nu), float)
        out = np.interp(nu, self._nu, self._r)
        return np.where(nu > self._nu[-1], self.r_inf, out)

    def __call__(self, nu):
        return (1 - self.eps) * self.r0 + self.eps * self.single(nu)


def psi(m, config: SEConfig, mix: Optional[MixtureRisk] = None):
    """State evolution map at m (scalar or array)."""
    mix = mix or MixtureRisk(config.params, config.prior.epsilon)
    m = np.asarray(m, float)
    if np.any(m < 0):
        raise ValueError("m must be >= 0")
    d = config.delta
    mu = config.prior.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(m > 0, mu * np.sqrt(d / np.where(m > 0, m, 1.0)), np.inf)
    if np.isinf(mu):
        nu = np.full_like(m, np.inf)
    out = np.where(m > 0, (m / d) * mix(nu), 0.0)
    return out if out.ndim else float(out)


def iterate(config: SEConfig, T=100, tol=1e-12, mix=None):
    mix = mix or MixtureRisk(config.params, config.prior.epsilon)
    m = config.m0
    states = [m]
    for _ in range(T):
        m = float(psi(m, config, mix))
        states.append(m)
        if m < tol:
            return SETrace(states, True)
    return SETrace(states, False)


def hfp_of(fn: Callable, m_max, n_scan=400, rtol=1e-10):
    """Highest fixed point sup{m <= m_max : fn(m) >= m} by log scan plus bisection."""
    grid = np.geomspace(1e-12 * m_max, m_max, n_scan)
    g = np.asarray(fn(grid), float) - grid
    ok = np.nonzero(g >= 0)[0]
    if ok.size == 0:
        return 0.0
    i = int(ok[-1])
    if i == grid.size - 1:
        warnings.warn("Psi(m) >= m at the top of the scan range; HFP may exceed m_max",
                      RuntimeWarning, stacklevel=2)
        return float(m_max)
    lo, hi = grid[i], grid[i + 1]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if float(fn(np.array([mid]))[0]) - mid >= 0:
            lo = mid
        else:
            hi = mid
    return float(lo)


def hfp(config: SEConfig, m_max=None, mix=None):
    mix = mix or MixtureRisk(config.params, config.prior.epsilon)
    if np.isinf(config.prior.mu):
        # Psi is linear: slope R(inf)/delta
        return math.inf if mix(np.inf) >= config.delta else 0.0
    if m_max is None:
        m_max = 10.0 * config.m0
    if m_max <= 0:
        return 0.0
    return hfp_of(lambda m: psi(m, config, mix), m_max)


def _hfp_positive(mix: MixtureRisk, delta, eps, mu_grid):
    # a fixed point at the top of the scan range is still a nonzero fixed point
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for mu in mu_grid:
            cfg = SEConfig(delta, mix.params, TwoPointPrior(eps, mu))
            if hfp(cfg, mix=mix) > 0:
                return True
    return False


def delta_se(epsilon, params: ShrinkParams, tol=1e-6, mu_grid=None):
    """Smallest delta at which state evolution converges to 0 for every two-point prior.

    Bisection on delta; each step takes the sup of the highest fixed point over
    a grid of amplitudes plus mu = inf.
    """
    mix = MixtureRisk(params, epsilon)
    if mu_grid is None:
        mu_grid = np.concatenate([np.linspace(0.1, 20.0, 200), [np.inf]])
    lo, hi = 1e-6, 1.0
    if _hfp_positive(mix, hi, epsilon, mu_grid):
        return 1.0
    if not _hfp_positive(mix, lo, epsilon, mu_grid):
        raise ArithmeticError("no undersampling level with a nonzero fixed point")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _hfp_positive(mix, mid, epsilon, mu_grid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def check_starshaped(target, m_grid, tol=1e-10):
    """Check that Psi(m)/m is nonincreasing on m_grid.

    ``target`` is an SEConfig or a callable m -> Psi(m).  Returns a dict with
    ``passed`` and a list of violating grid intervals.
    """
    fn = target if callable(target) else (lambda m: psi(m, target))
    m = np.asarray(m_grid, float)
    if np.any(m <= 0) or np.any(np.diff(m) <= 0):
        raise ValueError("m_grid must be positive and increasing")
    ratio = np.asarray(fn(m), float) / m
    jump = np.diff(ratio)
    bad = np.nonzero(jump > tol * np.maximum(1.0, np.abs(ratio[:-1])))[0]
    return {"passed": bad.size == 0,
            "violations": [(float(m[i]), float(m[i + 1]), float(jump[i])) for i in bad]}


def check_superquadratic(risk: Callable, mu_star, n=200, tol=1e-12):
    """Check R(mu) >= (mu/mu_star)^2 R(mu_star) on an n-node grid of [0, mu_star).

    ``risk`` maps an array of amplitudes to mixture risks.  The report includes
    the certificate m_fp = (mu/mu_star)^2 for each grid node.
    """
    if not (mu_star > 0 and np.isfinite(mu_star)):
        raise ValueError("mu_star must be positive and finite")
    mu = np.linspace(0.0, mu_star, n, endpoint=False)
    r = np.asarray(risk(mu), float)
    r_star = float(np.asarray(risk(np.array([mu_star])), float)[0])
    bound = (mu / mu_star) ** 2 * r_star
    margin = r - bound
    bad = np.nonzero(margin < -tol)[0]
    return {"passed": bad.size == 0,
            "min_margin": float(margin.min()),
            "mu_star": float(mu_star),
            "R_star": r_star,
            "violations": [float(mu[i]) for i in bad],
            "m_fp": ((mu / mu_star) ** 2).tolist()}


def superquadratic_report(params: ShrinkParams, epsilon, mu_star, n=200):
    mix = MixtureRisk(params, epsilon)
    return check_superquadratic(mix, mu_star, n)


def write_trace_csv(path, trace: SETrace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,m_t\n")
        for t, m in enumerate(trace.states):
            fh.write(f"{t},{m:.12g}\n")
