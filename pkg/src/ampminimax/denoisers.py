"""Shrinkage and projection denoisers, their divergences and implied penalties.

Every denoiser takes a noise scale ``sigma`` and acts as
``sigma * eta(y / sigma)``.  The cap rule is the one exception: its output box
[0, 1] is fixed by the signal class, so it ignores ``sigma``.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels

SCALAR_KINDS = ("soft", "softpos", "cap", "hard", "firm", "minimax_scalar")
BLOCK_KINDS = ("block_soft", "james_stein")
KINDS = SCALAR_KINDS + BLOCK_KINDS + ("monotone", "tv")

# divergence for these kinds is a heuristic (no weak derivative at the jump)
HEURISTIC_DIVERGENCE = frozenset({"hard"})


@dataclass(frozen=True)
class ScoreTable:
    """Tabulated odd score psi on a symmetric grid; the denoiser is y - psi(y)."""
    grid: np.ndarray
    score: np.ndarray
    tail_shift: float
    epsilon: float = float("nan")

    def __post_init__(self):
        g = np.asarray(self.grid, float)
        s = np.asarray(self.score, float)
        if g.size == 0:
            raise ValueError("empty score table")
        if g.shape != s.shape:
            raise ValueError("grid and score lengths differ")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "score", s)

    def eta_nodes(self):
        return self.grid - self.score

    def check(self, tol=1e-9):
        """Return a list of violated invariants (empty when the table is valid)."""
        bad = []
        g, s = self.grid, self.score
        if not np.allclose(g, -g[::-1], atol=tol):
            bad.append("grid not symmetric")
        elif not np.allclose(s, -s[::-1], atol=tol):
            bad.append("score not odd")
        if np.any(np.diff(self.eta_nodes()) < -tol):
            bad.append("denoiser decreasing on grid")
        return bad


@dataclass(frozen=True)
class ShrinkParams:
    kind: str
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    block_size: int = 1
    score_table: Optional[ScoreTable] = field(default=None, compare=False)

    def __post_init__(self):
        k = self.kind
        if k not in KINDS:
            raise ValueError(f"unknown denoiser kind {k!r}; choose from {', '.join(KINDS)}")
        if k in ("soft", "softpos", "hard", "firm", "block_soft", "tv"):
            if self.tau1 is None or not self.tau1 >= 0:
                raise ValueError(f"{k} needs a threshold tau1 >= 0")
        if k == "firm":
            if self.tau2 is None or not self.tau1 < self.tau2:
                raise ValueError("firm needs 0 <= tau1 < tau2")
        if k in BLOCK_KINDS and self.block_size < 1:
            raise ValueError("block size must be >= 1")
        if k == "james_stein" and self.block_size <= 2:
            raise ValueError("james_stein needs block size B > 2")
        if k == "minimax_scalar" and self.score_table is None:
            raise ValueError("minimax_scalar needs a score table")


@dataclass
class PenaltyTable:
    x_grid: np.ndarray
    J: np.ndarray
    denoiser_kind: str

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,J\n")
            for x, j in zip(self.x_grid, self.J):
                fh.write(f"{x:.12g},{j:.12g}\n")


# --- scalar rules ---------------------------------------------------------

def apply_soft(y, tau):
    y = np.asarray(y, float)
    return np.sign(y) * np.maximum(np.abs(y) - tau, 0.0)


def apply_softpos(y, tau):
    return np.maximum(np.asarray(y, float) - tau, 0.0)


def apply_cap(y):
    return np.clip(np.asarray(y, float), 0.0, 1.0)


def apply_hard(y, tau):
    y = np.asarray(y, float)
    return np.where(np.abs(y) > tau, y, 0.0)


def apply_firm(y, tau1, tau2):
    if not 0 <= tau1 < tau2:
        raise ValueError("firm needs 0 <= tau1 < tau2")
    y = np.asarray(y, float)
    a = np.abs(y)
    if np.isinf(tau2):
        ramp = a - tau1
    else:
        ramp = (a - tau1) * (tau2 / (tau2 - tau1))
    out = np.where(a <= tau1, 0.0, np.where(a < tau2, np.sign(y) * ramp, y))
    return out


def apply_minimax_scalar(y, table: ScoreTable):
    y = np.asarray(y, float)
    g = table.grid
    inside = (y >= g[0]) & (y <= g[-1])
    out = y - np.sign(y) * table.tail_shift
    out = np.where(inside, y - np.interp(y, g, table.score), out)
    return out


# --- block rules ----------------------------------------------------------

def _blocks(y, B):
    y = np.asarray(y, float)
    if y.size % B:
        raise ValueError(f"length {y.size} not divisible by block size {B}")
    return y.reshape(-1, B)


def apply_block_soft(y, tau, B):
    Y = _blocks(y, B)
    nrm = np.sqrt(np.sum(Y * Y, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(nrm > tau, 1.0 - tau / nrm, 0.0)
    return (Y * fac[:, None]).ravel()


def apply_james_stein(y, B, sigma=1.0):
    if B <= 2:
        raise ValueError("james_stein needs block size B > 2")
    Y = _blocks(y, B)
    sq = np.sum(Y * Y, axis=1)
    c = (B - 2) * sigma**2
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(sq > c, 1.0 - c / sq, 0.0)
    return (Y * fac[:, None]).ravel()


# --- structured rules -----------------------------------------------------

def apply_monotone(y):
    """Euclidean projection onto nondecreasing sequences (pool adjacent violators)."""
    return _kernels.pav(np.ascontiguousarray(y, dtype=float))


def apply_tv(y, tau):
    """argmin_x 0.5*|y - x|^2 + tau * sum_i |x_{i+1} - x_i|."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return _kernels.tv_prox(np.ascontiguousarray(y, dtype=float), float(tau))


def apply_tv_boundary(y, tau, s1, s2):
    """TV prox with an extra tau*(s1*x_1 + s2*x_N) term in the objective."""
    yb = np.array(y, dtype=float)
    yb[0] -= tau * s1
    yb[-1] -= tau * s2
    return apply_tv(yb, tau)


def tv_stationarity_residual(x, y, tau):
    """Worst violation of the subgradient conditions for the TV prox.

    Writes x - y = tau*(v_i - v_{i-1}) with v_0 = v_N = 0 and checks |v| <= 1 and
    v_i = sign(x_{i+1} - x_i) wherever the fit jumps.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if tau == 0:
        return float(np.max(np.abs(x - y), initial=0.0))
    c = np.cumsum(x - y)
    v = c[:-1] / tau
    res = abs(c[-1])
    if v.size:
        res = max(res, tau * max(0.0, np.max(np.abs(v)) - 1.0))
        d = np.diff(x)
        jump = d != 0
        if np.any(jump):
            res = max(res, tau * np.max(np.abs(v[jump] - np.sign(d[jump]))))
    return float(res)


# --- dispatch -------------------------------------------------------------

def apply(y, params: ShrinkParams, sigma=1.0):
    """Apply the denoiser described by ``params`` at noise scale ``sigma``."""
    k = params.kind
    y = np.asarray(y, float)
    if k == "cap":
        return apply_cap(y)
    if k == "monotone":
        return apply_monotone(y)
    if k == "james_stein":
        return apply_james_stein(y, params.block_size, sigma)
    t = params.tau1 * sigma if params.tau1 is not None else None
    if k == "soft":
        return apply_soft(y, t)
    if k == "softpos":
        return apply_softpos(y, t)
    if k == "hard":
        return apply_hard(y, t)
    if k == "firm":
        return apply_firm(y, t, params.tau2 * sigma)
    if k == "block_soft":
        return apply_block_soft(y, t, params.block_size)
    if k == "tv":
        return apply_tv(y, t)
    if k == "minimax_scalar":
        return sigma * apply_minimax_scalar(y / sigma, params.score_table)
    raise ValueError(k)


def divergence(y, params: ShrinkParams, sigma=1.0):
    """Divergence sum_i d eta_i / d y_i at y (not divided by n).

    Knots are measure zero; ties go to the lower piece.  For hard thresholding
    the count of survivors is returned although the map has no weak derivative.
    """
    k = params.kind
    y = np.asarray(y, float)
    if k == "soft":
        return float(np.count_nonzero(np.abs(y) > params.tau1 * sigma))
    if k == "hard":
        return float(np.count_nonzero(np.abs(y) > params.tau1 * sigma))
    if k == "softpos":
        return float(np.count_nonzero(y > params.tau1 * sigma))
    if k == "cap":
        return float(np.count_nonzero((y > 0) & (y < 1)))
    if k == "firm":
        t1, t2 = params.tau1 * sigma, params.tau2 * sigma
        a = np.abs(y)
        ramp = np.count_nonzero((a > t1) & (a <= t2))
        slope = 1.0 if np.isinf(t2) else t2 / (t2 - t1)
        return float(ramp * slope + np.count_nonzero(a > t2))
    if k == "minimax_scalar":
        tab = params.score_table
        u = y / sigma
        g, e = tab.grid, tab.eta_nodes()
        sl = np.diff(e) / np.diff(g)
        idx = np.searchsorted(g, u, side="left") - 1
        inside = (idx >= 0) & (idx < sl.size)
        d = np.where(inside, sl[np.clip(idx, 0, sl.size - 1)], 1.0)
        return float(np.sum(d))
    if k == "block_soft":
        B = params.block_size
        t = params.tau1 * sigma
        nrm = np.sqrt(np.sum(_blocks(y, B) ** 2, axis=1))
        on = nrm > t
        return float(np.sum(B - (B - 1) * t / nrm[on]))
    if k == "james_stein":
        B = params.block_size
        sq = np.sum(_blocks(y, B) ** 2, axis=1)
        c = (B - 2) * sigma**2
        on = sq > c
        return float(np.sum(B - (B - 2) * c / sq[on]))
    if k == "monotone":
        # pooled blocks of the fit = increase points + 1
        return float(_kernels.count_segments(apply_monotone(y)))
    if k == "tv":
        return float(_kernels.count_segments(apply(y, params, sigma)))
    raise ValueError(k)


def divergence_fd(y, params: ShrinkParams, sigma=1.0, h=1e-6, n_probe=8, seed=0):
    """Finite-difference divergence <e, (eta(y + h e) - eta(y)) / h>.

    Averages over ``n_probe`` random sign vectors, or sums over all coordinate
    directions when ``n_probe`` is None (exact for piecewise-linear maps).
    """
    y = np.asarray(y, float)
    base = apply(y, params, sigma)
    if n_probe is None:
        acc = 0.0
        for i in range(y.size):
            yp = y.copy()
            yp[i] += h
            acc += (apply(yp, params, sigma)[i] - base[i]) / h
        return acc
    rng = np.random.default_rng(seed)
    acc = 0.0
    for _ in range(n_probe):
        e = rng.choice([-1.0, 1.0], size=y.size)
        acc += np.dot(e, apply(y + h * e, params, sigma) - base) / h
    return acc / n_probe


# --- piecewise-linear representation of the scalar rules -------------------

def scalar_pieces(params: ShrinkParams):
    """Break a scalar rule (sigma = 1) into linear pieces eta = icpt + slope*y.

    Returns arrays (lo, hi, slope, icpt) covering the real line in order.
    """
    k = params.kind
    inf = np.inf
    if k == "soft":
        t = params.tau1
        rows = [(-inf, -t, 1.0, t), (-t, t, 0.0, 0.0), (t, inf, 1.0, -t)]
    elif k == "hard":
        t = params.tau1
        rows = [(-inf, -t, 1.0, 0.0), (-t, t, 0.0, 0.0), (t, inf, 1.0, 0.0)]
    elif k == "softpos":
        t = params.tau1
        rows = [(-inf, t, 0.0, 0.0), (t, inf, 1.0, -t)]
    elif k == "cap":
        rows = [(-inf, 0.0, 0.0, 0.0), (0.0, 1.0, 1.0, 0.0), (1.0, inf, 0.0, 1.0)]
    elif k == "firm":
        t1, t2 = params.tau1, params.tau2
        if np.isinf(t2):
            return scalar_pieces(ShrinkParams("soft", t1))
        s = t2 / (t2 - t1)
        rows = [(-inf, -t2, 1.0, 0.0), (-t2, -t1, s, s * t1), (-t1, t1, 0.0, 0.0),
                (t1, t2, s, -s * t1), (t2, inf, 1.0, 0.0)]
    elif k == "minimax_scalar":
        tab = params.score_table
        g, e = tab.grid, tab.eta_nodes()
        sl = np.diff(e) / np.diff(g)
        ic = e[:-1] - sl * g[:-1]
        c = tab.tail_shift
        lo = np.concatenate([[-inf], g[:-1], [g[-1]]])
        hi = np.concatenate([[g[0]], g[1:], [inf]])
        slope = np.concatenate([[1.0], sl, [1.0]])
        icpt = np.concatenate([[c], ic, [-c]])
        return lo, hi, slope, icpt
    else:
        raise ValueError(f"{k} is not a scalar rule")
    a = np.array(rows, float)
    return a[:, 0], a[:, 1], a[:, 2], a[:, 3]


# --- implied penalties ----------------------------------------------------

def _radial_map(params):
    B = params.block_size
    if params.kind == "block_soft":
        return lambda r: np.maximum(r - params.tau1, 0.0)
    return lambda r: np.where(r * r > B - 2, r - (B - 2) / np.maximum(r, 1e-300), 0.0)


def implied_penalty(params: ShrinkParams, x_grid, tol=1e-10) -> PenaltyTable:
    """Penalty J with eta = prox_J, via J(x) = int_0^x (y - eta(y)) at y = eta^{-1}(u).

    For block kinds x is the block norm.  The inverse is found by bisection; an
    x value outside the range of eta (hard thresholding's gap) is rejected.
    """
    k = params.kind
    if k in ("monotone", "tv"):
        raise ValueError(f"{k} is not a scalar or radial denoiser")
    x = np.asarray(x_grid, float)
    if x.ndim != 1 or x.size < 2 or x[0] != 0 or np.any(np.diff(x) <= 0):
        raise ValueError("x_grid must be increasing and start at 0")
    if k in BLOCK_KINDS:
        eta = _radial_map(params)
    else:
        eta = lambda v: apply(v, params)

    # bracket the largest preimage of each u: eta(lo) <= u < eta(hi)
    lo = np.zeros_like(x)
    hi = np.maximum(2 * x, 1.0)
    while True:
        low = eta(hi) <= x
        if not np.any(low):
            break
        if np.any(hi > 1e12):
            raise ValueError(f"{k}: x_grid exceeds the range of the denoiser")
        hi = np.where(low, 2 * hi, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        le = eta(mid) <= x
        lo = np.where(le, mid, lo)
        hi = np.where(le, hi, mid)
    y = 0.5 * (lo + hi)
    gap = np.abs(eta(y) - x)
    scale = np.maximum(1.0, np.abs(x))
    bad = gap > 1e-6 * scale
    bad[0] = False
    if np.any(bad):
        where = x[bad]
        raise ValueError(f"{k} is not invertible on its range: no preimage for x in "
                         f"[{where.min():.4g}, {where.max():.4g}]")
    resid = y - x
    J = np.concatenate([[0.0], np.cumsum(0.5 * (resid[1:] + resid[:-1]) * np.diff(x))])
    return PenaltyTable(x, J, k)
