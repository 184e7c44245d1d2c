"""Signal generators, Monte Carlo phase-transition grids and their logistic fits."""
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .amp import amp_run, hamming_criterion, make_problem, mse_criterion
from .denoisers import ShrinkParams
from .minimax import IntervalDistribution

SIGNAL_CLASSES = ("simple_sparse", "positive_sparse", "box", "block_sparse",
                  "monotone_lf", "tv_random", "tv_lf")


@dataclass
class SignalSpec:
    cls: str
    N: int
    epsilon: float
    amplitude: float = 1.0   # nonzero magnitude, or jump size for the piecewise-constant classes
    B: Optional[int] = None
    interval_dist: Optional[IntervalDistribution] = None

    def __post_init__(self):
        if self.cls not in SIGNAL_CLASSES:
            raise ValueError(f"unknown signal class {self.cls!r}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.cls == "block_sparse" and (not self.B or self.N % self.B):
            raise ValueError("block_sparse needs a block size dividing N")
        if self.cls in ("monotone_lf", "tv_lf") and self.interval_dist is None:
            raise ValueError(f"{self.cls} needs an interval distribution")


def _plateaus(lengths, N):
    """Cut a list of lengths so they tile exactly N positions."""
    out, tot = [], 0
    for l in lengths:
        if tot >= N:
            break
        l = min(l, N - tot)
        out.append(l)
        tot += l
    return out


def sample_signal(spec: SignalSpec, seed):
    rng = np.random.default_rng(seed)
    N, eps, a = spec.N, spec.epsilon, spec.amplitude
    c = spec.cls
    if c in ("simple_sparse", "positive_sparse"):
        on = rng.random(N) < eps
        sign = rng.choice([-1.0, 1.0], size=N) if c == "simple_sparse" else np.ones(N)
        return np.where(on, a * sign, 0.0)
    if c == "box":
        inner = rng.random(N) < eps
        ends = (rng.random(N) < 0.5).astype(float)
        return np.where(inner, rng.random(N), ends)
    if c == "block_sparse":
        nb = N // spec.B
        on = rng.random(nb) < eps
        d = rng.standard_normal((nb, spec.B))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return (a * d * on[:, None]).ravel()
    if c == "monotone_lf":
        draws = []
        while sum(l for l, _ in draws) < N:
            draws += spec.interval_dist.sample(rng, max(8, int(N * eps) + 8))
        lens = _plateaus([l for l, _ in draws], N)
        # first plateau sits at one jump above zero
        return np.repeat(a * np.arange(1, len(lens) + 1), lens)
    if c == "tv_random":
        u = rng.random(N)
        steps = np.where(u < eps / 2, a, np.where(u < eps, -a, 0.0))
        steps[0] = 0.0
        return np.cumsum(steps)
    if c == "tv_lf":
        draws = []
        while sum(l for l, _ in draws) < N:
            draws += spec.interval_dist.sample(rng, max(8, int(N * eps) + 8))
        lens = _plateaus([l for l, _ in draws], N)
        kinds = [s for _, s in draws[:len(lens)]]
        vals = np.empty(len(lens))
        level, direction = 0.0, 1.0
        for k in range(len(lens)):
            vals[k] = level
            # an extremal plateau reverses the direction of the next jump
            if kinds[k] == "++":
                direction = -direction if k > 0 else direction
            level += direction * a
        return np.repeat(vals, lens)
    raise ValueError(c)


def tuned(kind, eps, B=None, **kw):
    """Minimax tuning and predicted transition M for a denoiser family.

    Returns a MinimaxCurvePoint; its ``tau_star`` is the ShrinkParams to run AMP with.
    """
    from . import minimax as mm
    if kind == "soft":
        return mm.mse_soft(eps)
    if kind == "softpos":
        return mm.mse_softpos(eps)
    if kind == "hard":
        return mm.mse_hard(eps)
    if kind == "firm":
        return mm.mse_firm(eps)
    if kind == "cap":
        return mm.MinimaxCurvePoint(eps, mm.mse_cap(eps), ShrinkParams("cap"))
    if kind == "block_soft":
        return mm.mse_block_soft(eps, B)
    if kind == "james_stein":
        return mm.mse_james_stein(eps, B)
    if kind == "minimax_scalar":
        from .least_favorable import mse_minimax_scalar
        return mse_minimax_scalar(eps, **kw)[0]
    if kind == "monotone":
        return mm.mse_monotone(eps, **kw)[0]
    if kind == "tv":
        return mm.mse_tv_random(eps, **kw)
    raise ValueError(f"unknown denoiser kind {kind!r}")


# --- phase-transition grids ---------------------------------------------------

@dataclass
class PTGridResult:
    epsilon: float
    N: int
    rows: list                   # (delta, n_success, n_trials)
    kind: str = ""
    seed: int = 0

    def __post_init__(self):
        for d, s, n in self.rows:
            if not 0 <= s <= n:
                raise ValueError("need 0 <= n_success <= n_trials")

    def fractions(self):
        return np.array([s / n for _, s, n in self.rows])


def default_delta_grid(M, half_width=0.05, n=11):
    return np.linspace(M - half_width, M + half_width, n)


def trial_seeds(seed, i, j):
    """Independent (signal, matrix) seeds for trial j at grid point i."""
    ss = np.random.SeedSequence(seed, spawn_key=(i, j))
    a, b = ss.spawn(2)
    return a, b


def _criterion(name, gamma, alpha, beta):
    if callable(name):
        return name
    if name == "mse":
        return mse_criterion(gamma)
    if name == "mse_le":
        return mse_criterion(gamma, strict=False)
    if name == "hamming":
        return hamming_criterion(alpha, beta)
    raise ValueError(f"unknown success criterion {name!r}")


def _run_cell(job):
    (i, delta, trials, spec, params, seed, crit, T_max) = job
    criterion = _criterion(*crit)
    wins = 0
    for j in trials:
        s_sig, s_mat = trial_seeds(seed, i, j)
        x0 = sample_signal(spec, s_sig)
        prob = make_problem(x0, delta, s_mat)
        try:
            res = amp_run(prob, params, T_max, criterion)
            wins += res.success
        except (FloatingPointError, ValueError, np.linalg.LinAlgError):
            pass
    return i, wins


def run_pt_grid(epsilon, params: ShrinkParams, spec: SignalSpec, delta_grid, n_trials, seed=0,
                criterion="mse", gamma=0.01, alpha=0.01, beta=0.01, T_max=300, workers=1):
    """Success counts of AMP over a grid of undersampling levels.

    Each trial draws a fresh signal and a fresh matrix from seeds derived from
    (seed, grid index, trial index), so the grid is reproducible however it is
    split across workers.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    delta_grid = [float(d) for d in delta_grid]
    if any(not 0 < d <= 1 for d in delta_grid):
        raise ValueError("delta values must lie in (0, 1]")
    crit = (criterion, gamma, alpha, beta)
    jobs = []
    per = n_trials if workers <= 1 else max(1, math.ceil(n_trials / workers))
    for i, d in enumerate(delta_grid):
        for start in range(0, n_trials, per):
            jobs.append((i, d, range(start, min(n_trials, start + per)), spec, params, seed, crit, T_max))
    wins = [0] * len(delta_grid)
    if workers <= 1:
        outs = map(_run_cell, jobs)
    else:
        ex = ProcessPoolExecutor(workers)
        outs = ex.map(_run_cell, jobs)
    for i, w in outs:
        wins[i] += w
    if workers > 1:
        ex.shutdown()
    rows = [(d, wins[i], n_trials) for i, d in enumerate(delta_grid)]
    return PTGridResult(epsilon, spec.N, rows, params.kind, seed)


GRID_COLUMNS = ["kind", "epsilon", "N", "delta", "n_success", "n_trials", "seed"]


def write_grid_csv(path, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_COLUMNS)
        for r in results:
            for d, s, n in r.rows:
                w.writerow([r.kind, f"{r.epsilon:.10g}", r.N, f"{d:.10g}", s, n, r.seed])


def read_grid_csv(path):
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["kind"], float(row["epsilon"]), int(row["N"]), int(row["seed"]))
            groups.setdefault(key, []).append((float(row["delta"]), int(row["n_success"]), int(row["n_trials"])))
    return [PTGridResult(e, N, rows, k, s) for (k, e, N, s), rows in groups.items()]


# --- logistic fit -----------------------------------------------------------------

@dataclass
class LogisticFit:
    alpha_hat: float
    beta_hat: float
    offset: float
    ci_lo: float
    ci_hi: float
    delta_pred: float
    se: float = float("nan")
    separated: bool = False
    beta_se: float = float("nan")


def _separation(x, s, n):
    """Gap (lo, hi) if the outcomes are completely separated in x, else None."""
    if np.all(s == 0) or np.all(s == n):
        return (x.min(), x.max())
    if np.any((s > 0) & (s < n)):
        return None
    fail = x[s == 0]
    win = x[s == n]
    if fail.max() < win.min():
        return (fail.max(), win.min())
    return None


def fit_logistic(result: PTGridResult, delta_pred, level=0.5, max_iter=100, tol=1e-10):
    """Binomial logistic regression of success on delta - delta_pred by IRLS.

    The offset (logit(level) - alpha)/beta locates the empirical point where
    the success rate equals ``level`` (-alpha/beta at the default 50%),
    relative to the prediction.  Its 95% interval comes from the delta method.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    q = math.log(level / (1 - level))
    x = np.array([r[0] for r in result.rows], float) - delta_pred
    s = np.array([r[1] for r in result.rows], float)
    n = np.array([r[2] for r in result.rows], float)
    if np.unique(x).size < 3:
        raise ValueError("need at least 3 distinct delta values")
    gap = _separation(x, s, n)
    if gap is not None:
        mid = 0.5 * (gap[0] + gap[1])
        return LogisticFit(float("nan"), math.inf, float(mid), float(gap[0]), float(gap[1]),
                           delta_pred, separated=True)
    X = np.column_stack([np.ones_like(x), x])
    theta = np.zeros(2)
    for _ in range(max_iter):
        eta = X @ theta
        p = special.expit(eta)
        w = np.maximum(n * p * (1 - p), 1e-12)
        z = eta + (s - n * p) / w
        XtW = X.T * w
        new = np.linalg.solve(XtW @ X, XtW @ z)
        done = np.max(np.abs(new - theta)) < tol * (1 + np.max(np.abs(theta)))
        theta = new
        if done:
            break
    p = special.expit(X @ theta)
    info = (X.T * (n * p * (1 - p))) @ X
    cov = np.linalg.inv(info)
    a, b = theta
    off = (q - a) / b
    g = np.array([-1.0 / b, -(q - a) / b**2])
    se = float(math.sqrt(max(g @ cov @ g, 0.0)))
    return LogisticFit(float(a), float(b), float(off), off - 1.96 * se, off + 1.96 * se,
                       delta_pred, se, beta_se=float(math.sqrt(cov[1, 1])))


def fit_report(fits):
    """One row per (kind, eps) with per-N columns: Pred, off.N, ci.N.lo, ci.N.hi, se.N, beta.N."""
    out = {}
    for (kind, eps, N), f in fits.items():
        row = out.setdefault(f"{kind}:{eps:g}", {"kind": kind, "epsilon": eps, "Pred": f.delta_pred})
        row[f"off.{N}"] = f.offset
        row[f"ci.{N}.lo"] = f.ci_lo
        row[f"ci.{N}.hi"] = f.ci_hi
        row[f"se.{N}"] = f.se
        row[f"beta.{N}"] = f.beta_hat
        row[f"beta_se.{N}"] = f.beta_se
    return list(out.values())


def write_fit_json(path, fits):
    def clean(v):
        return v if not isinstance(v, float) or math.isfinite(v) else None
    rows = [{k: clean(v) for k, v in r.items()} for r in fit_report(fits)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- finite-N scaling -------------------------------------------------------------

DEFAULT_GAMMAS = (1 / 3, 1 / 2, 2 / 3, 3 / 4, 1.0)


def _power_fit(records, gammas, sign):
    """Weighted fit of value ~ c_g * N^(sign*gamma) per group, pooled R^2 per gamma."""
    groups = {}
    for g, N, val, se in records:
        groups.setdefault(g, []).append((float(N), float(val), float(se)))
    if not groups:
        raise ValueError("no records")
    for g, rows in groups.items():
        if len({r[0] for r in rows}) < 2:
            raise ValueError(f"group {g!r} has fewer than 2 distinct N")
    report = {}
    for gam in gammas:
        ss_res = ss_tot = 0.0
        coefs = {}
        for g, rows in groups.items():
            N, y, se = (np.array(c) for c in zip(*rows))
            w = 1.0 / np.where(se > 0, se, 1.0) ** 2
            x = N ** (sign * gam)
            c = np.sum(w * x * y) / np.sum(w * x * x)
            ss_res += np.sum(w * (y - c * x) ** 2)
            ss_tot += np.sum(w * y * y)
            coefs[g] = float(c)
        report[gam] = {"R2": float(1 - ss_res / ss_tot), "coef": coefs}
    return report


def fit_offset_scaling(records, gammas=DEFAULT_GAMMAS):
    """records: iterable of (group, N, offset, se); model offset = c * N^-gamma."""
    return _power_fit(list(records), gammas, -1.0)


def fit_slope_scaling(records, gammas=DEFAULT_GAMMAS):
    """records: iterable of (group, N, beta, se); model beta = c * N^gamma."""
    return _power_fit(list(records), gammas, 1.0)
