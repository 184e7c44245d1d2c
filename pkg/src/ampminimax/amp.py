"""Approximate message passing for noiseless compressed sensing y = A x0."""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .denoisers import ShrinkParams, apply, divergence

# Phi^{-1}(3/4)
_Q75 = 0.6744897501960817


@dataclass
class SensingProblem:
    A: np.ndarray
    y: np.ndarray
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        n, N = self.A.shape
        if self.y.shape != (n,):
            raise ValueError(f"y has shape {self.y.shape}, expected ({n},)")
        if self.x0 is not None and self.x0.shape != (N,):
            raise ValueError(f"x0 has shape {self.x0.shape}, expected ({N},)")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def N(self):
        return self.A.shape[1]

    @property
    def delta(self):
        return self.n / self.N


@dataclass
class AmpState:
    x: np.ndarray
    z: np.ndarray
    sigma_hat: float
    onsager: float
    t: int


@dataclass
class AmpResult:
    state: AmpState
    mse: list
    success: bool
    iterations: int
    diagnostic: str = ""


def gaussian_matrix(n, N, seed):
    """n x N matrix with iid N(0, 1/n) entries; columns have unit expected norm."""
    if not 0 < n <= N:
        raise ValueError("need 0 < n <= N")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, N)) / math.sqrt(n)


def make_problem(x0, delta, seed):
    x0 = np.asarray(x0, float)
    N = x0.size
    n = max(1, int(round(delta * N)))
    A = gaussian_matrix(n, N, seed)
    return SensingProblem(A, A @ x0, x0)


def estimate_sigma(z):
    """Robust noise scale median(|z|) / Phi^{-1}(0.75)."""
    z = np.asarray(z, float)
    if z.size == 0:
        raise ValueError("empty residual")
    return float(np.median(np.abs(z)) / _Q75)


def amp_init(problem: SensingProblem):
    N = problem.N
    return AmpState(np.zeros(N), problem.y.copy(), estimate_sigma(problem.y), 0.0, 0)


def amp_step(problem: SensingProblem, state: AmpState, params: ShrinkParams, onsager=True):
    A = problem.A
    pseudo = state.x + A.T @ state.z
    sigma = estimate_sigma(state.z)
    if sigma == 0:
        return AmpState(state.x, state.z, 0.0, state.onsager, state.t + 1)
    x = apply(pseudo, params, sigma)
    b = divergence(pseudo, params, sigma) / problem.n if onsager else 0.0
    z = problem.y - A @ x + b * state.z
    return AmpState(x, z, sigma, b, state.t + 1)


def relative_mse(x_hat, x0):
    d = np.dot(x0, x0)
    if d == 0:
        raise ValueError("relative MSE undefined for x0 = 0")
    r = x_hat - x0
    return float(np.dot(r, r) / d)


def success_mse(x_hat, x0, gamma=0.01):
    """Strict test |x_hat - x0|^2 / |x0|^2 < gamma."""
    return relative_mse(x_hat, x0) < gamma


def hamming_distance(x_hat, x0, alpha=0.01, n=None):
    """Fraction #{i : |x_hat_i - x0_i| >= alpha} / n, with n the number of measurements."""
    x0 = np.asarray(x0, float)
    n = x0.size if n is None else n
    return np.count_nonzero(np.abs(np.asarray(x_hat) - x0) >= alpha) / n


def success_hamming(x_hat, x0, alpha=0.01, beta=0.01, n=None):
    return hamming_distance(x_hat, x0, alpha, n) <= beta


def mse_criterion(gamma=0.01, strict=True):
    if strict:
        return lambda x, p: success_mse(x, p.x0, gamma)
    return lambda x, p: relative_mse(x, p.x0) <= gamma


def hamming_criterion(alpha=0.01, beta=0.01):
    return lambda x, p: success_hamming(x, p.x0, alpha, beta, p.n)


def amp_run(problem: SensingProblem, params: ShrinkParams, T_max=300,
            criterion: Optional[Callable] = None, onsager=True, stop_on_success=True):
    """Run AMP from x = 0, z = y.

    ``criterion(x, problem)`` decides success; it defaults to relative MSE
    below 1%.  The relative MSE trace is recorded when x0 is known and nonzero.
    """
    if criterion is None:
        criterion = mse_criterion()
    x0 = problem.x0
    track = x0 is not None and np.any(x0)
    state = amp_init(problem)
    trace = [relative_mse(state.x, x0)] if track else []
    success = x0 is not None and criterion(state.x, problem)
    if success and stop_on_success:
        return AmpResult(state, trace, True, 0)
    diag = ""
    for _ in range(T_max):
        state = amp_step(problem, state, params, onsager)
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.z))):
            return AmpResult(state, trace, False, state.t, "non-finite state")
        if track:
            trace.append(relative_mse(state.x, x0))
        if x0 is not None:
            success = criterion(state.x, problem)
            if success and stop_on_success:
                break
        if state.sigma_hat == 0:
            diag = "zero residual"
            break
    return AmpResult(state, trace, bool(success), state.t, diag)


def convergence_profile(problems, params: ShrinkParams, T=100):
    """Per-iteration median and quartiles of the relative MSE over replicates."""
    problems = list(problems)
    if len(problems) < 20:
        raise ValueError("need at least 20 replicates")
    rows = []
    for p in problems:
        res = amp_run(p, params, T, criterion=lambda x, q: False, stop_on_success=False)
        tr = np.asarray(res.mse, float)
        if tr.size < T + 1:
            tr = np.concatenate([tr, np.full(T + 1 - tr.size, tr[-1])])
        rows.append(tr)
    M = np.vstack(rows)
    return {"t": np.arange(T + 1),
            "median": np.median(M, axis=0),
            "q25": np.quantile(M, 0.25, axis=0),
            "q75": np.quantile(M, 0.75, axis=0)}
