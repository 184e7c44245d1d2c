"""Figures written next to the CSV/JSON outputs.  Always uses the Agg backend."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy import special

# fixed metadata keeps PNG bytes reproducible across runs
_SAVE_KW = dict(dpi=120, metadata={"Software": None})


def _finish(fig, ax, path, xlabel, ylabel, title=None):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_curves(path, curves):
    """curves: {label: (eps array, M array)}."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (e, m) in curves.items():
        ax.plot(e, m, marker="o", ms=3, label=label)
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, ax, path, "epsilon", "minimax MSE")


def plot_pt_grid(path, result, fit=None):
    d = np.array([r[0] for r in result.rows])
    p = result.fractions()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(d, p, "o", label=f"N={result.N}")
    if fit is not None and np.isfinite(fit.beta_hat):
        x = np.linspace(d.min(), d.max(), 200)
        ax.plot(x, special.expit(fit.alpha_hat + fit.beta_hat * (x - fit.delta_pred)), "-",
                label="logistic fit")
    if fit is not None:
        ax.axvline(fit.delta_pred, color="k", lw=0.8, ls="--", label="predicted")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, ax, path, "delta", "success fraction",
                   f"{result.kind}, eps={result.epsilon:g}")


def plot_trace(path, states):
    fig, ax = plt.subplots(figsize=(5, 4))
    s = np.asarray(states, float)
    ax.semilogy(np.arange(s.size), np.maximum(s, 1e-300))
    return _finish(fig, ax, path, "iteration", "MSE")


def plot_penalty(path, table):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(table.x_grid, table.J)
    return _finish(fig, ax, path, "x", "J(x)", table.denoiser_kind)


def plot_profile(path, prof):
    fig, ax = plt.subplots(figsize=(5, 4))
    t = prof["t"]
    ax.semilogy(t, prof["median"], label="median")
    ax.fill_between(t, prof["q25"], prof["q75"], alpha=0.3, label="quartiles")
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, ax, path, "iteration", "relative MSE")


def plot_scaling(path, report):
    g = sorted(report)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(g, [report[k]["R2"] for k in g], "o-")
    return _finish(fig, ax, path, "gamma", "R^2")
