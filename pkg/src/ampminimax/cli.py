"""Command-line front end.

Every command writes its tables into ``--out-dir`` together with a
``manifest.json`` that is enough to rerun it (``ampminimax replay``).
Exit codes: 0 success, 2 invalid input, 3 numeric failure.
"""
import argparse
import csv
import difflib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import experiments as ex
from . import minimax as mm
from . import risk as rk
from . import state_evolution as se
from .amp import amp_run, make_problem
from .denoisers import KINDS, ShrinkParams, implied_penalty

SCHEMA_VERSION = 1
TABLE1_EPS = "0.01,0.025,0.05,0.10,0.15,0.20,0.25"
CURVE_KINDS = ("soft", "softpos", "cap", "pos", "hard", "firm", "minimax_scalar",
               "block_soft", "james_stein", "monotone", "tv", "tv_random")
DEFAULT_SIGNAL = {"soft": "simple_sparse", "hard": "simple_sparse", "firm": "simple_sparse",
                  "minimax_scalar": "simple_sparse", "softpos": "positive_sparse", "cap": "box",
                  "block_soft": "block_sparse", "james_stein": "block_sparse",
                  "monotone": "monotone_lf", "tv": "tv_random"}


class UsageError(ValueError):
    pass


def _floats(s):
    return [float(v) for v in str(s).split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in str(s).split(",") if v.strip()]


def _choose(name, options, what):
    if name in options:
        return name
    close = difflib.get_close_matches(name, options, n=3)
    hint = f"; did you mean {', '.join(close)}?" if close else ""
    raise UsageError(f"unknown {what} {name!r}{hint} (valid: {', '.join(options)})")


def _write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def _params_from_args(kind, a, eps=None):
    """Explicit thresholds if given, else the minimax tuning at eps."""
    if a.tau1 is not None or kind in ("cap", "monotone") or (kind == "james_stein"):
        return ShrinkParams(kind, a.tau1, a.tau2, block_size=a.B or 1)
    if eps is None:
        raise UsageError(f"{kind} needs --tau1 or --eps")
    return _tuned(kind, eps, a)[0].tau_star


def _tuned(kind, eps, a):
    """(curve point, interval distribution or None) for one family at eps."""
    if kind in ("block_soft", "james_stein") and not a.B:
        raise UsageError(f"{kind} needs --B")
    if kind == "monotone":
        pt, dist = mm.mse_monotone(eps, a.max_len, rk.MonoRiskTable(a.n_mc, a.seed))
        return pt, dist
    if kind == "tv":
        table = rk.TVRiskTable(a.n_mc, a.seed)
        if getattr(a, "signal", None) == "tv_lf":
            return mm.mse_tv(eps, min(a.max_len, 100), table=table)
        return mm.mse_tv_random(eps, table=table), None
    if kind == "minimax_scalar":
        from .least_favorable import mse_minimax_scalar
        return mse_minimax_scalar(eps)[0], None
    return ex.tuned(kind, eps, a.B), None


# --- commands ---------------------------------------------------------------------

def cmd_minimax(a):
    kind = _choose(a.denoiser, CURVE_KINDS, "denoiser")
    rows, figs = [], {}
    for eps in _floats(a.eps):
        if kind in ("cap", "pos"):
            M = mm.mse_cap(eps) if kind == "cap" else mm.mse_pos(eps)
            pt = mm.MinimaxCurvePoint(eps, M, None)
        elif kind == "tv":
            pt, _ = mm.mse_tv(eps, a.max_len, table=rk.TVRiskTable(a.n_mc, a.seed))
        elif kind == "tv_random":
            pt = mm.mse_tv_random(eps, table=rk.TVRiskTable(a.n_mc, a.seed))
        else:
            pt = _tuned(kind, eps, a)[0]
        row = mm.curve_row(kind, pt)
        if not a.emit_thresholds:
            row.pop("tau1"), row.pop("tau2")
        rows.append(row)
        figs.setdefault(kind, ([], []))
        figs[kind][0].append(eps)
        figs[kind][1].append(pt.M)
    cols = [c for c in mm.CURVE_COLUMNS if a.emit_thresholds or c not in ("tau1", "tau2")]
    out = {"curve": "curve.csv"}
    _write_rows(os.path.join(a.out_dir, out["curve"]), cols, rows)
    if a.figure:
        from .plotting import plot_curves
        out["figure"] = "curve.png"
        plot_curves(os.path.join(a.out_dir, out["figure"]), figs)
    return out


def cmd_risk(a):
    kind = _choose(a.kind, KINDS, "kind")
    rows = []
    if kind == "monotone":
        for l in _ints(a.lengths):
            est, sd = rk.risk_mono_zero(l, a.n_mc, a.seed)
            rows.append(dict(kind=kind, B="", tau="", mu_or_len=l, boundary="",
                             estimate=est, std_error=sd, n_mc=a.n_mc, seed=a.seed))
    elif kind == "tv":
        if a.tau1 is None:
            raise UsageError("tv needs --tau1")
        for l in _ints(a.lengths):
            est, sd = rk.risk_tv_zero(l, a.boundary, a.tau1, a.n_mc, a.seed)
            rows.append(dict(kind=kind, B="", tau=a.tau1, mu_or_len=l, boundary=a.boundary,
                             estimate=est, std_error=sd, n_mc=a.n_mc, seed=a.seed))
    else:
        p = _params_from_args(kind, a)
        for mu in _floats(a.mu):
            if kind == "block_soft":
                est = rk.risk_block_soft_sure(mu, p.tau1, p.block_size)
            elif kind == "james_stein":
                est = rk.risk_js_sure(mu, p.block_size)
            else:
                est = float(rk.risk_scalar(p, mu))
            rows.append(dict(kind=kind, B=p.block_size if kind in ("block_soft", "james_stein") else "",
                             tau="" if p.tau1 is None else p.tau1, mu_or_len=mu, boundary="",
                             estimate=est, std_error=0.0, n_mc=0, seed=""))
    out = {"risk": "risk.csv"}
    rk.write_risk_csv(os.path.join(a.out_dir, out["risk"]), rows)
    return out


def cmd_se(a):
    kind = _choose(a.kind, KINDS, "kind")
    if kind in ("monotone", "tv"):
        raise UsageError("state evolution is implemented for scalar and block kinds")
    p = _params_from_args(kind, a, a.eps)
    cfg = se.SEConfig(a.delta, p, rk.TwoPointPrior(a.eps, a.mu))
    mix = se.MixtureRisk(p, a.eps)
    trace = se.iterate(cfg, a.T, a.tol, mix)
    trace.hfp = se.hfp(cfg, mix=mix)
    out = {"trace": "trace.csv", "summary": "se.json"}
    se.write_trace_csv(os.path.join(a.out_dir, out["trace"]), trace)
    summary = {"kind": kind, "epsilon": a.eps, "delta": a.delta, "mu": a.mu,
               "tau1": p.tau1, "tau2": p.tau2, "m0": cfg.m0, "hfp": trace.hfp,
               "converged": trace.converged, "final_m": trace.states[-1],
               "iterations": len(trace.states) - 1}
    _dump_json(os.path.join(a.out_dir, out["summary"]), summary)
    if a.figure:
        from .plotting import plot_trace
        out["figure"] = "trace.png"
        plot_trace(os.path.join(a.out_dir, out["figure"]), trace.states)
    return out


def _signal_spec(kind, eps, N, a, dist=None, mu_star=math.inf):
    cls = a.signal or DEFAULT_SIGNAL[kind]
    amp = a.amplitude
    if amp is None:
        if cls in ("monotone_lf", "tv_random", "tv_lf"):
            amp = 10.0
        else:
            amp = mu_star if np.isfinite(mu_star) else 100.0
    return ex.SignalSpec(cls, N, eps, amp, a.B, dist)


def _criterion_for(cls, a):
    if a.criterion:
        return a.criterion, a.T
    if cls in ("monotone_lf", "tv_random"):
        return "hamming", a.T
    if cls == "tv_lf":
        return "tv_lf", 5
    return "mse", a.T


def cmd_run(a):
    kind = _choose(a.kind, KINDS, "kind")
    pt, dist = _tuned(kind, a.eps, a) if a.tau1 is None else (None, None)
    p = pt.tau_star if pt else _params_from_args(kind, a)
    spec = _signal_spec(kind, a.eps, a.N, a, dist, pt.mu_star if pt else math.inf)
    crit_name, T = _criterion_for(spec.cls, a)
    s_sig, s_mat = ex.trial_seeds(a.seed, 0, 0)
    x0 = ex.sample_signal(spec, s_sig)
    prob = make_problem(x0, a.delta, s_mat)
    res = amp_run(prob, p, T, _crit(crit_name))
    rec = {"config": {"kind": kind, "epsilon": a.eps, "delta": a.delta, "N": a.N,
                      "signal": spec.cls, "amplitude": spec.amplitude, "tau1": p.tau1,
                      "tau2": p.tau2, "B": p.block_size, "criterion": crit_name, "T_max": T},
           "seed": a.seed, "mse": res.mse, "success": bool(res.success),
           "iterations": res.iterations, "diagnostic": res.diagnostic}
    out = {"run": "run.json"}
    _dump_json(os.path.join(a.out_dir, out["run"]), rec)
    return out


def _crit(name):
    if name == "tv_lf":
        return ex._criterion("mse_le", 0.001, 0.01, 0.01)
    return ex._criterion(name, 0.01, 0.01, 0.01)


def cmd_pt(a):
    kind = _choose(a.kind, KINDS, "kind")
    if a.trials < 1:
        raise UsageError("--trials must be >= 1")
    eps = a.eps
    pt, dist = _tuned(kind, eps, a)
    p = pt.tau_star
    results, fits = [], {}
    for N in _ints(a.N):
        spec = _signal_spec(kind, eps, N, a, dist, pt.mu_star)
        crit_name, T = _criterion_for(spec.cls, a)
        grid = _floats(a.deltas) if a.deltas else ex.default_delta_grid(pt.M, a.half_width, a.n_deltas)
        res = ex.run_pt_grid(eps, p, spec, grid, a.trials, a.seed, criterion=_crit(crit_name),
                             T_max=T, workers=a.workers)
        results.append(res)
        try:
            fits[(kind, eps, N)] = ex.fit_logistic(res, pt.M, level=a.level)
        except ValueError as e:
            print(f"warning: no logistic fit at N={N}: {e}", file=sys.stderr)
    out = {"grid": "grid.csv", "fit": "fit.json"}
    ex.write_grid_csv(os.path.join(a.out_dir, out["grid"]), results)
    ex.write_fit_json(os.path.join(a.out_dir, out["fit"]), fits)
    if a.figure:
        from .plotting import plot_pt_grid
        for r in results:
            name = f"pt_N{r.N}.png"
            plot_pt_grid(os.path.join(a.out_dir, name), r, fits.get((kind, eps, r.N)))
            out[f"figure_N{r.N}"] = name
    return out


def _scaling_records(paths):
    offs, slopes = [], []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            rows = json.load(fh)
        for row in rows:
            g = f"{row['kind']}:{row['epsilon']:g}"
            for key, v in row.items():
                if not key.startswith("off."):
                    continue
                N = int(key[4:])
                se_off = row.get(f"se.{N}")
                if se_off is None or not np.isfinite(se_off):
                    se_off = (row[f"ci.{N}.hi"] - row[f"ci.{N}.lo"]) / 3.92
                offs.append((g, N, v, se_off))
                b = row.get(f"beta.{N}")
                if b is not None and np.isfinite(b):
                    slopes.append((g, N, b, row.get(f"beta_se.{N}") or 1.0))
    return offs, slopes


def cmd_scaling(a):
    if not a.input:
        raise UsageError("scaling needs at least one --input fit JSON")
    offs, slopes = _scaling_records(a.input)
    gammas = _floats(a.gammas)
    rep_off = ex.fit_offset_scaling(offs, gammas)
    rep_slope = ex.fit_slope_scaling(slopes, gammas) if slopes else {}
    rows = [{"gamma": _fmt(g), "R2_offset": _fmt(rep_off[g]["R2"]),
             "R2_slope": _fmt(rep_slope[g]["R2"]) if g in rep_slope else ""} for g in gammas]
    out = {"table": "scaling.csv"}
    _write_rows(os.path.join(a.out_dir, out["table"]), ["gamma", "R2_offset", "R2_slope"], rows)
    if a.figure:
        from .plotting import plot_scaling
        out["figure"] = "scaling.png"
        plot_scaling(os.path.join(a.out_dir, out["figure"]), rep_off)
    return out


def cmd_penalty(a):
    kind = _choose(a.kind, KINDS, "kind")
    p = _params_from_args(kind, a, a.eps)
    x = np.linspace(0.0, a.x_max, a.n)
    tab = implied_penalty(p, x)
    out = {"penalty": "penalty.csv"}
    tab.to_csv(os.path.join(a.out_dir, out["penalty"]))
    if a.figure:
        from .plotting import plot_penalty
        out["figure"] = "penalty.png"
        plot_penalty(os.path.join(a.out_dir, out["figure"]), tab)
    return out


COMMANDS = {"minimax": cmd_minimax, "risk": cmd_risk, "se": cmd_se, "run": cmd_run,
            "pt": cmd_pt, "scaling": cmd_scaling, "penalty": cmd_penalty}


# --- parser, config files and manifests ---------------------------------------------

def _dump_json(path, obj):
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return clean(v.item())
        return v
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _common(p):
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figure", action="store_true", help="also write PNG figures")
    p.add_argument("--config", help="key=value file; explicit flags take precedence")


def _denoiser_args(p, kind_flag="--kind"):
    p.add_argument(kind_flag, dest=kind_flag.strip("-"), required=True)
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--B", type=int)
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--max-len", type=int, default=1024)


def build_parser():
    ap = argparse.ArgumentParser(prog="ampminimax", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("minimax", help="minimax MSE curve of a denoiser family")
    _denoiser_args(p, "--denoiser")
    p.add_argument("--eps", default=TABLE1_EPS)
    p.add_argument("--emit-thresholds", action="store_true")

    p = sub.add_parser("risk", help="risk tables")
    _denoiser_args(p)
    p.add_argument("--mu", default="0,1,2,3,4")
    p.add_argument("--lengths", default="1,2,4,8,16")
    p.add_argument("--boundary", default="++", choices=["++", "+-"])

    p = sub.add_parser("se", help="state evolution trace and highest fixed point")
    _denoiser_args(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-12)

    for name, helptext in (("run", "one AMP reconstruction"), ("pt", "phase-transition grid")):
        p = sub.add_parser(name, help=helptext)
        _denoiser_args(p)
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--signal", choices=ex.SIGNAL_CLASSES)
        p.add_argument("--amplitude", type=float)
        p.add_argument("--criterion", choices=["mse", "mse_le", "hamming", "tv_lf"])
        p.add_argument("--T", type=int, default=300)
        if name == "run":
            p.add_argument("--N", type=int, default=1000)
            p.add_argument("--delta", type=float, required=True)
        else:
            p.add_argument("--N", default="1000", help="one or more N, comma separated")
            p.add_argument("--trials", type=int, default=100)
            p.add_argument("--deltas", help="explicit delta grid, comma separated")
            p.add_argument("--half-width", type=float, default=0.05)
            p.add_argument("--n-deltas", type=int, default=11)
            p.add_argument("--level", type=float, default=0.5)
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("scaling", help="finite-N power-law fits of offsets and slopes")
    p.add_argument("--input", action="append", default=[])
    p.add_argument("--gammas", default=",".join(f"{g:.10g}" for g in ex.DEFAULT_GAMMAS))

    p = sub.add_parser("penalty", help="implied penalty of a denoiser")
    _denoiser_args(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--x-max", type=float, default=5.0)
    p.add_argument("--n", type=int, default=501)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir")

    for name, sp in sub.choices.items():
        if name != "replay":
            _common(sp)
    return ap, sub


def read_config(path):
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{i}: expected key=value")
            k, v = line.split("=", 1)
            cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def _config_argv(sp, cfg):
    """Turn config entries into flags placed before the explicit ones."""
    by_dest = {act.dest: act for act in sp._actions if act.option_strings}
    argv = []
    for k, v in cfg.items():
        act = by_dest.get(k)
        if act is None or k == "config":
            raise UsageError(f"unknown config key {k!r}")
        flag = act.option_strings[-1]
        if act.nargs == 0:
            if v.lower() in ("1", "true", "yes"):
                argv.append(flag)
        elif isinstance(act, argparse._AppendAction):
            argv += [x for item in v.split(";") for x in (flag, item.strip())]
        else:
            argv += [flag, v]
    return argv


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse(argv):
    ap, sub = build_parser()
    path = _config_path(argv)
    # config values may fill required flags, so merge them before the single parse
    if path and argv and argv[0] in sub.choices:
        cfg_argv = _config_argv(sub.choices[argv[0]], read_config(path))
        argv = [argv[0]] + cfg_argv + list(argv[1:])
    return ap.parse_args(argv)


def _manifest_params(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "config", "out_dir")}


def execute(args):
    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    outputs = COMMANDS[args.command](args)
    manifest = {"command": args.command, "params": _manifest_params(args), "seed": args.seed,
                "version": __version__, "schema_version": SCHEMA_VERSION,
                "outputs": outputs, "wall_clock_s": round(time.perf_counter() - t0, 3)}
    _dump_json(os.path.join(args.out_dir, "manifest.json"), manifest)
    return manifest


def replay(path, out_dir=None):
    with open(path, encoding="utf-8") as fh:
        man = json.load(fh)
    ns = argparse.Namespace(command=man["command"], config=None,
                            out_dir=out_dir or os.path.dirname(os.path.abspath(path)))
    for k, v in man["params"].items():
        setattr(ns, k, v)
    return execute(ns), ns.out_dir


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        if args.command == "replay":
            man, out_dir = replay(args.manifest, args.out_dir)
        else:
            man, out_dir = execute(args), args.out_dir
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        # LinAlgError derives from ValueError, so it is caught first
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for k, v in man["outputs"].items():
        print(f"{k}: {os.path.join(out_dir, v)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
