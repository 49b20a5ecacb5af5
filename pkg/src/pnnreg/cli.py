"""Command-line front end.

Subcommands: fit, sweep, rates, dof, construct.  Configs are flat
``key = value`` text; repeating a key builds a list.  Exit codes: 0 ok,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bounds
from .baselines.twolayer import DivergenceError
from .evalharness import (GRIDDED, ConfigError, ExperimentConfig, PNNSettings, isotonic_smooth,
                          make_problem, run_experiment)
from .numkern import FactorizationError
from .pnn import TrainingDiverged, atomic_write_text, save_checkpoint
from .splinenet import bspline_parallel_net

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_SCALARS = {"name": str, "problem": str, "n": int, "sigma": float, "repeats": int, "seed": int,
            "threads": int, "tf.order": int, "nn2.order": int, "nn2.M": int, "nn2.iters": int, "tuning": float}
_PNN = {f.name: f.type for f in fields(PNNSettings)}


def parse_config(text: str) -> dict:
    """``key = value`` lines to ``{key: [values...]}``; ``#`` starts a comment."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not val:
            raise ConfigError(f"line {lineno}: empty key or value")
        out.setdefault(key, []).append(val)
    return out


def _one(cfg: dict, key: str):
    vals = cfg[key]
    if len(vals) != 1:
        raise ConfigError(f"key {key!r} given {len(vals)} times")
    return vals[0]


def _convert(key: str, val: str, typ):
    try:
        if typ in (bool, "bool"):
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return val.lower() in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(val)
        if typ in (float, "float"):
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None


def build_config(raw: dict) -> tuple:
    """Returns ``(ExperimentConfig, tuning or None)``."""
    cfg = ExperimentConfig()
    tuning = None
    for key, vals in raw.items():
        if key == "method":
            cfg.methods = list(vals)
        elif key.startswith("grid."):
            cfg.grids[key[5:]] = [_convert(key, v, float) for v in vals]
        elif key.startswith("pnn."):
            name = key[4:]
            if name not in _PNN:
                raise ConfigError(f"unknown key {key!r}")
            setattr(cfg.pnn, name, _convert(key, _one(raw, key), _PNN[name]))
        elif key in _SCALARS:
            val = _convert(key, _one(raw, key), _SCALARS[key])
            if key == "tuning":
                tuning = val
            else:
                attr = {"tf.order": "tf_order", "nn2.order": "nn2_order", "nn2.M": "nn2_M",
                        "nn2.iters": "nn2_iters"}.get(key, key)
                setattr(cfg, attr, val)
        else:
            raise ConfigError(f"unknown key {key!r}")
    return cfg, tuning


def load_config(path) -> tuple:
    if path is None:
        raise ConfigError("--config is required")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return build_config(parse_config(text))


# ---------------------------------------------------------------- SVG

def _svg(series: list, title: str, xlabel: str, ylabel: str, logx: bool = False) -> str:
    """``series`` items: (label, xs, ys, kind) with kind "line" or "dots"."""
    W, H, pad = 800, 500, 60
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    tx = (lambda v: np.log10(v)) if logx else (lambda v: v)
    xs_all = np.concatenate([tx(np.asarray(s[1], float)) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    x0, x1 = (float(xs_all[ok].min()), float(xs_all[ok].max())) if ok.any() else (0.0, 1.0)
    y0, y1 = (float(ys_all[ok].min()), float(ys_all[ok].max())) if ok.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def py(v):
        return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="30" text-anchor="middle" font-size="16">{title}</text>',
           f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle" font-size="13">{xlabel}</text>',
           f'<text x="15" y="{H / 2}" font-size="13" transform="rotate(-90 15 {H / 2})" '
           f'text-anchor="middle">{ylabel}</text>',
           f'<text x="{pad}" y="{H - pad + 18}" font-size="11">{x0:.3g}</text>',
           f'<text x="{W - pad}" y="{H - pad + 18}" font-size="11" text-anchor="end">{x1:.3g}</text>',
           f'<text x="{pad - 5}" y="{H - pad}" font-size="11" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{pad - 5}" y="{pad + 10}" font-size="11" text-anchor="end">{y1:.3g}</text>']
    for i, (label, xs, ys, kind) in enumerate(series):
        c = colors[i % len(colors)]
        pts = [(px(a), py(b)) for a, b in zip(tx(np.asarray(xs, float)), np.asarray(ys, float))
               if math.isfinite(a) and math.isfinite(b)]
        if kind == "dots":
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.5" fill="{c}" fill-opacity="0.5"/>' for a, b in pts]
        else:
            path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        out.append(f'<text x="{W - pad - 5}" y="{pad + 18 * (i + 1)}" font-size="12" text-anchor="end" '
                   f'fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def _prepare(args) -> tuple:
    cfg, tuning = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = max(1, args.threads)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return cfg, tuning, out


def cmd_fit(args) -> int:
    cfg, tuning, out = _prepare(args)
    if len(cfg.methods) != 1:
        raise ConfigError("fit needs exactly one method")
    method = cfg.methods[0]
    if method in GRIDDED:
        if tuning is None:
            grid = cfg.grids.get(method) or []
            if not grid:
                raise ConfigError(f"fit needs tuning = ... (or grid.{method})")
            tuning = grid[0]
        cfg.grids = {method: [tuning]}
    cfg.repeats = 1
    problem = make_problem(cfg)
    res = run_experiment(cfg, problem, keep_fits=True)
    fit = next(iter(res.fits.values()))
    y = problem.sample(0)
    f0 = problem.f0
    rows = [[float(a), float(b), float(c), float(d)] for a, b, c, d in zip(problem.x, y, fit.yhat, f0)]
    atomic_write_text(out / "fit.csv", _csv_text(["x", "y", "yhat", "truth"], rows))
    series = [("data", problem.x, y, "dots")]
    if problem.truth is not None:
        series.append(("truth", problem.x, f0, "line"))
    series.append((f"{method} fit", problem.x, fit.yhat, "line"))
    atomic_write_text(out / "fit.svg", _svg(series, f"{cfg.name}: {method}", "x", "y"))
    if "net" in fit.meta:
        save_checkpoint(fit.meta["net"], out / "checkpoint.json")
    row = res.rows[0]
    print(f"{method} tuning={row[1]!r} mse={row[3]!r} dof={row[4]!r} active={row[5]}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, _, out = _prepare(args)
    res = run_experiment(cfg, progress=(lambda msg: print(msg, file=sys.stderr)) if args.verbose else None)
    atomic_write_text(out / "rows.csv", res.rows_csv())
    atomic_write_text(out / "aggregate.csv", res.aggregate_csv())
    series = []
    for m in cfg.methods:
        agg = [a for a in res.aggregate if a[0] == m]
        agg.sort(key=lambda a: a[5])
        series.append((m, [a[5] for a in agg], [a[2] for a in agg], "line"))
    atomic_write_text(out / "mse_vs_dof.svg", _svg(series, f"{cfg.name}: MSE vs dof", "estimated dof", "MSE"))
    for a in res.aggregate:
        print(",".join(repr(v) if isinstance(v, float) else str(v) for v in a))
    return EXIT_OK


def cmd_dof(args) -> int:
    cfg, _, out = _prepare(args)
    res = run_experiment(cfg)
    rows = []
    for m in cfg.methods:
        agg = sorted((a for a in res.aggregate if a[0] == m), key=lambda a: a[1])
        raw = [a[5] for a in agg]
        iso = isotonic_smooth(raw, increasing=False) if len(raw) > 1 else np.array(raw)
        rows += [[m, a[1], a[5], float(s)] for a, s in zip(agg, iso)]
    text = _csv_text(["method", "tuning", "dof", "dof_isotonic"], rows)
    atomic_write_text(out / "dof.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rates(args) -> int:
    try:
        if args.m is not None:
            rp = bounds.RateParams.bv(args.m)
        else:
            if args.alpha is None:
                raise ConfigError("give --m, or --alpha with optional --d and --p")
            if not args.alpha - args.d / args.p > 1:
                raise ConfigError("need alpha - d/p > 1")
            rp = bounds.RateParams(args.alpha, args.d, args.p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = bounds.rate_table(rp, range(args.L_min, args.L_max + 1))
    lim = bounds.mse_rate_exponent(rp)
    mm = bounds.minimax_exponent(rp.alpha, rp.d)
    lin = bounds.linear_minimax_exponent(rp.m) if rp.m is not None else None
    rows.append(("inf", float(lim), float(mm), None if lin is None else float(lin)))
    lines = ["L,exponent,minimax,linear"]
    for L, e, a, b in rows:
        lines.append(f"{L},{e!r},{a!r},{'' if b is None else repr(b)}")
    if rp.m is not None:
        cross = bounds.crossover_depth(rp.m)
        print(f"# crossover depth vs linear estimators: {cross}", file=sys.stderr)
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        atomic_write_text(Path(args.out) / "rates.csv", text)
    return EXIT_OK


def cmd_construct(args) -> int:
    if args.m < 1 or not 0 < args.eps < 1 or args.k < 0:
        raise ConfigError("need m >= 1, k >= 0 and 0 < eps < 1")
    net = bspline_parallel_net(args.m, args.k, (args.s,), 1, args.eps)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    net.meta.update({"m": args.m, "k": args.k, "s": args.s})
    save_checkpoint(net, out / "bspline_net.json")
    print(f"wrote {out / 'bspline_net.json'}: M={net.M} w={net.w} L={net.L}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnnreg", description="Parallel ReLU network regression toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)

    sp = sub.add_parser("fit", help="fit one method once; writes fit.csv and fit.svg")
    common(sp)
    sp.set_defaults(func=cmd_fit)
    sp = sub.add_parser("sweep", help="repeats x tuning grid; writes rows.csv, aggregate.csv, mse_vs_dof.svg")
    common(sp)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("dof", help="estimated degrees of freedom along the tuning grid")
    common(sp)
    sp.set_defaults(func=cmd_dof)
    sp = sub.add_parser("rates", help="rate exponent table (CSV on stdout)")
    common(sp, config=False)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--p", type=float, default=1.0)
    sp.add_argument("--m", type=int, help="bounded-variation order (alpha = m + 1, d = p = 1)")
    sp.add_argument("--L-min", dest="L_min", type=int, default=3)
    sp.add_argument("--L-max", dest="L_max", type=int, default=50)
    sp.set_defaults(func=cmd_rates)
    sp = sub.add_parser("construct", help="emit a B-spline network checkpoint")
    common(sp, config=False)
    sp.add_argument("--m", type=int, default=3)
    sp.add_argument("--k", type=int, default=0)
    sp.add_argument("--s", type=float, default=0.0)
    sp.add_argument("--eps", type=float, default=1e-2)
    sp.set_defaults(func=cmd_construct)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, DivergenceError, FactorizationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
