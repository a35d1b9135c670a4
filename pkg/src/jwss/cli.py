"""Command line driver: generate, estimate, recover, benchmark, baselines.

Exit codes: 0 success, 2 invalid input or configuration, 3 a solver did
not reach its tolerance (results are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time as _time
import warnings
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import ConvergenceWarning, SolverError, ValidationError
from .graph import (build_laplacian, eigendecompose, perturb_weights, random_geometric_graph,
                    read_edgelist, write_edgelist)
from .harmonic import JointDomain, JointFilterSpec, TimeGrid, read_signal, write_signal
from .process import (JpsdModel, exp_separable_jpsd, generate_jwss,
                      load_ensemble, save_ensemble, sirs_simulate)
from .psd import (EstimatorConfig, WindowSpec, center, convolutional_jpsd, fast_jpsd,
                  load_estimate, save_estimate, select_window_aic)
from .recovery import (RecoveryProblem, SolverConfig, make_mask, normalized_rmse, read_mask,
                       recover)

OUTPUT_ROOT_ENV = "JWSS_OUTPUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3

log = logging.getLogger("jwss")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys mirror the long flags")
    p.add_argument("--output-root", help=f"output directory (default ${OUTPUT_ROOT_ENV} or .)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--graph-noise-snr", type=float, default=None,
                   help="corrupt the graph seen by the estimator at this SNR in dB")
    p.add_argument("--out", default=None, help="output name under the output root")
    p.add_argument("-v", "--verbose", action="store_true")


def _window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--L", type=int, default=None, help="time window support (even)")
    p.add_argument("--F", type=int, default=None, help="number of graph window centres")
    p.add_argument("--aic", action="store_true", help="choose L and F by AIC (exact path)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jwss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an ensemble of JWSS or SIRS samples")
    _common(g)
    kind = g.add_mutually_exclusive_group()
    kind.add_argument("--synthetic", action="store_true", help="Gaussian JWSS (default)")
    kind.add_argument("--sirs", action="store_true", help="SIRS epidemic indicator")
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--t", type=int, default=None)
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--graph", default=None, help="edge-list file; default random geometric")
    g.add_argument("--degree", type=float, default=7.2)
    g.add_argument("--omega-rate", type=float, default=5.0)
    g.add_argument("--mean", type=float, default=0.0)
    g.add_argument("--infection-days", type=int, default=2)
    g.add_argument("--immunity-days", type=int, default=10)
    g.add_argument("--contagion-prob", type=float, default=0.005)
    g.add_argument("--start-vertex", type=int, default=0)

    e = sub.add_parser("estimate", help="estimate the JPSD of an ensemble")
    _common(e)
    e.add_argument("--ensemble", required=True)
    e.add_argument("--fast", action="store_true", help="Chebyshev path, no eigendecomposition")
    e.add_argument("--compare", action="store_true", help="also run the other path, report gap")
    _window_flags(e)
    e.add_argument("--Q", type=int, default=100)
    e.add_argument("--cheb-order", type=int, default=50)
    e.add_argument("--reps", type=int, default=0,
                   help="regenerate this many ensembles for error/bias/variance")
    e.add_argument("--sweep-L", type=_ints, default=None)
    e.add_argument("--sweep-F", type=_ints, default=None)

    r = sub.add_parser("recover", help="solve a recovery problem or run the train/test protocol")
    _common(r)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--problem", help="JSON problem file")
    src.add_argument("--ensemble")
    r.add_argument("--p-t", type=float, default=0.3)
    r.add_argument("--p-d", type=float, default=0.3)
    r.add_argument("--sweep-pd", type=_floats, default=None)
    r.add_argument("--seeds", type=int, default=1)
    r.add_argument("--noise-var", type=float, default=0.0)
    r.add_argument("--method", default="minres_cg")
    r.add_argument("--tolerance", type=float, default=1e-8)
    r.add_argument("--max-iters", type=int, default=None)
    _window_flags(r)

    b = sub.add_parser("benchmark", help="estimator wall-clock against graph size")
    _common(b)
    b.add_argument("--sizes", type=_ints, default=[1000, 3000, 5000, 7000, 9000])
    b.add_argument("--t", type=int, default=64)
    b.add_argument("--k", type=int, default=1)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--paths", default="fast", help="comma list of fast, exact")

    bl = sub.add_parser("baselines", help="joint against time-only and vertex-only recovery")
    _common(bl)
    bl.add_argument("--ensemble", required=True)
    bl.add_argument("--p-t", type=float, default=0.3)
    bl.add_argument("--p-d", type=float, default=0.3)
    bl.add_argument("--seeds", type=int, default=10)
    _window_flags(bl)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = {k.replace("-", "_") for k in cfg} - known
        if unknown:
            raise ValidationError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def config_hash(args: argparse.Namespace) -> str:
    skip = {"config", "output_root", "out", "verbose"}
    payload = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:12]


def output_root(args) -> Path:
    root = args.output_root or os.environ.get(OUTPUT_ROOT_ENV) or "."
    return Path(root)


def _out_dir(args, default: str) -> Path:
    d = output_root(args) / (args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _resolve(args, path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    alt = output_root(args) / p
    return alt if alt.exists() else p


def write_csv(path: Path, rows: list[dict], chash: str) -> None:
    if not rows:
        raise ValidationError(f"nothing to write to {path}")
    fields = list(rows[0]) + ["config_hash"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({**row, "config_hash": chash})


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


# -- ensembles ---------------------------------------------------------------

def _load(args):
    d = _resolve(args, args.ensemble)
    ens = load_ensemble(d)
    gfile = d / ens.meta.get("graph_file", "graph.edgelist")
    if not gfile.exists():
        raise ValidationError(f"{d}: graph file {gfile.name} missing")
    g = read_edgelist(gfile)
    if g.num_vertices != ens.N:
        raise ValidationError(f"graph has {g.num_vertices} vertices, ensemble has N={ens.N}")
    return d, ens, g


def _true_model(meta: dict) -> JpsdModel | None:
    spec = meta.get("jpsd")
    if not spec or spec.get("kind") != "exp_separable":
        return None
    return JpsdModel(exp_separable_jpsd(spec["lambda_max"], spec["omega_rate"]),
                     meta.get("mean", 0.0))


def _estimator_graph(args, g):
    if args.graph_noise_snr is None:
        return g
    return perturb_weights(g, args.graph_noise_snr, seed=args.seed)


def _window(args, N: int, T: int) -> WindowSpec:
    w = ex.default_window(N, T, args.L, args.F)
    w.validate_for(N, T)
    return w


def cmd_generate(args) -> int:
    sirs = bool(args.sirs)
    n = args.n if args.n is not None else (200 if sirs else 256)
    t = args.t if args.t is not None else (180 if sirs else 128)
    k = args.k if args.k is not None else (10 if sirs else 20)
    if min(n, t, k) < 1:
        raise ValidationError("--n, --t and --k must be positive")
    if args.graph:
        g = read_edgelist(_resolve(args, args.graph))
        if g.num_vertices != n and args.n is not None:
            raise ValidationError(f"--n {n} disagrees with graph size {g.num_vertices}")
        n = g.num_vertices
    else:
        g = random_geometric_graph(n, seed=args.seed, degree=args.degree)
    out = _out_dir(args, "sirs" if sirs else "synthetic")
    extra = {"graph_file": "graph.edgelist", "config_hash": config_hash(args)}
    if sirs:
        ens = sirs_simulate(g, t=t, infection_days=args.infection_days,
                            immunity_days=args.immunity_days, contagion_prob=args.contagion_prob,
                            k=k, seed=args.seed, start_vertex=args.start_vertex)
    else:
        spectrum = eigendecompose(build_laplacian(g))
        model = JpsdModel(exp_separable_jpsd(spectrum.lambda_max, args.omega_rate), args.mean)
        ens = generate_jwss(model, spectrum, TimeGrid(t), k, seed=args.seed)
        extra["jpsd"] = {"kind": "exp_separable", "lambda_max": spectrum.lambda_max,
                         "omega_rate": args.omega_rate}
        extra["mean"] = args.mean
    write_edgelist(g, out / "graph.edgelist")
    save_ensemble(ens, out, extra)
    log.info("wrote %d samples of %dx%d to %s", k, n, t, out)
    return EXIT_OK


# -- estimation ----------------------------------------------------------------

def _estimate(args, ens, L, spectrum, time, fast: bool, seed: int, window=None):
    ens_c, c = center(ens)
    if args.aic and not fast:
        est, _ = select_window_aic(ens_c, spectrum, time)
    else:
        window = window or _window(args, ens.N, ens.T)
        cfg = EstimatorConfig(window, num_probes=args.Q, cheb_order=args.cheb_order)
        est = fast_jpsd(ens_c, L, time, cfg, seed=seed) if fast else \
            convolutional_jpsd(ens_c, spectrum, time, window)
    est.params["mean"] = c
    return est


def _grid(est, spectrum, time):
    return est.values if est.kind != "fast" else est.on_grid(spectrum.eigenvalues, time)


def cmd_estimate(args) -> int:
    d, ens, g = _load(args)
    g_est = _estimator_graph(args, g)
    L = build_laplacian(g_est)
    time = TimeGrid(ens.T)
    need_spectrum = (not args.fast) or args.compare or args.reps or args.sweep_L or args.sweep_F \
        or ens.meta.get("jpsd")
    spectrum = eigendecompose(L) if need_spectrum else None
    out = _out_dir(args, "estimate")
    chash = config_hash(args)
    metrics = {"config_hash": chash, "kind": "fast" if args.fast else "convolutional"}

    t0 = _time.perf_counter()
    est = _estimate(args, ens, L, spectrum, time, args.fast, args.seed)
    metrics["time_estimate"] = _time.perf_counter() - t0
    save_estimate(est, out / "estimate.json")

    model = _true_model(ens.meta)
    H = None
    if model is not None:
        # the true response is read at the estimator graph's eigenvalues
        H = model.grid(spectrum, time)
        metrics["relative_error"] = float(np.linalg.norm(_grid(est, spectrum, time) - H)
                                          / np.linalg.norm(H))
    if args.compare:
        other = _estimate(args, ens, L, spectrum, time, not args.fast, args.seed)
        a, b = _grid(est, spectrum, time), _grid(other, spectrum, time)
        ref = H if H is not None else (b if args.fast else a)
        metrics["gap"] = float(np.linalg.norm(a - b) / np.linalg.norm(ref))

    if model is not None and (args.reps or args.sweep_L or args.sweep_F):
        rows = _sweep(args, ens, model, L, spectrum, time, H)
        write_csv(out / "sweep.csv", rows, chash)
    _write_json(out / "metrics.json", metrics)
    return EXIT_OK


def _sweep(args, ens, model, L, spectrum, time, H):
    reps = args.reps or 20
    Ls = args.sweep_L or [args.L or ex.default_window(ens.N, ens.T).L]
    Fs = args.sweep_F or [args.F or min(ens.N, 50)]
    base = int(ens.meta.get("seed", args.seed))
    ensembles = [generate_jwss(model, spectrum, time, ens.K, seed=base + 1000 + r)
                 for r in range(reps)]
    rows = []
    for Lw in Ls:
        for F in Fs:
            win = WindowSpec(L=Lw, F=F)
            win.validate_for(ens.N, ens.T)
            ests, times, gaps = [], [], []
            for r, e in enumerate(ensembles):
                t0 = _time.perf_counter()
                est = _estimate(args, e, L, spectrum, time, args.fast, args.seed + r, window=win)
                times.append(_time.perf_counter() - t0)
                grid = _grid(est, spectrum, time)
                ests.append(grid)
                if args.compare:
                    other = _estimate(args, e, L, spectrum, time, not args.fast, args.seed + r,
                                      window=win)
                    gaps.append(np.linalg.norm(grid - _grid(other, spectrum, time))
                                / np.linalg.norm(H))
            row = {"L": Lw, "F": F, "reps": reps, **ex.estimator_metrics(ests, H),
                   "time_median": float(np.median(times))}
            if gaps:
                row["gap"] = float(np.max(gaps))
            rows.append(row)
    return rows


# -- recovery ------------------------------------------------------------------

def _filter_from(entry, base: Path):
    if entry is None:
        return None, None
    if isinstance(entry, (int, float)):
        return JointFilterSpec.constant(float(entry)), None
    if isinstance(entry, str):
        est = load_estimate(base / entry)
        return est.as_filter(floor=True), est.params.get("mean")
    if isinstance(entry, dict) and entry.get("kind") == "exp_separable":
        return exp_separable_jpsd(entry["lambda_max"], entry.get("omega_rate", 5.0)), None
    raise ValidationError(f"cannot interpret filter entry {entry!r}")


def load_problem(path: Path):
    """Parse a problem file; relative paths are taken from its directory."""
    spec = json.loads(path.read_text())
    base = path.parent
    for key in ("graph", "signal", "h_x"):
        if key not in spec:
            raise ValidationError(f"{path}: missing key {key!r}")
    g = read_edgelist(base / spec["graph"])
    y = read_signal(base / spec["signal"])
    N, T = y.shape
    if g.num_vertices != N:
        raise ValidationError(f"graph has {g.num_vertices} vertices, signal has N={N}")
    L = build_laplacian(g)
    mode = spec.get("mode", "auto")
    spectrum = eigendecompose(L) if mode != "fast" else None
    solver = SolverConfig(**spec.get("solver", {}))
    domain = JointDomain(L, TimeGrid(T), spectrum=spectrum, cheb_order=solver.cheb_order,
                         mode=mode)
    m = spec.get("mask")
    if m is None:
        A = np.ones((N, T))
    elif isinstance(m, dict):
        A = make_mask(m["kind"], N, T, p_d=m.get("p_d", 0.0), t_split=m.get("t_split"),
                      seed=m.get("seed", 0))
    else:
        A = read_mask(base / m, N, T)
    h_x, est_mean = _filter_from(spec["h_x"], base)
    h_w, _ = _filter_from(spec.get("h_w"), base)
    mean = spec.get("mean", est_mean if est_mean is not None else 0.0)
    prob = RecoveryProblem(domain, A, h_x, y, h_w, signal_mean=mean)
    truth = read_signal(base / spec["ground_truth"]) if spec.get("ground_truth") else None
    return prob, solver, truth


def _solve_problem(args) -> int:
    path = _resolve(args, args.problem)
    prob, solver, truth = load_problem(path)
    out = _out_dir(args, "recovery")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        x, rep = recover(prob, solver)
    write_signal(out / "recovered.bin", x)
    report = rep.to_dict()
    report["config_hash"] = config_hash(args)
    if truth is not None:
        report["rmse"] = normalized_rmse(x, truth)
    report["warnings"] = [str(w.message) for w in caught]
    _write_json(out / "report.json", report)
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _solver(args) -> SolverConfig:
    return SolverConfig(method=args.method, tolerance=args.tolerance, max_iters=args.max_iters)


def _protocol_window(args, ens):
    if args.aic or (args.L is None and args.F is None):
        return None
    return _window(args, ens.N, ens.T)


def _protocol(args, models, p_ds, seeds: int, solver: SolverConfig | None = None):
    _, ens, g = _load(args)
    window = _protocol_window(args, ens)
    rows, all_converged = [], True
    for p_d in p_ds:
        for s in range(seeds):
            seed = args.seed + s
            g_est = perturb_weights(g, args.graph_noise_snr, seed=seed) \
                if args.graph_noise_snr is not None else None
            runs = ex.recovery_experiment(ens, g, args.p_t, p_d, seed=seed, window=window,
                                          models=models, solver=solver, estimate_graph=g_est,
                                          noise_var=getattr(args, "noise_var", 0.0))
            for r in runs:
                all_converged &= r.converged
                rows.append({"p_d": p_d, "seed": seed, "model": r.model, "sample": r.sample,
                             "rmse": r.rmse, "iterations": r.iterations,
                             "converged": int(r.converged)})
    return rows, all_converged


def _summarise(rows, models, p_ds):
    summary = {}
    for p_d in p_ds:
        per = {}
        for m in models:
            seeds = sorted({r["seed"] for r in rows if r["p_d"] == p_d and r["model"] == m})
            meds = [np.median([r["rmse"] for r in rows if r["p_d"] == p_d and r["model"] == m
                               and r["seed"] == s]) for s in seeds]
            per[m] = float(np.median(meds))
        summary[f"{p_d:g}"] = per
    return summary


def cmd_recover(args) -> int:
    if args.problem:
        return _solve_problem(args)
    p_ds = args.sweep_pd or [args.p_d]
    rows, ok = _protocol(args, ("joint",), p_ds, args.seeds, _solver(args))
    out = _out_dir(args, "recovery")
    chash = config_hash(args)
    write_csv(out / "recovery.csv", rows, chash)
    _write_json(out / "summary.json", {"config_hash": chash,
                                       "median_rmse": _summarise(rows, ("joint",), p_ds)})
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_baselines(args) -> int:
    rows, ok = _protocol(args, ex.MODELS, [args.p_d], args.seeds)
    out = _out_dir(args, "baselines")
    chash = config_hash(args)
    write_csv(out / "baselines.csv", rows, chash)
    _write_json(out / "summary.json", {"config_hash": chash,
                                       "median_rmse": _summarise(rows, ex.MODELS, [args.p_d])})
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_benchmark(args) -> int:
    paths = [p.strip() for p in args.paths.split(",") if p.strip()]
    rows = []
    for path in paths:
        rows += ex.benchmark_sizes(args.sizes, t=args.t, k=args.k, path=path, reps=args.reps,
                                   seed=args.seed)
    out = _out_dir(args, "benchmark")
    chash = config_hash(args)
    write_csv(out / "benchmark.csv", rows, chash)
    slopes = {}
    for path in paths:
        sel = [r for r in rows if r["path"] == path]
        if len(sel) >= 2:
            slopes[path] = ex.loglog_slope([r["N"] for r in sel], [r["t_median"] for r in sel])
    _write_json(out / "summary.json", {"config_hash": chash, "loglog_slope": slopes})
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "estimate": cmd_estimate, "recover": cmd_recover,
            "benchmark": cmd_benchmark, "baselines": cmd_baselines}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValidationError, json.JSONDecodeError, OSError) as exc:
        print(f"jwss: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, KeyError, FileNotFoundError) as exc:
        print(f"jwss: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"jwss: solver error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
