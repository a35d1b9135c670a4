"""Experimental protocol: metrics, train/test recovery runs, baselines, timing."""

from __future__ import annotations

import time as _time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import (GraphSpectrum, GraphTopology, build_laplacian, eigendecompose,
                    perturb_weights, random_geometric_graph)
from .harmonic import JointDomain, JointFilterSpec, TimeGrid
from .process import (JpsdModel, ProcessEnsemble, covariance_dense, exp_separable_jpsd,
                      generate_jwss)
from .psd import (EstimatorConfig, WindowSpec, center, convolutional_jpsd,
                  fast_jpsd, select_window_aic)
from .recovery import (RecoveryProblem, SolverConfig, make_mask, normalized_rmse, recover)

MODELS = ("joint", "time", "vertex")


def estimator_metrics(estimates, H) -> dict:
    """Error, bias and variance of repeated estimates, each relative to ``|H|_F``.

    ``error = E|Ĥ - H| / |H|``, ``bias = |E Ĥ - H| / |H|`` and
    ``variance = E|Ĥ - E Ĥ| / |H|`` with ``E`` the sample average.
    """
    est = np.asarray(estimates, dtype=float)
    H = np.asarray(H, dtype=float)
    if est.ndim != H.ndim + 1 or est.shape[1:] != H.shape:
        raise ValidationError("estimates must be a stack of arrays shaped like H")
    norm = np.linalg.norm(H)
    mean = est.mean(axis=0)
    axes = tuple(range(1, est.ndim))
    return {
        "error": float(np.mean(np.sqrt(np.sum((est - H) ** 2, axis=axes))) / norm),
        "bias": float(np.linalg.norm(mean - H) / norm),
        "variance": float(np.mean(np.sqrt(np.sum((est - mean) ** 2, axis=axes))) / norm),
    }


def split_train_test(k: int, p_t: float, seed: int = 0):
    """Random split of ``k`` sample indices; ``round(p_t k)`` go to training."""
    if not 0.0 < p_t < 1.0:
        raise ValidationError("p_t must lie in (0, 1)")
    n_train = int(round(p_t * k))
    if n_train < 1 or n_train >= k:
        raise ValidationError(f"p_t={p_t} with K={k} leaves an empty train or test split")
    perm = np.random.default_rng(seed).permutation(k)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def default_window(N: int, T: int, L: int | None = None, F: int | None = None) -> WindowSpec:
    if L is None:
        L = max(2, (T // 2) // 2 * 2) if T >= 2 else 2
    L = min(L, T - T % 2) if T >= 2 else L
    return WindowSpec(L=L, F=F or min(N, 50))


def estimate_on_spectrum(ens: ProcessEnsemble, spectrum: GraphSpectrum, L, time: TimeGrid,
                         cfg: EstimatorConfig, fast: bool = False, seed: int = 0):
    """Centre ``ens`` and return ``(grid on spectrum, estimate, mean)``."""
    ens_c, c = center(ens)
    if fast:
        est = fast_jpsd(ens_c, L, time, cfg, seed=seed)
        grid = est.on_grid(spectrum.eigenvalues, time)
    else:
        est = convolutional_jpsd(ens_c, spectrum, time, cfg.window)
        grid = est.values
    return spectrum.group_average(grid), est, c


def marginal_grids(grid: np.ndarray) -> dict:
    """The joint grid and its time-only and vertex-only reductions.

    Time-only stationarity treats vertices as independent with a shared
    temporal PSD, which is the joint JPSD averaged over ``lambda``;
    vertex-only stationarity shares one graph PSD across timesteps,
    the average over ``omega``.
    """
    g = np.maximum(grid, 0.0)
    return {
        "joint": g,
        "time": np.broadcast_to(g.mean(axis=0, keepdims=True), g.shape).copy(),
        "vertex": np.broadcast_to(g.mean(axis=1, keepdims=True), g.shape).copy(),
    }


def floor_grid(grid: np.ndarray, ratio: float = 1e-12) -> np.ndarray:
    peak = float(np.max(grid)) if grid.size else 0.0
    return np.maximum(grid, ratio * peak if peak > 0 else ratio)


@dataclass
class RecoveryRun:
    model: str
    sample: int
    rmse: float
    iterations: int
    converged: bool


def recovery_experiment(ens: ProcessEnsemble, graph: GraphTopology, p_t: float, p_d: float,
                        seed: int = 0, window: WindowSpec | None = None,
                        models=MODELS, solver: SolverConfig | None = None,
                        estimate_graph: GraphTopology | None = None,
                        noise_var: float = 0.0) -> list[RecoveryRun]:
    """Train/test protocol: estimate on ``p_t`` of the samples, recover the rest.

    Each test sample loses ``round(p_d N T)`` entries. Without a
    ``window`` the estimator uses the AIC-best window. ``estimate_graph``
    (defaults to ``graph``) is the possibly corrupted graph the estimator
    and the solver see. ``noise_var > 0`` adds white measurement noise.
    """
    g_used = estimate_graph or graph
    L = build_laplacian(g_used)
    spectrum = eigendecompose(L)
    time = TimeGrid(ens.T)
    train, test = split_train_test(ens.K, p_t, seed)
    train_ens = ProcessEnsemble(ens.samples[train])
    if window is None:
        train_c, c = center(train_ens)
        est, _ = select_window_aic(train_c, spectrum, time)
        grid = est.values
    else:
        window.validate_for(ens.N, ens.T)
        grid, _, c = estimate_on_spectrum(train_ens, spectrum, L, time, EstimatorConfig(window))
    grids = marginal_grids(grid)
    domain = JointDomain(L, time, spectrum=spectrum)
    solver = solver or SolverConfig()
    rng = np.random.default_rng(seed + 1)
    noise_psd = JointFilterSpec.constant(noise_var) if noise_var > 0 else None
    runs = []
    for j, idx in enumerate(test):
        x = ens.samples[idx]
        mask = make_mask("interpolation", ens.N, ens.T, p_d=p_d, seed=seed * 100_003 + j)
        y = x + (np.sqrt(noise_var) * rng.standard_normal(x.shape) if noise_var > 0 else 0.0)
        for name in models:
            h = JointFilterSpec.from_grid(floor_grid(grids[name]), spectrum.eigenvalues, name=name)
            prob = RecoveryProblem(domain, mask, h, y, noise_psd, signal_mean=c)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                xh, rep = recover(prob, solver)
            runs.append(RecoveryRun(name, int(idx), normalized_rmse(xh, x), rep.iterations,
                                    rep.converged))
    return runs


def median_rmse(runs, model: str) -> float:
    vals = [r.rmse for r in runs if r.model == model]
    return float(np.median(vals)) if vals else float("nan")


def synthetic_setup(n: int, t: int, seed: int = 0, omega_rate: float = 5.0, mean: float = 0.0,
                    lambda_rate: float = 1.0):
    """Random geometric graph plus the separable exponential JPSD model."""
    g = random_geometric_graph(n, seed=seed)
    L = build_laplacian(g)
    spectrum = eigendecompose(L)
    model = JpsdModel(exp_separable_jpsd(spectrum.lambda_max, omega_rate, lambda_rate), mean)
    return g, L, spectrum, TimeGrid(t), model


def covariance_experiment(n: int = 100, t: int = 10, ks=(2, 5, 10, 50, 100, 250, 500),
                          snr_db: float | None = 10.0, seed: int = 0,
                          window: WindowSpec | None = None) -> list[dict]:
    """Covariance error of the joint estimator against the sample covariance.

    The data follow the clean graph; the joint estimator sees the graph
    corrupted at ``snr_db`` (or the clean one when ``None``). Without an
    explicit ``window`` the AIC-best window is used for each ``K``.
    """
    g, L, spectrum, time, model = synthetic_setup(n, t, seed=seed)
    Sigma = covariance_dense(model, spectrum, time)
    norm = np.linalg.norm(Sigma)
    g_est = perturb_weights(g, snr_db, seed=seed + 7) if snr_db is not None else g
    spec_est = eigendecompose(build_laplacian(g_est))
    kmax = max(ks)
    ens_all = generate_jwss(model, spectrum, time, kmax, seed=seed + 13)
    rows = []
    for k in ks:
        ens = ProcessEnsemble(ens_all.samples[:k])
        ens_c, _ = center(ens)
        if window is None:
            est, _ = select_window_aic(ens_c, spec_est, time)
        else:
            est = convolutional_jpsd(ens_c, spec_est, time, window)
        h_hat = JointFilterSpec.from_grid(est.values, spec_est.eigenvalues)
        Sigma_joint = covariance_dense(JpsdModel(h_hat), spec_est, time)
        # vec is vertex-fastest: transpose each N x T sample before flattening
        flat = np.transpose(ens.samples, (0, 2, 1)).reshape(k, -1)
        if k > 1:
            Sigma_sample = np.cov(flat, rowvar=False)
        else:
            Sigma_sample = np.zeros_like(Sigma)
        rows.append({"K": k, "seed": seed,
                     "joint_error": float(np.linalg.norm(Sigma_joint - Sigma) / norm),
                     "sample_error": float(np.linalg.norm(Sigma_sample - Sigma) / norm)})
    return rows


def time_call(fn, reps: int = 3):
    """Min, median and max wall-clock seconds over ``reps`` calls."""
    out = []
    for _ in range(reps):
        t0 = _time.perf_counter()
        fn()
        out.append(_time.perf_counter() - t0)
    return float(np.min(out)), float(np.median(out)), float(np.max(out))


def benchmark_sizes(sizes, t: int = 64, k: int = 1, path: str = "fast", reps: int = 3,
                    seed: int = 0, window: WindowSpec | None = None) -> list[dict]:
    """Estimator wall-clock per graph size.

    The fast path times Chebyshev estimation (including the lambda_max
    bound); the exact path times eigendecomposition plus spectral
    convolution.
    """
    if path not in ("fast", "exact"):
        raise ValidationError("path must be 'fast' or 'exact'")
    time = TimeGrid(t)
    rows = []
    for n in sizes:
        g = random_geometric_graph(int(n), seed=seed)
        L = build_laplacian(g)
        X = np.random.default_rng(seed).standard_normal((k, int(n), t))
        ens = ProcessEnsemble(X - X.mean())
        win = window or WindowSpec(L=min(t - t % 2, max(2, t // 2)), F=min(int(n), 50))
        cfg = EstimatorConfig(win)
        if path == "fast":
            def run():
                fast_jpsd(ens, L, time, cfg, seed=seed, lambda_max=None)
        else:
            def run():
                convolutional_jpsd(ens, eigendecompose(L), time, win)
        tmin, tmed, tmax = time_call(run, reps)
        rows.append({"path": path, "N": int(n), "T": t, "K": k, "E": g.num_edges,
                     "t_min": tmin, "t_median": tmed, "t_max": tmax})
    return rows


def loglog_slope(ns, ts) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(ts, float)), 1)[0])

