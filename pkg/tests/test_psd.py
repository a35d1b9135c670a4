import warnings

import numpy as np
import pytest

from jwss.errors import ValidationError
from jwss.graph import build_laplacian, eigendecompose, random_geometric_graph, ring_graph
from jwss.harmonic import JointFilterSpec, TimeGrid, jft
from jwss.process import JpsdModel, ProcessEnsemble, exp_separable_jpsd, generate_jwss
from jwss.psd import (EstimatorConfig, PsdEstimate, ResolutionWarning, WindowSpec, aic_score,
                      bias_bound, center, convolutional_jpsd, fast_jpsd, load_estimate,
                      sample_jpsd, save_estimate, select_window_aic, variance_formula)


@pytest.fixture(scope="module")
def geo():
    L = build_laplacian(random_geometric_graph(30, seed=6))
    return L, eigendecompose(L)


def test_center_trivial():
    ens, c = center(ProcessEnsemble(np.ones((3, 4, 5))))
    assert c == 1.0 and np.all(ens.samples == 0)
    again, c2 = center(ens)
    assert c2 == 0.0 and np.array_equal(again.samples, ens.samples)


def test_center_recovers_mean(geo):
    _, s = geo
    model = JpsdModel(JointFilterSpec.constant(1.0), mean=5.0)
    ens = generate_jwss(model, s, TimeGrid(8), 50, seed=1)
    _, c = center(ens)
    # grand mean of 50*30*8 unit-variance white entries
    assert abs(c - 5.0) <= 4 / np.sqrt(50 * 30 * 8)


def test_window_validation():
    for bad in (dict(L=3, F=2), dict(L=0, F=2), dict(L=4, F=0)):
        with pytest.raises(ValidationError):
            WindowSpec(**bad)
    with pytest.raises(ValidationError):
        WindowSpec.disc(0.0)
    with pytest.raises(ValidationError):
        WindowSpec(L=8, F=2).validate_for(5, 6)


def test_sample_requires_centering(geo):
    _, s = geo
    with pytest.raises(ValidationError, match="center"):
        sample_jpsd(ProcessEnsemble(np.ones((2, 30, 4))), s, TimeGrid(4))


def test_sample_single_realisation(geo):
    _, s = geo
    X = np.random.default_rng(0).standard_normal((30, 6))
    X -= X.mean()
    est = sample_jpsd(ProcessEnsemble(X[None]), s, TimeGrid(6))
    np.testing.assert_allclose(est.values, s.group_average(np.abs(jft(X, s)) ** 2), atol=1e-12)


def test_dirac_window_is_sample(geo):
    _, s = geo
    X = np.random.default_rng(1).standard_normal((4, 30, 8))
    ens, _ = center(ProcessEnsemble(X))
    tg = TimeGrid(8)
    a = sample_jpsd(ens, s, tg).values
    b = convolutional_jpsd(ens, s, tg, WindowSpec.dirac()).values
    assert np.array_equal(a, b)


def test_dirac_graph_window_is_per_lambda_smoothing(geo):
    _, s = geo
    T, Lw = 16, 6
    ens, _ = center(ProcessEnsemble(np.random.default_rng(2).standard_normal((3, 30, T))))
    tg = TimeGrid(T)
    win = WindowSpec(L=Lw, graph_kind="dirac")
    est = convolutional_jpsd(ens, s, tg, win).values
    hs = sample_jpsd(ens, s, tg).values
    # reference: circular convolution of each lambda row with |DTFT(w)|^2 on the DFT grid
    t = np.arange(Lw) - Lw // 2
    w = np.sin(0.5 * np.pi * np.cos(np.pi * t / Lw) ** 2)
    g2 = np.abs(np.array([np.sum(w * np.exp(-2j * np.pi * k * np.arange(Lw) / T))
                          for k in range(T)])) ** 2
    ref = np.empty_like(hs)
    for n in range(30):
        for tau in range(T):
            wts = g2[(tau - np.arange(T)) % T]
            ref[n, tau] = np.sum(wts * hs[n]) / wts.sum()
    np.testing.assert_allclose(est, s.group_average(ref), rtol=1e-10)


def test_disc_window_unbiased_for_constant_psd():
    s = eigendecompose(build_laplacian(ring_graph(8)))
    tg = TimeGrid(8)
    model = JpsdModel(JointFilterSpec.constant(2.0))
    win = WindowSpec.disc(1.6)
    ests = []
    for rep in range(200):
        ens, _ = center(generate_jwss(model, s, tg, 5, seed=rep))
        ests.append(convolutional_jpsd(ens, s, tg, win).values)
    # grand-mean removal shaves the DC bin; compare away from it
    m = np.mean(ests, axis=0)
    assert abs(m[1:, 1:].mean() / 2.0 - 1) <= 0.03


def test_repeated_eigenvalue_groups_constant():
    s = eigendecompose(build_laplacian(ring_graph(4)))
    ens, _ = center(ProcessEnsemble(np.random.default_rng(3).standard_normal((2, 4, 6))))
    tg = TimeGrid(6)
    for est in (sample_jpsd(ens, s, tg), convolutional_jpsd(ens, s, tg, WindowSpec(L=4, F=3))):
        np.testing.assert_array_equal(est.values[1], est.values[2])


def test_fast_normaliser_matches_exact():
    L = build_laplacian(random_geometric_graph(60, seed=8))
    s = eigendecompose(L)
    ens, _ = center(ProcessEnsemble(np.random.default_rng(4).standard_normal((1, 60, 8))))
    win = WindowSpec(L=4, F=10)
    lmax = s.lambda_max * 1.01
    est = fast_jpsd(ens, L, TimeGrid(8), EstimatorConfig(win, num_probes=4096), lambda_max=lmax)
    sigma2 = win.sigma2(lmax)
    exact = np.array([np.sum(np.exp(-(s.eigenvalues - c) ** 2 / sigma2) ** 2)
                      for c in win.centers(lmax)])
    np.testing.assert_allclose(est.cg, exact, rtol=0.02)


def test_fast_resolution_warning():
    L = build_laplacian(random_geometric_graph(40, seed=1))
    ens, _ = center(ProcessEnsemble(np.random.default_rng(5).standard_normal((1, 40, 8))))
    with pytest.warns(ResolutionWarning):
        est = fast_jpsd(ens, L, TimeGrid(8), EstimatorConfig(WindowSpec(L=4, F=40), cheb_order=10))
    assert est.warnings and np.all(np.isfinite(est.values))


def test_fast_rejects_bad_windows(geo):
    L, _ = geo
    ens, _ = center(ProcessEnsemble(np.random.default_rng(6).standard_normal((1, 30, 8))))
    with pytest.raises(ValidationError):
        fast_jpsd(ens, L, TimeGrid(8), EstimatorConfig(WindowSpec(L=4, F=31)))
    with pytest.raises(ValidationError):
        fast_jpsd(ens, L, TimeGrid(8), EstimatorConfig(WindowSpec(L=10, F=5)))
    with pytest.raises(ValidationError):
        fast_jpsd(ens, L, TimeGrid(8), EstimatorConfig(WindowSpec.dirac()))


def test_fast_close_to_exact_small():
    L = build_laplacian(random_geometric_graph(80, seed=2))
    s = eigendecompose(L)
    tg = TimeGrid(32)
    model = JpsdModel(exp_separable_jpsd(s.lambda_max))
    ens, _ = center(generate_jwss(model, s, tg, 10, seed=3))
    win = WindowSpec(L=16, F=50)
    fast = fast_jpsd(ens, L, tg, EstimatorConfig(win), seed=0)
    exact = convolutional_jpsd(ens, s, tg, win)
    H = model.grid(s, tg)
    gap = np.linalg.norm(fast.on_grid(s.eigenvalues, tg) - exact.values) / np.linalg.norm(H)
    assert gap <= 0.05


def test_fast_deterministic(geo):
    L, _ = geo
    ens, _ = center(ProcessEnsemble(np.random.default_rng(7).standard_normal((2, 30, 8))))
    cfg = EstimatorConfig(WindowSpec(L=4, F=10), num_probes=20)
    a = fast_jpsd(ens, L, TimeGrid(8), cfg, seed=3).values
    b = fast_jpsd(ens, L, TimeGrid(8), cfg, seed=3).values
    assert np.array_equal(a, b)


def test_fast_symmetric_in_omega(geo):
    L, _ = geo
    ens, _ = center(ProcessEnsemble(np.random.default_rng(8).standard_normal((2, 30, 16))))
    est = fast_jpsd(ens, L, TimeGrid(16), EstimatorConfig(WindowSpec(L=8, F=10)))
    mirror = (-np.arange(8)) % 8
    np.testing.assert_allclose(est.values[:, mirror], est.values, atol=1e-12)
    grid = est.on_grid(np.linspace(0, est.lambdas.max(), 7), TimeGrid(16))
    np.testing.assert_allclose(grid[:, (-np.arange(16)) % 16], grid, atol=1e-10)


def test_evaluate_clamps_outside_range():
    est = PsdEstimate(np.ones((3, 4)), [0.0, 1.0, 2.0], 2 * np.pi * np.arange(4) / 4, "fast", 1)
    out = est.evaluate(np.array([5.0]), np.array([0.3]))
    assert out[0] == pytest.approx(1.0)
    assert any("clamped" in w for w in est.warnings)


def test_bias_bound_trivial_and_disc(geo):
    _, s = geo
    tg = TimeGrid(8)
    theta = (s.eigenvalues[7], tg.omegas[3])
    assert bias_bound(WindowSpec(L=4, F=10), s, tg, 0.0, theta) == 0.0
    for B in (0.5, 1.0, 2.5):
        assert bias_bound(WindowSpec.disc(B), s, tg, 0.7, theta) <= 0.7 * B / 2 + 1e-12
    with pytest.raises(ValidationError):
        bias_bound(WindowSpec.disc(1.0), s, tg, -1.0, theta)
    with pytest.raises(ValidationError):
        bias_bound(WindowSpec.disc(1e-6), s, tg, 1.0, (1.234567, 0.111))


def test_variance_formula_disc_and_single_point(geo):
    _, s = geo
    tg = TimeGrid(8)
    K, h = 7, 1.5
    var = np.full((30, 8), 2 * h**2 / K)
    theta = (s.eigenvalues[10], tg.omegas[2])
    win = WindowSpec.disc(1.0)
    dl = theta[0] - s.eigenvalues[:, None]
    do = np.angle(np.exp(1j * (theta[1] - tg.omegas[None, :])))
    size = int(np.sum(np.hypot(dl, do) <= 0.5 + 1e-12))
    assert variance_formula(win, s, tg, var, theta) == pytest.approx(2 * h**2 / (K * size))
    tiny = WindowSpec.disc(1e-9)
    grid = np.random.default_rng(0).random((30, 8))
    assert variance_formula(tiny, s, tg, grid, theta) == pytest.approx(grid[10, 2])


def test_aic_penalty_and_expectation():
    s = eigendecompose(build_laplacian(random_geometric_graph(12, seed=3)))
    tg = TimeGrid(4)
    model = JpsdModel(JointFilterSpec(lambda lam, om: np.exp(-lam / 4) * (1.5 + np.cos(om))))
    K = 400
    ens = generate_jwss(model, s, tg, K, seed=4)
    H = model.grid(s, tg)
    est = PsdEstimate(H, s.eigenvalues, tg.omegas, "convolutional", K, params={"F": 1, "L": 4})
    a1 = aic_score(ens, est, s, tg)
    # F = 1 -> 2: the 2FL penalty grows by 2L
    a2 = aic_score(ens, est, s, tg, num_params=2 * 4)
    assert a2 - a1 == pytest.approx(2 * 4)
    expected = 2 * 4 + K * np.sum(np.log(2 * np.pi * H) + 1)
    # -2 ln l is a sum of K N T chi-square(1)-like terms; allow 4 standard deviations
    assert abs(a1 - expected) <= 4 * np.sqrt(2 * K * 12 * 4)


def test_aic_rejects_nonpositive(geo):
    _, s = geo
    tg = TimeGrid(4)
    est = PsdEstimate(np.zeros((30, 4)), s.eigenvalues, tg.omegas, "sample", 1)
    with pytest.raises(ValidationError):
        aic_score(ProcessEnsemble(np.zeros((1, 30, 4))), est, s, tg)


def test_aic_selection_near_grid_best():
    L = build_laplacian(random_geometric_graph(60, seed=5))
    s = eigendecompose(L)
    tg = TimeGrid(16)
    model = JpsdModel(exp_separable_jpsd(s.lambda_max))
    H = model.grid(s, tg)
    ens, _ = center(generate_jwss(model, s, tg, 10, seed=6))
    cands = [WindowSpec(L=8, F=F) for F in (10, 50)] + [WindowSpec(L=8, graph_kind="dirac")]
    best, scores = select_window_aic(ens, s, tg, cands)
    errs = [np.linalg.norm(convolutional_jpsd(ens, s, tg, w).values - H) for w, _ in scores]
    assert np.linalg.norm(best.values - H) <= 1.1 * min(errs)


def test_estimate_round_trip(tmp_path, geo):
    L, s = geo
    ens, _ = center(ProcessEnsemble(np.random.default_rng(9).standard_normal((2, 30, 8))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        est = fast_jpsd(ens, L, TimeGrid(8), EstimatorConfig(WindowSpec(L=4, F=10)), seed=2)
    save_estimate(est, tmp_path / "est.json")
    back = load_estimate(tmp_path / "est.json")
    assert np.array_equal(back.values, est.values)
    assert np.array_equal(back.lambdas, est.lambdas) and np.array_equal(back.cg, est.cg)
    assert back.kind == "fast" and back.params["Q"] == 100 and back.params["seed"] == 2
