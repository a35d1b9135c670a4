import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from jwss.experiments import estimator_metrics
from jwss.graph import GraphTopology, build_laplacian, eigendecompose, random_geometric_graph
from jwss.harmonic import JointDomain, JointFilterSpec, TimeGrid, apply_joint_filter_exact, ijft, jft
from jwss.process import ProcessEnsemble
from jwss.psd import center, sample_jpsd
from jwss.recovery import RecoveryProblem, apply_sigma_y, make_mask, wiener_filter

SETTINGS = settings(max_examples=40, deadline=None,
                    suppress_health_check=[HealthCheck.function_scoped_fixture])


@st.composite
def weighted_graphs(draw, max_n=9):
    n = draw(st.integers(2, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    weights = draw(st.lists(st.floats(0.01, 10.0), min_size=len(pairs), max_size=len(pairs)))
    edges = [(i, j, w) for (i, j), k, w in zip(pairs, keep, weights) if k]
    return GraphTopology.from_edges(n, edges)


@SETTINGS
@given(weighted_graphs())
def test_laplacian_psd_symmetric_zero_rows(g):
    L = build_laplacian(g)
    n = g.num_vertices
    assert np.all(L @ np.ones(n) == 0.0)
    assert abs(L - L.T).max() == 0
    s = eigendecompose(L)
    assert s.eigenvalues.min() >= 0.0
    assert np.all(np.diff(s.eigenvalues) >= 0)


@SETTINGS
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_jft_unitary_and_invertible(t, seed):
    s = eigendecompose(build_laplacian(random_geometric_graph(8, seed=seed % 7)))
    X = np.random.default_rng(seed).standard_normal((8, t))
    Xh = jft(X, s)
    assert np.isclose(np.linalg.norm(Xh), np.linalg.norm(X), rtol=1e-10)
    np.testing.assert_allclose(ijft(Xh, s), X, atol=1e-10 * max(1.0, np.abs(X).max()))


@SETTINGS
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 1000))
def test_joint_filters_commute(a, b, seed):
    s = eigendecompose(build_laplacian(random_geometric_graph(10, seed=1)))
    tg = TimeGrid(6)
    h1 = JointFilterSpec(lambda lam, om: np.exp(-a * lam) * (2 + np.cos(om)))
    h2 = JointFilterSpec(lambda lam, om: 1.0 / (1.0 + b * lam + om**2))
    X = np.random.default_rng(seed).standard_normal((10, 6))
    ab = apply_joint_filter_exact(h1, apply_joint_filter_exact(h2, X, s, tg), s, tg)
    ba = apply_joint_filter_exact(h2, apply_joint_filter_exact(h1, X, s, tg), s, tg)
    np.testing.assert_allclose(ab, ba, atol=1e-10)


@SETTINGS
@given(st.integers(1, 20), st.integers(1, 20), st.floats(0.0, 1.0), st.integers(0, 99))
def test_interpolation_mask_count(n, t, p_d, seed):
    m = make_mask("interpolation", n, t, p_d=p_d, seed=seed)
    assert int((m == 0).sum()) == int(round(p_d * n * t))
    assert set(np.unique(m)) <= {0.0, 1.0}


@SETTINGS
@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
def test_denoising_wiener_in_unit_interval(hx, hw):
    f = wiener_filter(JointFilterSpec.constant(hx), JointFilterSpec.constant(hw))
    v = f(np.array([0.5]), np.array([0.1]))[0]
    assert 0.0 <= v <= 1.0 + 1e-15


@SETTINGS
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_metric_triangle_inequalities(reps, seed):
    rng = np.random.default_rng(seed)
    H = rng.random((3, 4)) + 0.1
    est = H + rng.standard_normal((reps, 3, 4))
    m = estimator_metrics(est, H)
    assert m["bias"] <= m["error"] + 1e-12
    assert m["error"] <= m["bias"] + m["variance"] + 1e-12


@SETTINGS
@given(st.integers(1, 5), st.integers(2, 9), st.integers(0, 10_000))
def test_sample_estimate_nonnegative_and_symmetric(k, t, seed):
    s = eigendecompose(build_laplacian(random_geometric_graph(7, seed=2)))
    ens, _ = center(ProcessEnsemble(np.random.default_rng(seed).standard_normal((k, 7, t))))
    est = sample_jpsd(ens, s, TimeGrid(t))
    assert np.all(est.values >= 0)
    np.testing.assert_allclose(est.values[:, (-np.arange(t)) % t], est.values, atol=1e-10)


@SETTINGS
@given(st.floats(-5, 5), st.integers(0, 10_000))
def test_center_idempotent(shift, seed):
    X = np.random.default_rng(seed).standard_normal((2, 3, 4)) + shift
    once, _ = center(ProcessEnsemble(X))
    twice, c2 = center(once)
    assert abs(c2) < 1e-12
    np.testing.assert_allclose(twice.samples, once.samples, atol=1e-12)


@SETTINGS
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_sigma_y_symmetric(p_d, noise, seed):
    L = build_laplacian(random_geometric_graph(9, seed=3))
    dom = JointDomain(L, TimeGrid(5), spectrum=eigendecompose(L))
    h = JointFilterSpec(lambda lam, om: np.exp(-lam) * (1.5 + np.cos(om)))
    mask = make_mask("interpolation", 9, 5, p_d=p_d, seed=seed)
    p = RecoveryProblem(dom, mask, h, np.zeros((9, 5)), JointFilterSpec.constant(noise))
    u, v = np.random.default_rng(seed).standard_normal((2, 9, 5))
    lhs = np.sum(u * apply_sigma_y(p, v))
    rhs = np.sum(apply_sigma_y(p, u) * v)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
