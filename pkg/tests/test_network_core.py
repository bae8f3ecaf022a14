import itertools

import numpy as np
import pytest
from scipy import stats

from twolift.errors import DimensionMismatch, IsolatedVertex, SameSide
from twolift.network_core import (
    ElectricalNetwork,
    SparseKernel,
    TwoLiftEnvironment,
    build_superposed_kernel,
    builtin_base,
    crossing_probability,
    cycle_network,
    project_quotient,
    random_regular_network,
    read_network_file,
    reversible_kernel,
    sample_matching,
    stationary_measure,
    two_lift_base,
    validate,
    write_network_file,
)


def triangles_env(alpha=1.0, beta=1.0, eta=None):
    base = builtin_base("triangles", 3)
    if eta is None:
        eta = np.array([3, 4, 5, 0, 1, 2])
    return TwoLiftEnvironment(base, eta, alpha, beta)


def random_weighted_env(n, rng, alpha=1.0, beta=1.0):
    """Random 3-regular halves with random conductances."""
    g1 = random_regular_network(n, 3, rng)
    g2 = random_regular_network(n, 3, rng)
    e1 = [(x, y, rng.uniform(0.5, 2.0)) for x, y, _ in g1.edges()]
    e2 = [(x, y, rng.uniform(0.5, 2.0)) for x, y, _ in g2.edges()]
    base = two_lift_base(ElectricalNetwork.from_edges(n, e1), ElectricalNetwork.from_edges(n, e2))
    return TwoLiftEnvironment(base, sample_matching(n, rng), alpha, beta)


def dense_superposed(env):
    """Entry-by-entry transcription of the two-lift transition rule."""
    m = 2 * env.n
    C = env.base.conductance.toarray()
    c = C.sum(axis=1)
    P = C / c[:, None]
    gam = np.where(np.arange(m) < env.n, env.alpha, env.beta)
    K = np.zeros((m, m))
    for x in range(m):
        u = env.eta[x]
        p = gam[x] * c[x] / (gam[x] * c[x] + gam[u] * c[u])
        for y in range(m):
            if (x < env.n) == (y < env.n):
                K[x, y] = p * P[x, y]
            else:
                K[x, y] = (1 - p) * P[u, y]
    return K


def test_multi_edges_are_aggregated():
    net = ElectricalNetwork.from_edges(3, [(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0)])
    assert net.c(0, 1) == 3.0
    assert net.c(1, 0) == 3.0
    assert net.multiplicity[0, 1] == 2
    assert list(net.degrees()) == [2, 3, 1]


def test_reversible_kernel_triangle():
    P = reversible_kernel(cycle_network(3)).dense()
    assert np.allclose(P, (np.ones((3, 3)) - np.eye(3)) / 2)


def test_reversible_kernel_proportional():
    net = ElectricalNetwork.from_edges(3, [(0, 1, 1.0), (0, 2, 3.0)])
    P = reversible_kernel(net).dense()
    assert P[0, 1] == pytest.approx(0.25)
    assert P[0, 2] == pytest.approx(0.75)


def test_reversible_kernel_detailed_balance():
    rng = np.random.default_rng(3)
    edges = [(x, y, rng.uniform(0.1, 5)) for x in range(20) for y in range(x + 1, 20) if rng.random() < 0.3]
    edges += [(x, (x + 1) % 20, 1.0) for x in range(20)]
    net = ElectricalNetwork.from_edges(20, edges)
    P = reversible_kernel(net).dense()
    pi = net.weights() / net.weights().sum()
    flow = pi[:, None] * P
    assert np.max(np.abs(flow - flow.T)) < 1e-15


def test_isolated_vertex():
    net = ElectricalNetwork.from_edges(3, [(0, 1, 1.0)])
    with pytest.raises(IsolatedVertex):
        reversible_kernel(net)


def test_crossing_probability():
    env = triangles_env()
    assert crossing_probability(env, 0, 3) == pytest.approx(0.5)
    assert crossing_probability(triangles_env(alpha=2.0), 0, 3) == pytest.approx(2 / 3)
    with pytest.raises(SameSide):
        crossing_probability(env, 0, 1)


def test_crossing_probability_symmetry():
    rng = np.random.default_rng(0)
    env = random_weighted_env(10, rng, alpha=1.7, beta=0.4)
    for _ in range(100):
        x = int(rng.integers(10))
        u = int(rng.integers(10, 20))
        assert crossing_probability(env, x, u) + crossing_probability(env, u, x) == pytest.approx(1.0, abs=1e-15)


def test_two_triangles_superposed_entries():
    K = build_superposed_kernel(triangles_env())
    assert np.allclose(K.matrix.data, 0.25)
    assert np.all(np.diff(K.matrix.indptr) == 4)


def test_large_alpha_limit():
    env = triangles_env(alpha=1e6)
    K = build_superposed_kernel(env).dense()
    P = reversible_kernel(env.base).dense()
    for x in range(3):
        for y in range(3):
            assert abs(K[x, y] - P[x, y]) < 1e-5


def test_superposed_kernel_matches_transcription():
    rng = np.random.default_rng(1)
    env = random_weighted_env(8, rng, alpha=1.3, beta=0.7)
    K = build_superposed_kernel(env).dense()
    assert np.max(np.abs(K - dense_superposed(env))) < 1e-15
    assert np.allclose(K.sum(axis=1), 1.0, atol=1e-12)


def test_superposed_kernel_monte_carlo():
    rng = np.random.default_rng(2)
    env = random_weighted_env(8, rng)
    K = dense_superposed(env)
    # per-path simulation: stay/cross, then a base step
    C = env.base.conductance.toarray()
    P = C / C.sum(axis=1)[:, None]
    c = C.sum(axis=1)
    x = 0
    steps = 100_000
    counts = np.zeros(16)
    u = rng.random((steps, 2))
    for k in range(steps):
        eta_x = env.eta[x]
        p = c[x] / (c[x] + c[eta_x])
        if u[k, 0] >= p:
            x_mid = eta_x
        else:
            x_mid = x
        y = int(np.searchsorted(np.cumsum(P[x_mid]), u[k, 1], side="right"))
        if x == 0:
            counts[y] += 1
        x = y
    total = counts.sum()
    expected = K[0] * total
    sigma = np.sqrt(total * K[0] * (1 - K[0]))
    assert np.all(np.abs(counts - expected) <= 3 * sigma + 1e-9)


def test_projection_two_triangles():
    env = triangles_env()
    Q = project_quotient(build_superposed_kernel(env), env.eta).dense()
    assert np.allclose(Q, (np.ones((3, 3)) - np.eye(3)) / 2)
    pi, _ = stationary_measure(env)
    assert np.allclose(pi, 1 / 3)


def test_projection_identity_and_reversibility():
    rng = np.random.default_rng(4)
    env = random_weighted_env(16, rng, alpha=2.0, beta=0.5)
    K = build_superposed_kernel(env).dense()
    Q = project_quotient(build_superposed_kernel(env), env.eta).dense()
    n = env.n
    for x in range(n):
        for y in range(n):
            assert Q[x, y] == pytest.approx(K[x, y] + K[x, env.eta[y]], abs=1e-15)
    pi, _ = stationary_measure(env)
    flow = pi[:, None] * Q
    assert np.max(np.abs(flow - flow.T)) < 1e-12


def test_projection_dimension_mismatch():
    env = triangles_env()
    with pytest.raises(DimensionMismatch):
        project_quotient(build_superposed_kernel(env), env.eta[:4])


def test_stationary_measure_invariance():
    rng = np.random.default_rng(5)
    env = random_weighted_env(32, rng, alpha=0.6, beta=1.9)
    pi, lift = stationary_measure(env)
    Q = project_quotient(build_superposed_kernel(env), env.eta)
    assert np.abs(Q.matrix.T @ pi - pi).sum() < 1e-12
    K = build_superposed_kernel(env)
    assert np.abs(K.matrix.T @ lift - lift).sum() < 1e-12
    scaled = TwoLiftEnvironment(env.base.scaled(7.0), env.eta, env.alpha, env.beta)
    assert np.allclose(stationary_measure(scaled)[0], pi, atol=1e-15)


def test_sample_matching_small():
    eta = sample_matching(1, np.random.default_rng(0))
    assert list(eta) == [1, 0]


def test_sample_matching_uniform():
    rng = np.random.default_rng(6)
    perms = {p: i for i, p in enumerate(itertools.permutations(range(3, 6)))}
    counts = np.zeros(6)
    draws = 60_000
    for _ in range(draws):
        counts[perms[tuple(sample_matching(3, rng)[:3])]] += 1
    sigma = np.sqrt(draws * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - draws / 6) < 4 * sigma)
    assert stats.chisquare(counts).pvalue > 1e-4


def test_sample_matching_deterministic():
    a = sample_matching(50, np.random.default_rng(9))
    b = sample_matching(50, np.random.default_rng(9))
    assert np.array_equal(a, b)
    assert np.array_equal(a[a], np.arange(100))


def test_validate_triangles():
    report = validate(triangles_env())
    assert report.degree_bound == 2
    assert report.ok
    assert report.min_transition == pytest.approx(0.25)


def test_validate_small_component():
    g1 = ElectricalNetwork.from_edges(2, [(0, 1, 1.0)])
    g2 = ElectricalNetwork.from_edges(2, [(0, 1, 1.0)])
    env = TwoLiftEnvironment(two_lift_base(g1, g2), np.array([2, 3, 0, 1]))
    report = validate(env)
    assert any(rule == "H3" and "V1" in where for rule, where in report.violations)
    assert not any(rule == "H3" and "V2" in where for rule, where in report.violations)


def test_validate_random_regular_min_transition():
    rng = np.random.default_rng(7)
    base = builtin_base("random-regular(3)", 64, rng)
    env = TwoLiftEnvironment(base, sample_matching(64, rng), 1.5, 1.0)
    report = validate(env)
    assert report.degree_bound == 3
    assert report.ok
    K = dense_superposed(env)
    assert report.min_transition == pytest.approx(K[K > 0].min(), abs=1e-15)


def test_network_file_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    env = random_weighted_env(6, rng)
    path = tmp_path / "net.txt"
    write_network_file(path, env.base, env.eta)
    net, eta = read_network_file(path)
    assert np.array_equal(eta, env.eta)
    assert abs(net.conductance - env.base.conductance).max() == 0


def test_kernel_rejects_non_stochastic():
    import scipy.sparse as sp

    with pytest.raises(ValueError):
        SparseKernel(sp.csr_matrix(np.array([[0.5, 0.4], [0.5, 0.5]])))
