import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path

from twolift.errors import DimensionMismatch, NotMixing
from twolift.finite_chain import (
    ChainTables,
    PathClassParams,
    SmallRangeMetric,
    Trajectory,
    classify_path,
    crossings,
    cutoff_ratio,
    default_radius,
    entropy_witness,
    estimate_weight,
    estimate_weight_factor,
    loop_erase,
    loop_erase_edges,
    mixing_profile,
    simulate_trajectory,
    step_distribution,
    tmix_table,
    tv_distance,
)
from twolift.network_core import (
    SparseKernel,
    TwoLiftEnvironment,
    build_superposed_kernel,
    builtin_base,
    project_quotient,
    sample_matching,
    stationary_measure,
)


def kernel(a):
    return SparseKernel(sp.csr_matrix(np.asarray(a, dtype=float)))


def random_kernel(m, rng, density=0.5):
    a = rng.random((m, m)) * (rng.random((m, m)) < density)
    a += np.eye(m) * 0.1
    return a / a.sum(axis=1, keepdims=True)


def triangles_env():
    return TwoLiftEnvironment(builtin_base("triangles", 3), np.array([3, 4, 5, 0, 1, 2]))


def cycle_env(n, seed):
    rng = np.random.default_rng(seed)
    return TwoLiftEnvironment(builtin_base("cycle", n), sample_matching(n, rng))


def test_step_distribution_examples():
    K = kernel(np.full((3, 3), 1 / 3))
    assert np.allclose(step_distribution(K, np.ones(3) / 3), 1 / 3)
    perm = kernel(np.eye(3)[[1, 2, 0]])
    assert np.array_equal(step_distribution(perm, np.array([1.0, 0, 0])), [0, 1.0, 0])
    with pytest.raises(DimensionMismatch):
        step_distribution(perm, np.ones(4) / 4)


def test_step_distribution_dense_oracle():
    rng = np.random.default_rng(0)
    A = random_kernel(10, rng)
    K = kernel(A)
    d = rng.random(10)
    d /= d.sum()
    dense = d.copy()
    for _ in range(20):
        d = step_distribution(K, d)
        dense = dense @ A
    assert np.max(np.abs(d - dense)) < 1e-12
    assert abs(d.sum() - 1) < 1e-12


def test_tv_examples():
    mu = np.array([0.2, 0.3, 0.5])
    assert tv_distance(mu, mu) == 0
    assert tv_distance(np.array([1.0, 0, 0, 0]), np.ones(4) / 4) == pytest.approx(0.75)
    assert tv_distance(np.array([0.5, 0.5, 0]), np.array([0, 0.5, 0.5])) == pytest.approx(0.5)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_tv_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.dirichlet(np.ones(6), size=3)
    assert tv_distance(a, b) == pytest.approx(tv_distance(b, a), abs=1e-15)
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-12
    assert 0 <= tv_distance(a, b) <= 1


def test_mixing_profile_two_state():
    prof = mixing_profile(kernel([[0.5, 0.5], [0.5, 0.5]]), 0, np.array([0.5, 0.5]), 3)
    assert prof.tv[0] == pytest.approx(0.5)
    assert prof.tv[1] == pytest.approx(0.0)
    assert prof.tmix[0.25] == 1


def test_mixing_profile_periodic():
    prof = mixing_profile(kernel([[0, 1], [1, 0]]), 0, np.array([0.5, 0.5]), 10)
    assert np.allclose(prof.tv, 0.5)
    assert prof.tmix[0.25] is None


def test_mixing_profile_quotient_dense_oracle():
    env = triangles_env()
    Q = project_quotient(build_superposed_kernel(env), env.eta)
    pi, _ = stationary_measure(env)
    prof = mixing_profile(Q, 0, pi, 15)
    A = Q.dense()
    row = np.eye(3)[0]
    for t in range(16):
        assert abs(prof.tv[t] - 0.5 * np.abs(row - pi).sum()) < 1e-12
        row = row @ A


def test_mixing_profile_monotone_for_lazy_kernel():
    rng = np.random.default_rng(1)
    C = rng.random((8, 8))
    C = C + C.T + 8 * np.eye(8)
    A = C / C.sum(axis=1, keepdims=True)
    pi = C.sum(axis=1) / C.sum()
    for x in range(8):
        tv = mixing_profile(kernel(A), x, pi, 30).tv
        assert np.all(np.diff(tv[1:]) <= 1e-12)


def brute_force_ratio(Q, pi, eps):
    slow = max(mixing_profile(Q, x, pi, 200, (eps,)).tmix[eps] for x in range(Q.dimension))
    fast = min(mixing_profile(Q, x, pi, 200, (1 - eps,)).tmix[1 - eps] for x in range(Q.dimension))
    if fast == 0:
        return float("inf") if slow else 1.0
    return slow / fast


def test_cutoff_ratio_trivial_and_brute_force():
    assert cutoff_ratio(kernel([[1.0]]), np.array([1.0])) == 1.0
    env = triangles_env()
    Q = project_quotient(build_superposed_kernel(env), env.eta)
    pi, _ = stationary_measure(env)
    # TV starts at 2/3 < 0.75, so the fast time is 0 and the ratio is unbounded
    assert cutoff_ratio(Q, pi, 0.25) == brute_force_ratio(Q, pi, 0.25) == float("inf")
    env = cycle_env(16, 2)
    Q = project_quotient(build_superposed_kernel(env), env.eta)
    pi, _ = stationary_measure(env)
    assert cutoff_ratio(Q, pi, 0.25) == brute_force_ratio(Q, pi, 0.25)


def test_cutoff_ratio_not_mixing():
    with pytest.raises(NotMixing):
        cutoff_ratio(kernel([[0, 1], [1, 0]]), np.array([0.5, 0.5]), t_max=50)


def test_tmix_table_matches_single_profiles():
    env = cycle_env(16, 3)
    Q = project_quotient(build_superposed_kernel(env), env.eta)
    pi, _ = stationary_measure(env)
    table, curves = tmix_table(Q, pi, [0.25, 0.75], 200)
    for x in range(16):
        prof = mixing_profile(Q, x, pi, 200, (0.25, 0.75))
        assert table[x, 0] == prof.tmix[0.25]
        assert table[x, 1] == prof.tmix[0.75]
        assert np.allclose(curves[:, x], prof.tv[: len(curves)], atol=1e-12)


def test_projection_contracts_tv():
    env = cycle_env(12, 4)
    K = build_superposed_kernel(env)
    Q = project_quotient(K, env.eta)
    pi, lift = stationary_measure(env)
    for x in range(12):
        full = mixing_profile(K, x, lift, 40).tv
        quot = mixing_profile(Q, x, pi, 40).tv
        assert np.all(quot <= full + 1e-12)


def test_simulate_trajectory_basics():
    env = triangles_env()
    rng = np.random.default_rng(0)
    traj = simulate_trajectory(env, 2, 0, rng)
    assert list(traj.states) == [2]
    a = simulate_trajectory(env, 1, 50, np.random.default_rng(11))
    b = simulate_trajectory(env, 1, 50, np.random.default_rng(11))
    assert np.array_equal(a.states, b.states)
    assert len(a.states) == 101


def test_simulate_one_step_law():
    env = cycle_env(4, 5)
    K = build_superposed_kernel(env).dense()
    tables = ChainTables.from_env(env)
    rng = np.random.default_rng(12)
    samples = 100_000
    counts = np.zeros(8)
    for _ in range(samples):
        counts[simulate_trajectory(env, 1, 1, rng, tables).states[2]] += 1
    sigma = np.sqrt(samples * K[1] * (1 - K[1]))
    assert np.all(np.abs(counts - samples * K[1]) <= 3 * sigma + 1e-9)


def reduce_by_pairs(edges):
    """Independent oracle: repeatedly cancel adjacent (e, reversed e) pairs."""
    edges = list(edges)
    changed = True
    while changed:
        changed = False
        for i in range(len(edges) - 1):
            if edges[i + 1] == edges[i][::-1]:
                del edges[i:i + 2]
                changed = True
                break
    return tuple(edges)


def test_loop_erase_examples():
    assert len(loop_erase(Trajectory(np.array([0, 0, 1, 1, 2])))) == 0
    # cross 0->3, step 3->4 ... and immediately back over the same edge
    traj = Trajectory(np.array([0, 3, 3, 0, 0]))
    assert len(loop_erase(traj)) == 0


def test_loop_erase_matches_pair_reduction():
    env = cycle_env(6, 6)
    rng = np.random.default_rng(13)
    for _ in range(50):
        traj = simulate_trajectory(env, int(rng.integers(12)), 200, rng)
        raw = [(a, b) for _, a, b in crossings(traj)]
        assert loop_erase(traj).edges == reduce_by_pairs(raw)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)).filter(lambda e: e[0] != e[1]), max_size=30))
def test_loop_erase_idempotent(edges):
    once = loop_erase_edges(edges).edges
    assert loop_erase_edges(once).edges == once


# ---------------------------------------------------------------- classify


def oracle_classify(traj, params, env):
    """Brute-force re-scan of the three rules."""
    s = traj.states
    dist = shortest_path(env.base.conductance, unweighted=True, directed=False)
    deviation = None
    for k in range(len(s)):
        prefix = Trajectory(s[: k + 1])
        trace = loop_erase(prefix).edges
        center = trace[-1][1] if trace else s[0]
        if dist[center, s[k]] >= params.radius:
            deviation = k
            break
    cr = crossings(traj)
    edges = [(a, b) for _, a, b in cr]
    backtrack = None
    for j in range(len(edges)):
        found = False
        for i in range(j + 1):
            l, rem = divmod(j - i + 1, 2)
            if rem or l < params.backtrack:
                continue
            first = edges[i:i + l]
            if len(set(first)) == l and all(edges[i + l + t] == first[l - 1 - t][::-1] for t in range(l)):
                found = True
        if found:
            backtrack = cr[j][0] + 1
            break
    regen = []
    for idx, (tick, a, b) in enumerate(cr):
        if any({a, b} == {c, d} for _, c, d in cr[:idx]):
            continue
        ok = True
        for j in range(idx + 1, len(cr) + 1):
            rel = loop_erase_edges(edges[idx + 1:j]).edges
            if len(rel) >= params.backtrack:
                break
            if j < len(cr) and not rel and edges[j] == (b, a):
                ok = False
                break
        if ok:
            regen.append(tick + 1)
    return deviation, backtrack, regen


def test_classify_member_example():
    env = triangles_env()
    # cross once from 0 to 3 then wander in the second triangle
    traj = Trajectory(np.array([0, 3, 4, 4, 5, 5, 3]))
    rep = classify_path(traj, PathClassParams(3, 2, 5), SmallRangeMetric(env.base))
    assert rep.member
    assert rep.regeneration_ticks == [1]


def test_classify_deviation_example():
    env = cycle_env(16, 7)
    # five base steps along the cycle without crossing
    traj = Trajectory(np.array([0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5]))
    rep = classify_path(traj, PathClassParams(4, 3, 100), SmallRangeMetric(env.base))
    assert rep.deviation_tick == 8
    assert not rep.member


def test_classify_matches_rescan_oracle():
    env = cycle_env(32, 8)
    metric = SmallRangeMetric(env.base)
    rng = np.random.default_rng(14)
    for case in range(1000):
        params = PathClassParams(int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 12)))
        traj = simulate_trajectory(env, int(rng.integers(64)), int(rng.integers(1, 30)), rng)
        rep = classify_path(traj, params, metric)
        dev, back, regen = oracle_classify(traj, params, env)
        assert rep.deviation_tick == dev, case
        assert rep.backtrack_tick == back, case
        assert rep.regeneration_ticks == regen, case


def test_default_radius():
    assert default_radius(2048) == 11
    assert default_radius(10_000) == 12


# ------------------------------------------------------------------ weights


def exact_first_edge_weights(env, x):
    """backtrack=1, no deviation: law of the first crossed edge via an absorbing linear solve."""
    tables = ChainTables.from_env(env)
    side = range(0, env.n) if x < env.n else range(env.n, 2 * env.n)
    idx = {v: i for i, v in enumerate(side)}
    m = len(idx)
    P = np.zeros((m, m))
    Pb = env.base.conductance.toarray()
    Pb = Pb / Pb.sum(axis=1, keepdims=True)
    for v, i in idx.items():
        for w, j in idx.items():
            P[i, j] = tables.stay[v] * Pb[v, w]
    A = np.eye(m) - P
    out = {}
    for v, i in idx.items():
        b = np.zeros(m)
        b[i] = 1 - tables.stay[v]
        h = np.linalg.solve(A, b)
        out[(v, int(env.eta[v]))] = h[idx[x]]
    return out


def test_estimate_weight_empty():
    env = triangles_env()
    est = estimate_weight(env, 0, [], 2, 1, 10, np.random.default_rng(0))
    assert est.value == 1.0


def test_estimate_weight_linear_solve_oracle():
    env = triangles_env()
    exact = exact_first_edge_weights(env, 0)
    rng = np.random.default_rng(15)
    for edge, w in exact.items():
        est = estimate_weight(env, 0, [edge], 3, 1, 4000, rng)
        p, lo, hi, base = est.factors[0]
        assert base == 4000
        half = max(hi - p, p - lo)
        assert abs(p - w) <= 1.5 * half


def test_first_edge_weights_sum_at_most_one():
    for seed in range(3):
        env = cycle_env(8, 20 + seed)
        rng = np.random.default_rng(seed)
        _, base, hist = estimate_weight_factor(env, 1, None, 2, 2, 2000, rng, False)
        total = sum(hist.values()) / base
        assert total <= 1.0 + 1e-12


def test_entropy_witness_edge_cases():
    env = triangles_env()
    rng = np.random.default_rng(16)
    assert entropy_witness(env, 0, 0, 0.5, 50, rng, radius=3, backtrack=1) == 1.0
    assert entropy_witness(env, 0, 2, 1e-9, 50, rng, radius=3, backtrack=1, inner=200) == 1.0


def test_entropy_witness_theta_one_counts_empty_traces():
    env = triangles_env()
    tables = ChainTables.from_env(env)
    samples = 400
    rng = np.random.default_rng(17)
    got = entropy_witness(env, 0, 2, 1.0, samples, rng, radius=3, backtrack=1, inner=50)
    rng = np.random.default_rng(17)
    empty = 0
    for _ in range(samples):
        traj = simulate_trajectory(env, 0, 2, rng, tables)
        trace = loop_erase(traj)
        if len(trace) == 0:
            empty += 1
        else:
            estimate_weight(env, 0, trace.edges, 3, 1, 50, rng)
    assert got == empty / samples
