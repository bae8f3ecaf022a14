import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path

from twolift.coupling import CouplingContext, coupled_generate, cycle_scan, failure_rate_curve
from twolift.network_core import builtin_base, cycle_network, pairing_network, two_lift_base


def distance_matrix(base):
    return shortest_path(base.conductance, unweighted=True, directed=False)


def enumerate_cycles(dist, edges, radius):
    """Every sequence of distinct oriented edges obeying the hop rule, checked for closure."""
    oriented = [(k, e) for k, (a, b) in enumerate(edges) for e in ((a, b), (b, a))]

    def grow(path, used):
        if len(path) >= 2 and dist[path[-1][1], path[0][0]] <= radius:
            return True
        for k, (a, b) in oriented:
            if k in used or dist[path[-1][1], a] > radius:
                continue
            if grow(path + [(a, b)], used | {k}):
                return True
        return False

    return any(grow([e], {k}) for k, e in oriented)


def valid_witness(dist, edges, radius, witness):
    keys = [frozenset(e) for e in witness]
    if len(witness) < 2 or len(set(keys)) != len(keys) or not set(keys) <= {frozenset(e) for e in edges}:
        return False
    hops = all(dist[witness[i][1], witness[i + 1][0]] <= radius for i in range(len(witness) - 1))
    return hops and dist[witness[-1][1], witness[0][0]] <= radius


# --------------------------------------------------------------- cycle_scan


def test_tree_shaped_exploration_has_no_cycle():
    base = builtin_base("cycle", 30)
    # edges hanging off far-apart points of the cycle
    edges = [(0, 30), (10, 40), (20, 50)]
    assert cycle_scan(base, edges, 2) == (False, None)


def test_two_parallel_edges_form_a_cycle():
    base = builtin_base("cycle", 30)
    found, witness = cycle_scan(base, [(0, 30), (1, 31)], 1)
    assert found and len(witness) == 2
    assert valid_witness(distance_matrix(base), [(0, 30), (1, 31)], 1, witness)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 10), st.integers(1, 3))
def test_scan_matches_enumeration(seed, k, radius):
    rng = np.random.default_rng(seed)
    n = 14
    base = two_lift_base(cycle_network(n), pairing_network(n))
    a = rng.choice(n, size=k, replace=False)
    b = rng.choice(np.arange(n, 2 * n), size=k, replace=False)
    edges = [(int(x), int(y)) for x, y in zip(a, b)]
    dist = distance_matrix(base)
    found, witness = cycle_scan(base, edges, radius)
    assert found == enumerate_cycles(dist, edges, radius)
    if found:
        assert valid_witness(dist, edges, radius, witness)


# ------------------------------------------------------------ coupled runs


def test_zero_ticks():
    run = coupled_generate(builtin_base("cycle", 10), 1, 1, 3, 0, 2, np.random.default_rng(0))
    assert run.tau is None and run.finite.tolist() == [3] and run.tree.tolist() == [3] and run.explored == 0


def test_rejects_negative_L():
    with pytest.raises(ValueError):
        coupled_generate(builtin_base("cycle", 10), 1, 1, 0, 5, -1, np.random.default_rng(0))


def first_scan_tick(base, run, radius, max_edges):
    for j in range(1, len(run.revealed) + 1):
        if cycle_scan(base, [(v, w) for _, v, w in run.revealed[:j]], radius, max_edges)[0]:
            return run.revealed[j - 1][0]
    return None


def test_tiny_graph_fails_and_matches_post_hoc_scan():
    base = two_lift_base(pairing_network(2), pairing_network(2))
    kinds = set()
    for s in range(200):
        run = coupled_generate(base, 1, 1, s % 4, 400, 2, np.random.default_rng(s))
        assert run.tau is not None
        kinds.add(run.kind)
        scan_tick = first_scan_tick(base, run, 1, 5)
        if run.kind == "cycle":
            assert run.tau == scan_tick
        else:
            assert scan_tick is None or scan_tick >= run.tau
    assert "cycle" in kinds


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.sampled_from([8, 20, 60]))
def test_agreement_before_failure(seed, n):
    base = builtin_base("cycle", n)
    run = coupled_generate(base, 1.0, 2.0, seed % (2 * n), 300, 2, np.random.default_rng(seed))
    stop = len(run.finite) if run.tau is None else run.tau + 1
    assert np.array_equal(run.finite[:stop], run.tree[:stop])
    if run.kind == "cycle":
        before = [(v, w) for t, v, w in run.revealed if t < run.tau]
        upto = [(v, w) for t, v, w in run.revealed if t <= run.tau]
        radius = CouplingContext(base, 1.0, 2.0).radius
        assert not cycle_scan(base, before, radius, 5)[0] and cycle_scan(base, upto, radius, 5)[0]


def test_finite_side_is_a_matching():
    run = coupled_generate(builtin_base("cycle", 6), 1, 1, 0, 2000, 1, np.random.default_rng(3))
    ends = [v for _, a, b in run.revealed for v in (a, b)]
    assert len(ends) == len(set(ends))
    assert all((a < 6) != (b < 6) for _, a, b in run.revealed)


# ----------------------------------------------------------- failure curve


def test_curve_zero_ticks():
    rows = failure_rate_curve(builtin_base("cycle", 50), 1, 1, 2, [0], 20, 0)
    assert rows[0].rate == 0


def test_curve_monotone_in_ticks():
    rows = failure_rate_curve(builtin_base("cycle", 100), 1, 1, 2, [10, 40, 160], 100, 1)
    rates = [r.rate for r in rows]
    assert rates == sorted(rates)


def test_curve_decreases_with_n():
    rows = failure_rate_curve(lambda n: builtin_base("cycle", n), 1, 1, 3, [100], 400, 2, ns=[200, 3200])
    small, large = rows
    assert large.rate < small.rate
