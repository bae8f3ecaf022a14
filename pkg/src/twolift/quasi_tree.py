"""Random quasi-trees grown on demand, the walk on them, and rate estimators.

Every component of the tree is named by a 64-bit key derived by hashing from
the environment seed, so the whole infinite tree is a pure function of that
seed. ``LazyQuasiTree`` stores materialized vertices in a table; the compiled
estimators in ``_qt_kernels`` walk the same tree while keeping only the stack
of components between the root and the current position.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _qt_kernels as K
from .errors import DegenerateTrace, InsufficientSamples, OutOfBudget
from .network_core import ElectricalNetwork, reversible_kernel
from .stats import mean_and_stderr, ratio_estimate, wilson_interval

UNASSIGNED = -1
DEFAULT_MAX_VERTICES = 10_000_000
DEFAULT_CERT = 10
DEFAULT_BUDGET = 512
MAX_RADIUS = 254


# --------------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class QuasiTreeModel:
    """Base network with (alpha, beta) turned into the flat tables the walk uses.

    ``weight[x]`` is gamma(x) c(x); a vertex of type x paired with type b stays
    with probability weight[x] / (weight[x] + weight[b]).
    """

    base: ElectricalNetwork
    alpha: float
    beta: float
    weight: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    cum: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, base: ElectricalNetwork, alpha: float = 1.0, beta: float = 1.0) -> "QuasiTreeModel":
        if base.vertex_count % 2:
            raise ValueError("two-lift base needs an even number of vertices")
        if alpha <= 0 or beta <= 0:
            raise ValueError("alpha and beta must be positive")
        n = base.vertex_count // 2
        P = reversible_kernel(base).matrix
        cum = np.empty_like(P.data)
        for x in range(P.shape[0]):
            lo, hi = P.indptr[x], P.indptr[x + 1]
            cum[lo:hi] = np.cumsum(P.data[lo:hi])
            cum[hi - 1] = 1.0
        gamma = np.r_[np.full(n, float(alpha)), np.full(n, float(beta))]
        return cls(base, float(alpha), float(beta), gamma * base.weights(), P.indptr.astype(np.int64),
                   P.indices.astype(np.int64), cum, base.component_labels())

    @property
    def n(self) -> int:
        return self.base.vertex_count // 2

    def stay(self, x: int, b: int) -> float:
        return float(self.weight[x] / (self.weight[x] + self.weight[b]))

    def base_step(self, x: int, u: float) -> int:
        lo, hi = self.indptr[x], self.indptr[x + 1]
        j = lo + int(np.searchsorted(self.cum[lo:hi], u, side="right"))
        return int(self.indices[min(j, hi - 1)])

    def distances(self, cap: int) -> np.ndarray:
        """Small-range distances capped at ``cap`` (values beyond stored as cap + 1)."""
        if not 1 <= cap <= MAX_RADIUS:
            raise ValueError(f"radius must lie in [1, {MAX_RADIUS}]")
        return _distances(self, cap)

    def kernel_args(self):
        return self.weight, self.indptr, self.indices, self.cum


@functools.lru_cache(maxsize=8)
def _distances(model: QuasiTreeModel, cap: int) -> np.ndarray:
    return K.capped_distances(model.indptr, model.indices, cap)


def as_model(base, alpha: float = 1.0, beta: float = 1.0) -> QuasiTreeModel:
    return base if isinstance(base, QuasiTreeModel) else QuasiTreeModel.build(base, alpha, beta)


# ---------------------------------------------------------------- lazy tree


class QTVertex(NamedTuple):
    id: int
    type: int
    center: int
    partner: int


@dataclass
class _Component:
    key: int
    center: int
    depth: int
    parent: int  # vertex id the component hangs from, -1 for the root component
    members: dict[int, int]


class LazyQuasiTree:
    """Quasi-tree materialized vertex by vertex.

    Parameters
    ----------
    model
        Base tables.
    env_seed
        Names the environment; the tree is a deterministic function of it.
    max_vertices
        Hard cap on the vertex table; exceeding it raises ``OutOfBudget``.
    """

    def __init__(self, model: QuasiTreeModel, env_seed: int, max_vertices: int = DEFAULT_MAX_VERTICES):
        self.model = model
        self.env_seed = int(env_seed)
        self.max_vertices = max_vertices
        self._type: list[int] = []
        self._comp: list[int] = []
        self._partner: list[int] = []
        self._comps: list[_Component] = []
        key = K.root_key_py(self.env_seed)
        self.root = self._new_component(key, K.root_type_py(self.env_seed, model.n), 0, -1)

    # -- storage
    def __len__(self) -> int:
        return len(self._type)

    def _new_vertex(self, vtype: int, comp: int) -> int:
        if len(self._type) >= self.max_vertices:
            raise OutOfBudget(f"quasi-tree exceeded {self.max_vertices} vertices")
        self._type.append(int(vtype))
        self._comp.append(comp)
        self._partner.append(UNASSIGNED)
        return len(self._type) - 1

    def _new_component(self, key: int, center_type: int, depth: int, parent: int) -> int:
        c = len(self._comps)
        self._comps.append(_Component(key, -1, depth, parent, {}))
        v = self._new_vertex(center_type, c)
        self._comps[c].center = v
        self._comps[c].members[int(center_type)] = v
        if parent >= 0:
            self._partner[v] = parent
            self._partner[parent] = v
        return v

    def member(self, v: int, vtype: int) -> int:
        """Id of the vertex of type ``vtype`` in the component of ``v`` (created if new)."""
        comp = self._comps[self._comp[v]]
        got = comp.members.get(vtype)
        if got is None:
            if self.model.labels[vtype] != self.model.labels[self._type[comp.center]]:
                raise ValueError(f"type {vtype} is not in the small-range component of vertex {v}")
            got = self._new_vertex(vtype, self._comp[v])
            comp.members[int(vtype)] = got
        return got

    # -- queries
    def vertex(self, v: int) -> QTVertex:
        return QTVertex(v, self._type[v], self._comps[self._comp[v]].center, self._partner[v])

    def type(self, v: int) -> int:
        return self._type[v]

    def depth(self, v: int) -> int:
        """Long-range distance from the root."""
        return self._comps[self._comp[v]].depth

    def component_key(self, v: int) -> int:
        return self._comps[self._comp[v]].key

    def center(self, v: int) -> int:
        return self._comps[self._comp[v]].center

    def is_center(self, v: int) -> bool:
        return self.center(v) == v

    def parent_vertex(self, v: int) -> int:
        """Vertex the component of ``v`` hangs from (-1 in the root component)."""
        return self._comps[self._comp[v]].parent

    def long_range_edges(self) -> list[tuple[int, int]]:
        return [(v, p) for v, p in enumerate(self._partner) if p != UNASSIGNED and v < p]

    def partner_id(self, v: int) -> int:
        """Long-range partner of ``v``, materializing it if needed."""
        p = self._partner[v]
        if p != UNASSIGNED:
            return p
        comp = self._comps[self._comp[v]]
        vtype = self._type[v]
        key = K.child_key_py(comp.key, vtype)
        self._new_component(key, K.child_type_py(key, vtype, self.model.n), comp.depth + 1, v)
        return self._partner[v]


def materialize(tree: LazyQuasiTree, vertex: int) -> tuple[int, list[int]]:
    """Assign the long-range partner of ``vertex`` and fill in its small-range component.

    Returns the partner id and the ids of every vertex in the partner's
    component. Calling again returns the same ids.
    """
    p = tree.partner_id(vertex)
    center_type = tree.type(tree.center(p))
    types = np.flatnonzero(tree.model.labels == tree.model.labels[center_type])
    return p, [tree.member(p, int(y)) for y in types]


def qt_step(tree: LazyQuasiTree, state: int, rng: np.random.Generator) -> tuple[int, int]:
    """One whole step from ``state``: (state after the long-range half, state after the small-range half)."""
    return _step(tree, state, rng.random(), rng.random())


def _step(tree: LazyQuasiTree, v: int, u_cross: float, u_move: float) -> tuple[int, int]:
    m = tree.model
    p = tree.partner_id(v)
    mid = v if u_cross < m.stay(tree.type(v), tree.type(p)) else p
    return mid, tree.member(mid, m.base_step(tree.type(mid), u_move))


def walk(tree: LazyQuasiTree, ticks: int, seed: int) -> np.ndarray:
    """Vertex ids at ticks 0..ticks from the root, using the same uniform stream as the compiled walk."""
    out = np.empty(ticks + 1, dtype=np.int64)
    v = tree.root
    out[0] = v
    state = int(seed) & K.MASK
    m = tree.model
    for i in range(ticks):
        u, state = K.uniform_py(state)
        if i % 2 == 0:
            p = tree.partner_id(v)
            if u >= m.stay(tree.type(v), tree.type(p)):
                v = p
        else:
            v = tree.member(v, m.base_step(tree.type(v), u))
        out[i + 1] = v
    return out


# ------------------------------------------------------------ regenerations


@dataclass(frozen=True)
class RegenerationRecord:
    """Crossing at half-integer ``time`` from type ``entry_type`` onto tree level ``level``."""

    time: float
    entry_type: int
    level: int
    censored: bool = False


def detect_regenerations(tree: LazyQuasiTree, path: Sequence[int], cert: int | None = DEFAULT_CERT
                         ) -> list[RegenerationRecord]:
    """Long-range edges crossed exactly once along ``path`` (vertex ids per tick from tick 0).

    A record is censored unless the level later advances by at least ``cert``
    within the path (``cert=None`` disables the check).
    """
    path = [int(v) for v in path]
    depth = [tree.depth(v) for v in path]
    crossings: list[tuple[int, frozenset]] = []
    counts: dict[frozenset, int] = {}
    for i in range(0, len(path) - 1, 2):
        a, b = path[i], path[i + 1]
        if a != b:
            e = frozenset((a, b))
            crossings.append((i, e))
            counts[e] = counts.get(e, 0) + 1
    later_max = list(depth)
    for i in range(len(depth) - 2, -1, -1):
        later_max[i] = max(depth[i], later_max[i + 1])
    out = []
    for i, e in crossings:
        if counts[e] == 1 and depth[i + 1] > depth[i]:
            level = depth[i + 1]
            censored = cert is not None and later_max[i + 1] < level + cert
            out.append(RegenerationRecord((i + 1) / 2, tree.type(path[i]), level, censored))
    return out


# ---------------------------------------------------------------- estimates


@dataclass(frozen=True)
class RateEstimate:
    estimate: float
    stderr: float
    samples: int
    t: float
    lower: float = float("nan")
    upper: float = float("nan")


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63))
    return int(rng)


def replica_streams(seed: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """(environment seeds, walk seeds) for ``count`` replicas, fixed by ``seed`` alone."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    words = np.array([c.generate_state(2, dtype=np.uint64) for c in children], dtype=np.uint64).reshape(count, 2)
    return words[:, 0].copy(), words[:, 1].copy()


def _roots(model: QuasiTreeModel, env_seeds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.array([K.root_key_py(int(s)) for s in env_seeds], dtype=np.uint64)
    types = np.array([K.root_type_py(int(s), model.n) for s in env_seeds], dtype=np.int64)
    return keys, types


def estimate_escape(tree: LazyQuasiTree, vertex: int, horizon: int, samples: int, rng) -> RateEstimate:
    """Probability of staying in the subquasi-tree of ``vertex`` for ``horizon`` whole steps.

    For a non-root center the estimate is the smaller of the runs started at
    whole and at half time.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if horizon == 0:
        return RateEstimate(1.0, 0.0, samples, 0, 1.0, 1.0)
    m = tree.model
    seed = _seed_from(rng)
    comp = tree._comps[tree._comp[vertex]]
    ptype = tree.type(comp.parent) if comp.parent >= 0 else -1
    at_center = tree.is_center(vertex) and comp.parent >= 0
    args = (*m.kernel_args(), m.n, np.uint64(comp.key), tree.type(comp.center), ptype, tree.type(vertex), at_center)
    good = K.escape_runs(*args, False, horizon, samples, np.uint64(seed))
    if at_center:
        other = K.escape_runs(*args, True, horizon, samples, np.uint64(K.mix64_py(seed)))
        good = min(good, other)
    p = good / samples
    lo, hi = wilson_interval(good, samples)
    return RateEstimate(p, math.sqrt(p * (1 - p) / samples), samples, horizon, lo, hi)


def escape_floor_sample(base, alpha: float, beta: float, environments: int, horizon: int, samples: int,
                        seed: int) -> np.ndarray:
    """Root escape estimates over ``environments`` independent trees."""
    model = as_model(base, alpha, beta)
    env, walks = replica_streams(seed, environments)
    keys, types = _roots(model, env)
    good = K.escape_batch(*model.kernel_args(), model.n, keys, types, horizon, samples, walks)
    return good / samples


@dataclass(frozen=True)
class DriftEstimate:
    direct: RateEstimate
    ratio: RateEstimate
    regenerated: int  # replicas with a certified regeneration before t


def _extension(cert: int) -> int:
    return 40 * cert


def estimate_drift(base, alpha: float, beta: float, t: int, samples: int, rng, cert: int = DEFAULT_CERT
                   ) -> DriftEstimate:
    """Long-range speed: mean depth/t, and mean(L_N)/mean(T_N) at the last regeneration before t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        zero = RateEstimate(0.0, 0.0, samples, 0)
        return DriftEstimate(zero, zero, 0)
    model = as_model(base, alpha, beta)
    env, walks = replica_streams(_seed_from(rng), samples)
    keys, types = _roots(model, env)
    depth, rtick, rlevel = K.drift_batch(*model.kernel_args(), model.n, keys, types, 2 * t, _extension(cert), cert,
                                         walks)
    m, se = mean_and_stderr(depth / t)
    r, rse = ratio_estimate(rlevel, rtick / 2)
    return DriftEstimate(RateEstimate(m, se, samples, t), RateEstimate(r, rse, samples, t), int(np.sum(rtick > 0)))


@dataclass(frozen=True)
class EntropyEstimate:
    h: RateEstimate
    std: float  # empirical std of -log(w)/t over trajectories
    std_scaled: float  # std * sqrt(t)
    ratio: RateEstimate  # trace weight up to the last regeneration over its time
    degenerate: int
    floored: int  # factors clamped at the floor
    factors: int
    statistic: np.ndarray = field(repr=False, default=None)


def estimate_entropy_rate(base, alpha: float, beta: float, t: int, radius: int, backtrack: int, samples: int, rng,
                          budget: int = DEFAULT_BUDGET, cert: int = DEFAULT_CERT, max_ticks: int = 100_000
                          ) -> EntropyEstimate:
    """Entropy rate from -log of the nested Monte Carlo weight of each realized trace, divided by t.

    Each factor uses ``budget`` inner runs and is clamped below at
    1/(2 budget). Trajectories with an empty trace are excluded and counted.
    """
    if t < 1 or radius < 1 or backtrack < 1:
        raise ValueError("t, radius and backtrack must be at least 1")
    model = as_model(base, alpha, beta)
    dist = model.distances(radius)
    env, walks = replica_streams(_seed_from(rng), samples)
    keys, types = _roots(model, env)
    floor = 1.0 / (2 * budget)
    total, length, prefix, rtick, rlevel, floored = K.entropy_batch(
        *model.kernel_args(), dist, model.n, keys, types, 2 * t, _extension(cert), cert, radius, backtrack, budget, walks,
        max_ticks, floor)
    keep = length > 0
    degenerate = int(np.sum(~keep))
    if not keep.any():
        raise DegenerateTrace("every sampled trace was empty")
    stat = total[keep] / t
    h, se = mean_and_stderr(stat)
    std = float(np.std(stat, ddof=1)) if len(stat) > 1 else float("nan")
    r, rse = ratio_estimate(prefix, rtick / 2)
    return EntropyEstimate(RateEstimate(h, se, int(keep.sum()), t), std, std * math.sqrt(t),
                           RateEstimate(r, rse, samples, t), degenerate, int(floored.sum()), int(length.sum()),
                           stat)


# ---------------------------------------------------------- regeneration chain


@dataclass(frozen=True)
class TailFit:
    gaps: np.ndarray
    tail: np.ndarray
    slope: float
    intercept: float
    r2: float


def exponential_tail_fit(values: np.ndarray, min_count: int = 10) -> TailFit:
    """Regress log P[G >= g] on g over values of g seen at least ``min_count`` times in the tail."""
    values = np.asarray(values)
    support = np.unique(values)
    tail = np.array([np.mean(values >= g) for g in support])
    hits = tail * len(values)
    keep = hits >= min_count
    x, y = support[keep].astype(float), np.log(tail[keep])
    if len(x) < 3:
        raise InsufficientSamples("too few distinct gap values for a tail fit")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return TailFit(x, np.exp(y), float(slope), float(intercept), r2)


@dataclass(frozen=True)
class RegenStats:
    counts: np.ndarray  # transitions Y_j -> Y_{j+1}
    transitions: np.ndarray  # row-normalized counts, nan rows where unobserved
    doeblin: float
    gaps: np.ndarray  # T_2 - T_1 per replica
    tail: TailFit
    complete: int  # replicas with k certified regenerations


def regeneration_table(base, alpha: float, beta: float, k: int, samples: int, rng, cert: int = DEFAULT_CERT,
                       ticks: int | None = None):
    """First ``k`` certified regenerations per replica: (times, entry types, levels, count) arrays."""
    model = as_model(base, alpha, beta)
    ticks = ticks if ticks is not None else 2 * 20 * (k + cert)
    env, walks = replica_streams(_seed_from(rng), samples)
    keys, types = _roots(model, env)
    tick, level, frm, count = K.regen_first_k(*model.kernel_args(), model.n, keys, types, ticks, cert, k, walks)
    return (tick + 1) / 2, frm, level, count


def regeneration_chain_stats(base, alpha: float, beta: float, k: int, samples: int, rng,
                             cert: int = DEFAULT_CERT, min_row: int = 30) -> RegenStats:
    """Empirical Y-chain transitions, Doeblin diagnostic and the T_2 - T_1 tail."""
    if k < 2:
        raise ValueError("k must be at least 2")
    model = as_model(base, alpha, beta)
    n = model.n
    T, Y, _, count = regeneration_table(model, alpha, beta, k, samples, rng, cert)
    full = count == k
    S = 2 * n
    counts = np.zeros((S, S), dtype=np.int64)
    Yf = Y[full]
    np.add.at(counts, (Yf[:, :-1].ravel(), Yf[:, 1:].ravel()), 1)
    rows = counts.sum(axis=1)
    observed = rows > 0
    if np.any(rows[observed] < min_row):
        raise InsufficientSamples(f"some observed row has fewer than {min_row} transitions")
    Q = np.full((S, S), np.nan)
    Q[observed] = counts[observed] / rows[observed, None]
    doeblin = math.inf
    for u in np.flatnonzero(observed):
        opposite = slice(n, S) if u < n else slice(0, n)
        doeblin = min(doeblin, n * float(Q[u, opposite].min()))
    gaps = T[full, 1] - T[full, 0]
    return RegenStats(counts, Q, doeblin, gaps, exponential_tail_fit(gaps), int(full.sum()))


def regeneration_records(base, alpha: float, beta: float, t: int, replicas: int, rng,
                         cert: int = DEFAULT_CERT) -> list[list[RegenerationRecord]]:
    """All regenerations of ``replicas`` walks of ``t`` whole steps, censored ones flagged."""
    model = as_model(base, alpha, beta)
    env, walks = replica_streams(_seed_from(rng), replicas)
    keys, types = _roots(model, env)
    out = []
    for r in range(replicas):
        tick, level, frm, cert_ok = K.regen_replica(*model.kernel_args(), model.n, keys[r], types[r], 2 * t, cert,
                                                    walks[r])
        out.append([RegenerationRecord((a + 1) / 2, int(y), int(l), not bool(c))
                    for a, y, l, c in zip(tick.tolist(), frm.tolist(), level.tolist(), cert_ok.tolist())])
    return out
