"""Distribution evolution, mixing profiles and trajectory analysis on the finite chain.

Trajectories are recorded at half-integer resolution: tick ``2t`` is whole
time ``t`` and tick ``2t+1`` is time ``t + 1/2``. The move from an even tick
either stays put or crosses the matching edge; the move from an odd tick is a
step of the base kernel.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InfeasiblePath, NotMixing
from .network_core import ElectricalNetwork, SparseKernel, TwoLiftEnvironment, reversible_kernel, stay_probabilities
from .stats import wilson_interval


def step_distribution(kernel: SparseKernel, dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.shape[-1] != kernel.dimension:
        raise DimensionMismatch(f"distribution of length {dist.shape[-1]} for kernel of dimension {kernel.dimension}")
    return kernel.matrix.T @ dist if dist.ndim == 1 else dist @ kernel.matrix


def tv_distance(mu: np.ndarray, nu: np.ndarray) -> float:
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise DimensionMismatch(f"shapes {mu.shape} and {nu.shape} differ")
    return 0.5 * float(np.abs(mu - nu).sum())


@dataclass
class MixingProfile:
    tv: np.ndarray
    tmix: dict[float, int | None]


def mixing_profile(kernel: SparseKernel, start, target: np.ndarray, t_max: int,
                   eps: Sequence[float] = (0.25,)) -> MixingProfile:
    """TV distance to ``target`` at times 0..t_max from a state or distribution."""
    m = kernel.dimension
    if np.isscalar(start):
        dist = np.zeros(m)
        dist[int(start)] = 1.0
    else:
        dist = np.asarray(start, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    tv = np.empty(t_max + 1)
    PT = kernel.matrix.T.tocsr()
    for t in range(t_max + 1):
        tv[t] = tv_distance(dist, target)
        if t < t_max:
            dist = PT @ dist
    tmix = {}
    for e in eps:
        hit = np.flatnonzero(tv < e)
        tmix[e] = int(hit[0]) if len(hit) else None
    return MixingProfile(tv, tmix)


def tmix_table(kernel: SparseKernel, target: np.ndarray, eps: Sequence[float], t_max: int,
               starts: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """First times TV < eps from every start, evolving all rows at once.

    Returns ``(table, tv_curves)`` where ``table[x, k]`` is tmix(x, eps[k]) or -1
    when not reached by ``t_max``, and ``tv_curves[t, x]`` the TV at time t.
    """
    m = kernel.dimension
    starts = np.arange(m) if starts is None else np.asarray(starts)
    D = np.zeros((len(starts), m))
    D[np.arange(len(starts)), starts] = 1.0
    target = np.asarray(target, dtype=float)
    eps = np.asarray(eps, dtype=float)
    table = np.full((len(starts), len(eps)), -1, dtype=np.int64)
    curves = []
    P = kernel.matrix
    for t in range(t_max + 1):
        tv = 0.5 * np.abs(D - target).sum(axis=1)
        curves.append(tv)
        newly = (tv[:, None] < eps[None, :]) & (table < 0)
        table[newly] = t
        if np.all(table >= 0) or t == t_max:
            break
        D = np.asarray(D @ P)
    return table, np.array(curves)


def cutoff_ratio(kernel: SparseKernel, pi: np.ndarray, eps: float = 0.25, t_max: int = 10_000) -> float:
    """max_x tmix(x, eps) / min_x tmix(x, 1 - eps)."""
    lo, hi = min(eps, 1 - eps), max(eps, 1 - eps)
    table, _ = tmix_table(kernel, pi, [lo, hi], t_max)
    if np.any(table < 0):
        raise NotMixing(f"some start has not reached TV < {lo} within {t_max} steps")
    slow = table[:, 0].max()
    fast = table[:, 1].min()
    if fast == 0:
        return float("inf") if slow > 0 else 1.0
    return float(slow / fast)


# ---------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # one entry per half tick
    env_id: str = ""
    seed: int | None = None

    @property
    def steps(self) -> int:
        return (len(self.states) - 1) // 2

    def whole_times(self) -> np.ndarray:
        return self.states[0::2]


@dataclass(frozen=True)
class ChainTables:
    """Flattened data used by the samplers: stay probabilities and base rows."""

    stay: np.ndarray
    eta: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    cumprob: np.ndarray

    @classmethod
    def from_env(cls, env: TwoLiftEnvironment) -> "ChainTables":
        P = reversible_kernel(env.base).matrix
        cum = np.empty_like(P.data)
        for x in range(P.shape[0]):
            lo, hi = P.indptr[x], P.indptr[x + 1]
            cum[lo:hi] = np.cumsum(P.data[lo:hi])
            cum[hi - 1] = 1.0
        return cls(stay_probabilities(env), np.asarray(env.eta), P.indptr, P.indices, cum)

    def base_step(self, x: int, u: float) -> int:
        lo, hi = self.indptr[x], self.indptr[x + 1]
        k = lo + int(np.searchsorted(self.cumprob[lo:hi], u, side="right"))
        return int(self.indices[min(k, hi - 1)])


def env_id(env: TwoLiftEnvironment) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(env.base.conductance.indptr.tobytes())
    h.update(env.base.conductance.indices.tobytes())
    h.update(env.base.conductance.data.tobytes())
    h.update(np.asarray(env.eta, dtype=np.int64).tobytes())
    h.update(repr((env.alpha, env.beta)).encode())
    return h.hexdigest()[:16]


def simulate_trajectory(env: TwoLiftEnvironment, x: int, steps: int, rng: np.random.Generator,
                        tables: ChainTables | None = None) -> Trajectory:
    """Run the two-lift chain for ``steps`` whole steps from ``x``."""
    tables = tables or ChainTables.from_env(env)
    u = rng.random(2 * steps)
    states = np.empty(2 * steps + 1, dtype=np.int64)
    states[0] = x
    for k in range(2 * steps):
        cur = int(states[k])
        if k % 2 == 0:
            states[k + 1] = cur if u[k] < tables.stay[cur] else tables.eta[cur]
        else:
            states[k + 1] = tables.base_step(cur, u[k])
    return Trajectory(states, env_id(env))


def crossings(traj: Trajectory) -> list[tuple[int, int, int]]:
    """(tick, from, to) for every matching edge crossed."""
    s = traj.states
    out = []
    for k in range(0, len(s) - 1, 2):
        if s[k + 1] != s[k]:
            out.append((k, int(s[k]), int(s[k + 1])))
    return out


@dataclass(frozen=True)
class LoopErasedTrace:
    edges: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.edges)


def loop_erase_edges(edges: Sequence[tuple[int, int]]) -> LoopErasedTrace:
    stack: list[tuple[int, int]] = []
    for a, b in edges:
        if stack and stack[-1] == (b, a):
            stack.pop()
        else:
            stack.append((a, b))
    return LoopErasedTrace(tuple(stack))


def loop_erase(traj: Trajectory) -> LoopErasedTrace:
    return loop_erase_edges([(a, b) for _, a, b in crossings(traj)])


# ------------------------------------------------------- small-range distances


class SmallRangeMetric:
    """Breadth-first distances over base edges, cached per source."""

    def __init__(self, net: ElectricalNetwork):
        C = net.conductance
        self._indptr = C.indptr
        self._indices = C.indices
        self._cache: dict[int, tuple[int, dict[int, int]]] = {}

    def ball(self, x: int, radius: int) -> dict[int, int]:
        """Vertices within distance ``radius`` of x (may include farther ones from a larger cached ball)."""
        cached = self._cache.get(x)
        if cached is not None and cached[0] >= radius:
            return cached[1]
        dist = {x: 0}
        queue = deque([x])
        while queue:
            v = queue.popleft()
            if dist[v] == radius:
                continue
            for w in self._indices[self._indptr[v]:self._indptr[v + 1]]:
                w = int(w)
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        self._cache[x] = (radius, dist)
        return dist

    def distance(self, x: int, y: int, cap: int) -> int:
        """d_SR(x, y) if at most ``cap``, else ``cap + 1``."""
        d = self.ball(x, cap).get(y)
        return cap + 1 if d is None or d > cap else d


# ------------------------------------------------------------ path classes


@dataclass(frozen=True)
class PathClassParams:
    radius: int
    backtrack: int
    gap_bound: int

    @classmethod
    def default(cls, n: int) -> "PathClassParams":
        v = default_radius(n)
        return cls(v, v, v)


def default_radius(n: int) -> int:
    """ceil(3 log2 log2 n), at least 1."""
    if n < 4:
        return 1
    return max(1, math.ceil(3 * math.log2(math.log2(n))))


@dataclass
class PathClassReport:
    member: bool
    deviation_tick: int | None
    backtrack_tick: int | None
    regeneration_gap_tick: int | None
    regeneration_ticks: list[int] = field(default_factory=list)


def lifted_centers(traj: Trajectory) -> np.ndarray:
    """Center (entry vertex of the current lifted component) at every tick."""
    s = traj.states
    centers = np.empty(len(s), dtype=np.int64)
    stack: list[tuple[int, int]] = []
    root = int(s[0])
    centers[0] = root
    for k in range(len(s) - 1):
        if k % 2 == 0 and s[k + 1] != s[k]:
            a, b = int(s[k]), int(s[k + 1])
            if stack and stack[-1] == (b, a):
                stack.pop()
            else:
                stack.append((a, b))
        centers[k + 1] = stack[-1][1] if stack else root
    return centers


def backtrack_ticks(traj: Trajectory, backtrack: int) -> int | None:
    """First tick completing a reversal of ``backtrack`` distinct consecutive long-range edges."""
    cr = crossings(traj)
    edges = [(a, b) for _, a, b in cr]
    for j in range(len(edges)):
        # edges[j] closes a reversal of length l if it mirrors edges[j - 2l + 1 .. j - l]
        for l in range(backtrack, j // 2 + 2):
            i = j - 2 * l + 1
            if i < 0:
                break
            first = edges[i:i + l]
            second = edges[i + l:j + 1]
            if len(set(first)) == l and all(second[t] == first[l - 1 - t][::-1] for t in range(l)):
                return cr[j][0] + 1
    return None


def regeneration_edge_ticks(traj: Trajectory, backtrack: int) -> list[int]:
    """Ticks of first crossings of regeneration edges with horizon ``backtrack``."""
    cr = crossings(traj)
    out = []
    seen: set[tuple[int, int]] = set()
    for idx, (tick, a, b) in enumerate(cr):
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        # follow the trace relative to the crossing until distance ``backtrack`` or a return over (b, a)
        stack: list[tuple[int, int]] = []
        good = True
        for _, c, d in cr[idx + 1:]:
            if not stack and (c, d) == (b, a):
                good = False
                break
            if stack and stack[-1] == (d, c):
                stack.pop()
            else:
                stack.append((c, d))
            if len(stack) >= backtrack:
                break
        if good:
            out.append(tick + 1)
    return out


def classify_path(traj: Trajectory, params: PathClassParams, metric: SmallRangeMetric) -> PathClassReport:
    """Membership in the class of non-deviating, non-backtracking, regenerating paths."""
    s = traj.states
    centers = lifted_centers(traj)
    deviation = None
    for k in range(len(s)):
        if metric.distance(int(centers[k]), int(s[k]), params.radius) >= params.radius:
            deviation = k
            break
    backtrack = backtrack_ticks(traj, params.backtrack)
    regen = regeneration_edge_ticks(traj, params.backtrack)
    # a stretch of more than 2M ticks without a regeneration crossing
    gap = None
    window = 2 * params.gap_bound
    end = len(s) - 1
    prev = 0
    for tick in regen + [end]:
        if tick - prev > window:
            gap = prev + window + 1
            break
        prev = tick
    member = deviation is None and backtrack is None and gap is None
    return PathClassReport(member, deviation, backtrack, gap, regen)


# ------------------------------------------------------------------ weights


@dataclass
class WeightEstimate:
    value: float
    lower: float
    upper: float
    factors: list[tuple[float, float, float, int]]  # (estimate, lo, hi, conditioning count)


def _weight_run(tables: ChainTables, metric: SmallRangeMetric, x: int, radius: int, backtrack: int,
                rng: np.random.Generator, conditional: bool, max_ticks: int = 1_000_000):
    """One run from x; returns the first trace edge at tau_L, or a failure tag."""
    cur = x
    stack: list[tuple[int, int]] = []
    for k in range(max_ticks):
        center = stack[-1][1] if stack else x
        if metric.distance(center, cur, radius) >= radius:
            return "deviated"
        if len(stack) >= backtrack:
            return stack[0]
        u = rng.random()
        if k % 2 == 0:
            if u < tables.stay[cur]:
                continue
            nxt = int(tables.eta[cur])
            if not stack and cur == x and conditional:
                return "returned"
            if stack and stack[-1] == (nxt, cur):
                stack.pop()
            else:
                stack.append((cur, nxt))
            cur = nxt
        else:
            cur = tables.base_step(cur, u)
    return "timeout"


def estimate_weight_factor(env: TwoLiftEnvironment, x: int, edge: tuple[int, int] | None, radius: int, backtrack: int,
                           samples: int, rng: np.random.Generator, conditional: bool,
                           tables: ChainTables | None = None, metric: SmallRangeMetric | None = None):
    """Counts for one factor: (hits, conditioning count, first-edge histogram)."""
    tables = tables or ChainTables.from_env(env)
    metric = metric or SmallRangeMetric(env.base)
    hits = 0
    base = 0
    hist: dict[tuple[int, int], int] = {}
    for _ in range(samples):
        res = _weight_run(tables, metric, x, radius, backtrack, rng, conditional)
        if isinstance(res, str):
            if not conditional:
                base += 1
            continue
        base += 1
        hist[res] = hist.get(res, 0) + 1
        if res == edge:
            hits += 1
    return hits, base, hist


def estimate_weight(env: TwoLiftEnvironment, x: int, xi: Sequence[tuple[int, int]], radius: int, backtrack: int,
                    samples: int, rng: np.random.Generator) -> WeightEstimate:
    """Monte Carlo estimate of the trace weight of ``xi`` from ``x``."""
    xi = [tuple(map(int, e)) for e in xi]
    if not xi:
        return WeightEstimate(1.0, 1.0, 1.0, [])
    tables = ChainTables.from_env(env)
    metric = SmallRangeMetric(env.base)
    factors = []
    value, lower, upper = 1.0, 1.0, 1.0
    for i, e in enumerate(xi):
        start = x if i == 0 else xi[i - 1][1]
        hits, base, _ = estimate_weight_factor(env, start, e, radius, backtrack, samples, rng, i > 0, tables, metric)
        if base == 0:
            raise InfeasiblePath(f"conditioning event for factor {i + 1} never occurred in {samples} runs")
        p = hits / base
        lo, hi = wilson_interval(hits, base)
        factors.append((p, lo, hi, base))
        value *= p
        lower *= lo
        upper *= hi
    return WeightEstimate(value, lower, upper, factors)


def entropy_witness(env: TwoLiftEnvironment, x: int, t: int, theta: float, samples: int,
                    rng: np.random.Generator, radius: int, backtrack: int, inner: int = 512) -> float:
    """Fraction of trajectories of length t whose estimated trace weight is at least theta."""
    tables = ChainTables.from_env(env)
    hits = 0
    for _ in range(samples):
        traj = simulate_trajectory(env, x, t, rng, tables)
        trace = loop_erase(traj)
        if len(trace) == 0:
            w = 1.0
        else:
            try:
                w = estimate_weight(env, x, trace.edges, radius, backtrack, inner, rng).value
            except InfeasiblePath:
                w = 0.0
        hits += w >= theta
    return hits / samples
