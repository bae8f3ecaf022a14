"""Joint sequential generation of the finite matching and the quasi-tree along one walk.

Both generations reveal a long-range partner only when the walk needs it (at
a whole time, to decide whether to cross). A revelation draws one uniform
``u``; the tree takes type ``floor(u n)`` on the opposite side
unconditionally, and the finite matching accepts the same vertex if it is
still unmatched. A rejected finite draw is replaced by a second draw used by
the finite side only, uniform over the unmatched vertices.

The coupling fails at the first tick where a draw is rejected, where the
finite walk reaches an already matched vertex whose tree copy is fresh, or
where the revealed finite edges contain a long-range cycle of at most
``2 backtrack + 1`` edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import OutOfBudget
from .finite_chain import SmallRangeMetric, default_radius
from .network_core import ElectricalNetwork, reversible_kernel
from .stats import replica_seeds, wilson_interval

NOT_FAILED = None


# ------------------------------------------------------------------ cycles


class _Balls:
    """Cached small-range balls."""

    def __init__(self, base: ElectricalNetwork, radius: int):
        self.metric = SmallRangeMetric(base)
        self.radius = radius
        self._cache: dict[int, dict[int, int]] = {}

    def ball(self, x: int) -> dict[int, int]:
        got = self._cache.get(x)
        if got is None:
            got = self.metric.ball(x, self.radius)
            self._cache[x] = got
        return got

    def close(self, x: int, y: int) -> bool:
        return y in self.ball(x)


def _extend(balls: _Balls, owner: dict[int, int], edges: list[tuple[int, int]], path: list[tuple[int, int]],
            used: set[int], max_edges: int) -> list[tuple[int, int]] | None:
    """Depth-first extension of an oriented long-range path until it closes."""
    start = path[0][0]
    end = path[-1][1]
    if len(path) >= 2 and balls.close(end, start):
        return list(path)
    if len(path) >= max_edges:
        return None
    for a in balls.ball(end):
        k = owner.get(a)
        if k is None or k in used:
            continue
        x, y = edges[k]
        step = (x, y) if a == x else (y, x)
        used.add(k)
        path.append(step)
        found = _extend(balls, owner, edges, path, used, max_edges)
        path.pop()
        used.discard(k)
        if found is not None:
            return found
    return None


def _owners(edges: Sequence[tuple[int, int]]) -> dict[int, int]:
    owner: dict[int, int] = {}
    for k, (a, b) in enumerate(edges):
        owner[a] = k
        owner[b] = k
    return owner


def cycle_through(balls: _Balls, edges: list[tuple[int, int]], k: int, max_edges: int,
                  owner: dict[int, int] | None = None) -> list[tuple[int, int]] | None:
    """A long-range cycle using edge ``k`` (either orientation), or None."""
    owner = owner if owner is not None else _owners(edges)
    a, b = edges[k]
    for first in ((a, b), (b, a)):
        found = _extend(balls, owner, edges, [first], {k}, max_edges)
        if found is not None:
            return found
    return None


def cycle_scan(base: ElectricalNetwork, edges: Sequence[tuple[int, int]], radius: int, max_edges: int | None = None
               ) -> tuple[bool, list[tuple[int, int]] | None]:
    """Look for a long-range cycle among revealed edges.

    A cycle is a sequence of distinct long-range edges, each oriented, where
    every small-range hop between the end of one edge and the start of the
    next has length at most ``radius``, and the end of the last edge lies within
    ``radius`` of the start of the first. Returns (found, oriented witness).
    """
    edges = [(int(a), int(b)) for a, b in edges]
    max_edges = len(edges) if max_edges is None else max_edges
    balls = _Balls(base, radius)
    owner = _owners(edges)
    for k in range(len(edges)):
        found = cycle_through(balls, edges, k, max_edges, owner)
        if found is not None:
            return True, found
    return False, None


# ------------------------------------------------------------- coupled run


@dataclass
class CoupledRun:
    finite: np.ndarray  # finite vertex per tick
    tree: np.ndarray  # tree vertex type per tick
    tau: int | None  # first failure tick, None if the coupling held
    explored: int  # revealed finite long-range edges
    kind: str | None = None  # "cycle", "rejection" or "revisit"
    revealed: list[tuple[int, int, int]] = field(default_factory=list)  # (tick, vertex, partner), finite side


class CouplingContext:
    """Per-base tables shared by many coupled runs."""

    def __init__(self, base: ElectricalNetwork, alpha: float, beta: float, radius: int | None = None):
        n = base.vertex_count // 2
        self.n = n
        self.radius = default_radius(n) if radius is None else radius
        P = reversible_kernel(base).matrix
        self._indptr = P.indptr
        self._indices = P.indices
        self._cum = np.empty_like(P.data)
        for v in range(2 * n):
            lo, hi = P.indptr[v], P.indptr[v + 1]
            self._cum[lo:hi] = np.cumsum(P.data[lo:hi])
            self._cum[hi - 1] = 1.0
        self.weight = base.weights() * np.r_[np.full(n, float(alpha)), np.full(n, float(beta))]
        self.balls = _Balls(base, self.radius)

    def base_step(self, v: int, u: float) -> int:
        lo, hi = self._indptr[v], self._indptr[v + 1]
        j = lo + int(np.searchsorted(self._cum[lo:hi], u, side="right"))
        return int(self._indices[min(j, hi - 1)])


def coupled_generate(base: ElectricalNetwork, alpha: float, beta: float, x: int, ticks: int, backtrack: int,
                     rng: np.random.Generator, radius: int | None = None, max_edges: int | None = None,
                     max_revealed: int = 10_000_000, context: CouplingContext | None = None) -> CoupledRun:
    """Walk the finite two-lift and the quasi-tree from ``x`` with shared draws.

    ``radius`` defaults to ``default_radius(n)``; cycles are looked for with at most
    ``2 backtrack + 1`` long-range edges unless ``max_edges`` is given.
    """
    if backtrack < 0:
        raise ValueError("backtrack must be nonnegative")
    n = base.vertex_count // 2
    if not 0 <= x < 2 * n:
        raise ValueError("start vertex out of range")
    ctx = context if context is not None else CouplingContext(base, alpha, beta, radius)
    max_edges = 2 * backtrack + 1 if max_edges is None else max_edges
    weight = ctx.weight
    balls = ctx.balls
    base_step = ctx.base_step

    # finite side
    eta: dict[int, int] = {}
    unmatched = [list(range(n, 2 * n)), list(range(n))]  # candidates for V1 and V2 vertices
    position = [dict((v, i) for i, v in enumerate(unmatched[0])), dict((v, i) for i, v in enumerate(unmatched[1]))]
    edges: list[tuple[int, int]] = []
    owner: dict[int, int] = {}

    def take(side: int, v: int) -> None:
        lst, pos = unmatched[side], position[side]
        i = pos.pop(v)
        last = lst.pop()
        if last != v:
            lst[i] = last
            pos[last] = i

    # tree side: components keyed by id, each with a center type and a parent (component, type)
    comp_members: list[dict[int, int]] = [{}]  # type -> partner component (or -1 unknown)
    comp_parent_type: list[int] = [-1]
    comp_center: list[int] = [x]
    comp_parent: list[int] = [-1]

    fin = np.empty(ticks + 1, dtype=np.int64)
    tre = np.empty(ticks + 1, dtype=np.int64)
    fv, tv, tc = x, x, 0
    fin[0], tre[0] = fv, tv
    tau: int | None = None
    kind = None
    revealed: list[tuple[int, int, int]] = []

    for i in range(ticks):
        u = rng.random()
        if i % 2 == 0:
            # tree partner of tv in component tc
            if tv == comp_center[tc] and comp_parent[tc] >= 0:
                t_partner_type = comp_parent_type[tc]
                t_partner = ("up", comp_parent[tc])
            else:
                child = comp_members[tc].get(tv)
                t_partner = ("down", child)
                t_partner_type = comp_center[child] if child is not None else None
            f_partner = eta.get(fv)
            if tau is None and (t_partner_type is None) != (f_partner is None):
                # the finite walk came back to a matched vertex along another route
                tau, kind = i, "revisit"
            if t_partner_type is None or f_partner is None:
                d = rng.random()
                proposal = (n if tv < n else 0) + min(int(d * n), n - 1)
                if t_partner_type is None:
                    comp_center.append(proposal)
                    comp_parent.append(tc)
                    comp_parent_type.append(tv)
                    comp_members.append({})
                    comp_members[tc][tv] = len(comp_center) - 1
                    t_partner_type = proposal
                    t_partner = ("down", len(comp_center) - 1)
                if f_partner is None:
                    side = 0 if fv < n else 1
                    if proposal in position[side]:
                        f_partner = proposal
                    else:
                        if tau is None:
                            tau, kind = i, "rejection"
                        lst = unmatched[side]
                        f_partner = lst[min(int(rng.random() * len(lst)), len(lst) - 1)]
                    take(side, f_partner)
                    take(1 - side, fv)
                    eta[fv] = f_partner
                    eta[f_partner] = fv
                    edges.append((fv, f_partner))
                    owner[fv] = owner[f_partner] = len(edges) - 1
                    revealed.append((i, fv, f_partner))
                    if len(edges) > max_revealed:
                        raise OutOfBudget("revealed edge budget exhausted")
                    if tau is None and max_edges >= 2:
                        if cycle_through(balls, edges, len(edges) - 1, max_edges, owner) is not None:
                            tau, kind = i, "cycle"
            # crossing decision uses the same uniform on both sides
            if u >= weight[fv] / (weight[fv] + weight[f_partner]):
                fv = f_partner
            if u >= weight[tv] / (weight[tv] + weight[t_partner_type]):
                tv = t_partner_type
                tc = t_partner[1]
        else:
            fv = base_step(fv, u)
            tv = base_step(tv, u)
        fin[i + 1], tre[i + 1] = fv, tv
    return CoupledRun(fin, tre, tau, len(edges), kind, revealed)


# ----------------------------------------------------------- failure curve


@dataclass(frozen=True)
class FailureRate:
    n: int
    ticks: int
    backtrack: int
    samples: int
    failures: int
    rate: float
    lower: float
    upper: float


def failure_rate_curve(base: ElectricalNetwork | Callable[[int], ElectricalNetwork], alpha: float, beta: float,
                       backtrack: int, ticks: Sequence[int], samples: int, seed: int, ns: Sequence[int] | None = None,
                       radius: int | None = None) -> list[FailureRate]:
    """Fraction of coupled runs that fail within each tick count, per base size.

    ``base`` is either one network or a function of n used with ``ns``. One
    run of ``max(ticks)`` ticks serves every tick count.
    """
    if callable(base):
        if ns is None:
            raise ValueError("a base family needs the list of sizes")
        bases = [(int(n), base(int(n))) for n in ns]
    else:
        bases = [(base.vertex_count // 2, base)]
    horizon = max(ticks) if len(ticks) else 0
    out = []
    for j, (n, net) in enumerate(bases):
        ctx = CouplingContext(net, alpha, beta, radius)
        taus = []
        for s in replica_seeds(seed + 7919 * j, samples):
            rng = np.random.default_rng(int(s))
            x = int(rng.integers(2 * n))
            taus.append(coupled_generate(net, alpha, beta, x, horizon, backtrack, rng, context=ctx).tau)
        for t in ticks:
            fails = sum(1 for tau in taus if tau is not None and tau < t)
            lo, hi = wilson_interval(fails, samples)
            out.append(FailureRate(n, int(t), backtrack, samples, fails, fails / samples if samples else 0.0, lo, hi))
    return out
