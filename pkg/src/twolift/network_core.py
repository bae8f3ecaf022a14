"""Electrical networks, the permuted superposition chain and its two-lift.

Vertices are 0-based internally. A two-lift base lives on ``2n`` vertices
split as ``V1 = [0, n)`` and ``V2 = [n, 2n)``; the matching ``eta`` is an
involution exchanging the halves.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DimensionMismatch, IsolatedVertex, SameSide

DROP_TOL = 1e-15
ROW_TOL = 1e-12


@dataclass(frozen=True)
class ElectricalNetwork:
    """Weighted undirected multigraph with conductances.

    ``conductance`` is a symmetric CSR matrix where multi-edges have been
    summed; ``multiplicity`` counts how many edges were merged into each pair.
    """

    vertex_count: int
    conductance: sp.csr_matrix
    multiplicity: sp.csr_matrix

    @classmethod
    def from_edges(cls, vertex_count: int, edges: Iterable[tuple[int, int, float]]) -> "ElectricalNetwork":
        rows, cols, vals = [], [], []
        for x, y, c in edges:
            if not (0 <= x < vertex_count and 0 <= y < vertex_count):
                raise ValueError(f"edge ({x}, {y}) out of range for {vertex_count} vertices")
            if c < 0 or not np.isfinite(c):
                raise ValueError(f"invalid conductance {c} on edge ({x}, {y})")
            if c == 0:
                continue
            rows.append(x)
            cols.append(y)
            vals.append(float(c))
        rows_a = np.asarray(rows, dtype=np.int64)
        cols_a = np.asarray(cols, dtype=np.int64)
        vals_a = np.asarray(vals, dtype=float)
        loops = rows_a == cols_a
        # mirror off-diagonal entries; loops are stored once
        r = np.concatenate([rows_a, cols_a[~loops]])
        c = np.concatenate([cols_a, rows_a[~loops]])
        v = np.concatenate([vals_a, vals_a[~loops]])
        shape = (vertex_count, vertex_count)
        cond = sp.coo_matrix((v, (r, c)), shape=shape).tocsr()
        cond.sum_duplicates()
        mult = sp.coo_matrix((np.ones_like(v, dtype=np.int64), (r, c)), shape=shape).tocsr()
        mult.sum_duplicates()
        return cls(vertex_count, cond, mult)

    def weights(self) -> np.ndarray:
        """Row sums c(x)."""
        return np.asarray(self.conductance.sum(axis=1)).ravel()

    def degrees(self) -> np.ndarray:
        """Number of incident edges, multi-edges counted with multiplicity."""
        return np.asarray(self.multiplicity.sum(axis=1)).ravel()

    def c(self, x: int, y: int) -> float:
        return float(self.conductance[x, y])

    def edges(self) -> list[tuple[int, int, float]]:
        """Aggregated edges (x <= y) in row-major order."""
        upper = sp.triu(self.conductance).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return [(int(upper.row[k]), int(upper.col[k]), float(upper.data[k])) for k in order]

    def scaled(self, factor: float) -> "ElectricalNetwork":
        return ElectricalNetwork(self.vertex_count, (self.conductance * factor).tocsr(), self.multiplicity)

    def component_labels(self) -> np.ndarray:
        _, labels = connected_components(self.conductance, directed=False)
        return labels


def disjoint_union(first: ElectricalNetwork, second: ElectricalNetwork) -> ElectricalNetwork:
    """Place ``first`` on ``[0, n1)`` and ``second`` on ``[n1, n1+n2)``."""
    off = first.vertex_count
    edges = first.edges() + [(x + off, y + off, c) for x, y, c in second.edges()]
    return ElectricalNetwork.from_edges(first.vertex_count + second.vertex_count, edges)


def cycle_network(n: int, conductance: float = 1.0) -> ElectricalNetwork:
    if n < 3:
        raise ValueError("a cycle needs at least 3 vertices")
    return ElectricalNetwork.from_edges(n, [(i, (i + 1) % n, conductance) for i in range(n)])


def pairing_network(n: int, conductance: float = 1.0) -> ElectricalNetwork:
    """Disjoint edges {0,1}, {2,3}, ...; requires even n."""
    if n % 2:
        raise ValueError("pairing needs an even number of vertices")
    return ElectricalNetwork.from_edges(n, [(i, i + 1, conductance) for i in range(0, n, 2)])


def complete_network(n: int, conductance: float = 1.0) -> ElectricalNetwork:
    return ElectricalNetwork.from_edges(n, [(i, j, conductance) for i in range(n) for j in range(i + 1, n)])


def random_regular_network(n: int, k: int, rng: np.random.Generator) -> ElectricalNetwork:
    """Uniform simple k-regular graph (pairing model with rejection)."""
    if (n * k) % 2 or k >= n:
        raise ValueError(f"no simple {k}-regular graph on {n} vertices")
    stubs = np.repeat(np.arange(n), k)
    for _ in range(10_000):
        perm = rng.permutation(stubs)
        a, b = perm[0::2], perm[1::2]
        if np.any(a == b):
            continue
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        if len(np.unique(lo * n + hi)) < len(lo):
            continue
        return ElectricalNetwork.from_edges(n, [(int(x), int(y), 1.0) for x, y in zip(lo, hi)])
    raise RuntimeError("pairing model failed to produce a simple graph")


@dataclass(frozen=True)
class SparseKernel:
    """Row-stochastic sparse matrix."""

    matrix: sp.csr_matrix

    def __post_init__(self):
        m = self.matrix.tocsr().astype(float)
        m.data[np.abs(m.data) < DROP_TOL] = 0.0
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"kernel must be square, got {m.shape}")
        if m.nnz and m.data.min() < 0:
            raise ValueError("kernel has negative entries")
        sums = np.asarray(m.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
        if len(bad):
            raise ValueError(f"row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def row(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.matrix.indptr[x], self.matrix.indptr[x + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def min_positive(self) -> float:
        return float(self.matrix.data.min())


def _normalise_rows(m: sp.csr_matrix, weights: np.ndarray) -> sp.csr_matrix:
    inv = sp.diags(1.0 / weights)
    return (inv @ m).tocsr()


def reversible_kernel(net: ElectricalNetwork) -> SparseKernel:
    """P(x, y) = c(x, y) / c(x)."""
    w = net.weights()
    iso = np.flatnonzero(w <= 0)
    if len(iso):
        raise IsolatedVertex(f"vertex {iso[0]} has zero total conductance")
    return SparseKernel(_normalise_rows(net.conductance, w))


@dataclass(frozen=True)
class TwoLiftEnvironment:
    """Base network on 2n vertices together with a matching and (alpha, beta)."""

    base: ElectricalNetwork
    eta: np.ndarray
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.int64)
        if self.base.vertex_count % 2:
            raise ValueError("two-lift base needs an even number of vertices")
        if eta.shape != (self.base.vertex_count,):
            raise DimensionMismatch("matching length differs from vertex count")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @property
    def n(self) -> int:
        return self.base.vertex_count // 2

    def side(self, x: int) -> int:
        """1 for V1, 2 for V2."""
        return 1 if x < self.n else 2

    def sigma(self) -> np.ndarray:
        """The bijection V1 -> V2 encoded by the matching (values in [n, 2n))."""
        return self.eta[: self.n].copy()


def sample_matching(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform bijection V1 -> V2 extended to an involution on [0, 2n)."""
    sigma = rng.permutation(n) + n
    eta = np.empty(2 * n, dtype=np.int64)
    eta[:n] = sigma
    eta[sigma] = np.arange(n)
    return eta


def two_lift_base(first: ElectricalNetwork, second: ElectricalNetwork) -> ElectricalNetwork:
    if first.vertex_count != second.vertex_count:
        raise DimensionMismatch("both halves must have n vertices")
    return disjoint_union(first, second)


def gammas(env: TwoLiftEnvironment) -> np.ndarray:
    """gamma(x, eta(x)) per vertex: alpha on V1, beta on V2."""
    n = env.n
    out = np.empty(2 * n)
    out[:n] = env.alpha
    out[n:] = env.beta
    return out


def crossing_probability(env: TwoLiftEnvironment, x: int, u: int) -> float:
    """p(x, u): probability of staying on the side of x when paired with u."""
    if env.side(x) == env.side(u):
        raise SameSide(f"{x} and {u} are on the same side")
    w = env.base.weights()
    g = gammas(env)
    a = g[x] * w[x]
    b = g[u] * w[u]
    return float(a / (a + b))


def stay_probabilities(env: TwoLiftEnvironment) -> np.ndarray:
    """p(x, eta(x)) for every vertex."""
    w = env.base.weights()
    g = gammas(env)
    a = g * w
    return a / (a + a[env.eta])


def build_superposed_kernel(env: TwoLiftEnvironment) -> SparseKernel:
    """Kernel of the two-lift chain on V."""
    P = reversible_kernel(env.base).matrix
    p = stay_probabilities(env)
    m = 2 * env.n
    swap = sp.csr_matrix((np.ones(m), (np.arange(m), env.eta)), shape=(m, m))
    K = sp.diags(p) @ P + sp.diags(1.0 - p) @ (swap @ P)
    return SparseKernel(K.tocsr())


def project_quotient(kernel: SparseKernel, eta: np.ndarray) -> SparseKernel:
    """Quotient kernel on V1 with entries K(x, y) + K(x, eta(y))."""
    eta = np.asarray(eta)
    m = kernel.dimension
    if m % 2 or len(eta) != m:
        raise DimensionMismatch(f"kernel of dimension {m} cannot be projected with a matching of length {len(eta)}")
    n = m // 2
    K = kernel.matrix
    # column y in V2 is folded onto eta(y) in V1
    fold = np.where(np.arange(m) < n, np.arange(m), eta)
    proj = sp.csr_matrix((np.ones(m), (np.arange(m), fold)), shape=(m, n))
    Q = (K[:n] @ proj).tocsr()
    Q.sum_duplicates()
    return SparseKernel(Q)


def quotient_conductance(env: TwoLiftEnvironment) -> sp.csr_matrix:
    """c_bar(x, y) = alpha c(x, y) + beta c(eta(x), eta(y)) on V1."""
    n = env.n
    C = env.base.conductance
    S = sp.csr_matrix((np.ones(n), (np.arange(n), env.eta[:n])), shape=(n, 2 * n))
    return (env.alpha * C[:n, :n] + env.beta * (S @ C @ S.T)).tocsr()


def stationary_measure(env: TwoLiftEnvironment) -> tuple[np.ndarray, np.ndarray]:
    """Invariant laws of the quotient chain (on V1) and of the two-lift (on V)."""
    cbar = quotient_conductance(env)
    row = np.asarray(cbar.sum(axis=1)).ravel()
    total = row.sum()
    pi = row / total
    lift = gammas(env) * env.base.weights() / total
    return pi, lift


@dataclass
class ValidationReport:
    degree_bound: int
    min_transition: float
    violations: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(env: TwoLiftEnvironment) -> ValidationReport:
    """Check the structural hypotheses and report the degree and transition bounds."""
    n = env.n
    base = env.base
    violations: list[tuple[str, str]] = []
    eta = env.eta
    if not np.array_equal(eta[eta], np.arange(2 * n)):
        violations.append(("matching", "eta is not an involution"))
    if np.any(eta[:n] < n) or np.any(eta[n:] >= n):
        violations.append(("matching", "eta does not exchange V1 and V2"))
    coo = base.conductance.tocoo()
    cross = (coo.row < n) != (coo.col < n)
    if np.any(cross):
        k = int(np.flatnonzero(cross)[0])
        violations.append(("structure", f"edge ({coo.row[k]}, {coo.col[k]}) crosses sides"))
    w = base.weights()
    for x in np.flatnonzero(w <= 0):
        violations.append(("H1", f"vertex {x} is isolated"))
    labels = base.component_labels()
    sizes = np.bincount(labels)
    for x_side, lo, hi, need in (("V1", 0, n, 3), ("V2", n, 2 * n, 2)):
        small = sorted({int(labels[x]) for x in range(lo, hi) if sizes[labels[x]] < need})
        for comp in small:
            first = int(np.flatnonzero(labels == comp)[0])
            violations.append(("H3", f"{x_side} component of vertex {first} has size {sizes[comp]} < {need}"))
    deg = int(base.degrees().max()) if base.vertex_count else 0
    delta = float("nan")
    if not np.any(w <= 0):
        delta = build_superposed_kernel(env).min_positive()
    return ValidationReport(deg, delta, violations)


def read_network_file(path) -> tuple[ElectricalNetwork, np.ndarray | None]:
    """Parse ``n``/``e``/``m`` lines (1-based vertices on [1, 2n])."""
    n = None
    edges: list[tuple[int, int, float]] = []
    pairs: list[tuple[int, int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "n" and len(tok) == 2:
                    n = int(tok[1])
                elif tok[0] == "e" and len(tok) == 4:
                    edges.append((int(tok[1]) - 1, int(tok[2]) - 1, float(tok[3])))
                elif tok[0] == "m" and len(tok) == 3:
                    pairs.append((int(tok[1]) - 1, int(tok[2]) - 1))
                else:
                    raise ValueError
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse {raw.rstrip()!r}") from None
    if n is None:
        raise ValueError(f"{path}: missing 'n' header")
    net = ElectricalNetwork.from_edges(2 * n, edges)
    eta = None
    if pairs:
        eta = np.full(2 * n, -1, dtype=np.int64)
        for x, y in pairs:
            eta[x], eta[y] = y, x
        if np.any(eta < 0):
            raise ValueError(f"{path}: matching does not cover every vertex")
    return net, eta


def write_network_file(path, net: ElectricalNetwork, eta: Sequence[int] | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"n {net.vertex_count // 2}\n")
        for x, y, c in net.edges():
            fh.write(f"e {x + 1} {y + 1} {c!r}\n")
        if eta is not None:
            for x in range(net.vertex_count // 2):
                fh.write(f"m {x + 1} {int(eta[x]) + 1}\n")


def builtin_base(kind: str, n: int, rng: np.random.Generator | None = None) -> ElectricalNetwork:
    """Two-lift bases used by the experiments.

    ``cycle``: an n-cycle on V1 and disjoint edges on V2 (the quotient is the
    cycle plus a uniform matching). ``triangles``: two triangles (n=3).
    ``complete``: complete graphs on both halves. ``random-regular(k)``:
    independent uniform k-regular graphs on both halves.
    """
    kind = kind.strip().lower()
    if kind == "cycle":
        return two_lift_base(cycle_network(n), pairing_network(n))
    if kind == "triangles":
        if n != 3:
            raise ValueError("the two-triangle base has n = 3")
        return two_lift_base(cycle_network(3), cycle_network(3))
    if kind == "complete":
        return two_lift_base(complete_network(n), complete_network(n))
    if kind.startswith("random-regular"):
        k = 3
        if "(" in kind:
            k = int(kind[kind.index("(") + 1 : kind.index(")")])
        if rng is None:
            raise ValueError("random-regular bases need an rng")
        return two_lift_base(random_regular_network(n, k, rng), random_regular_network(n, k, rng))
    raise ValueError(f"unknown base kind {kind!r}")
