"""Multilinear functions of permutation matrices and their concentration bounds.

A monomial is a sorted tuple of index pairs ``(i, j)`` standing for the
product of entries ``X_ij``; it is multilinear when no row and no column is
repeated. Evaluating at a permutation ``sigma`` gives 1 for a monomial exactly
when ``sigma[i] == j`` for all of its pairs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

from .errors import DimensionMismatch, TooLargeForExact
from .stats import wilson_interval

Monomial = tuple[tuple[int, int], ...]
EXACT_MAX_N = 8


def _is_multilinear(mono: Iterable[tuple[int, int]]) -> bool:
    mono = list(mono)
    rows = {i for i, _ in mono}
    cols = {j for _, j in mono}
    return len(rows) == len(mono) == len(cols)


class MultilinearPoly:
    """Sparse polynomial in the entries of an n x n matrix.

    The empty monomial ``()`` holds a constant part; it only arises from
    applying ``op_D`` and is reported through :attr:`constant`.
    """

    __slots__ = ("n", "terms", "dropped", "_compiled")

    def __init__(self, n: int, terms: Mapping[Iterable[tuple[int, int]], float] | None = None, *, allow_constant=False):
        self.n = int(n)
        clean: dict[Monomial, float] = {}
        dropped = 0
        for mono, coef in (terms or {}).items():
            key = tuple(sorted((int(i), int(j)) for i, j in mono))
            if any(not (0 <= i < n and 0 <= j < n) for i, j in key):
                raise DimensionMismatch(f"monomial {key} out of range for n={n}")
            if not key and not allow_constant:
                raise ValueError("constant terms are not allowed")
            if not _is_multilinear(key):
                dropped += 1
                continue
            clean[key] = clean.get(key, 0.0) + float(coef)
        self.terms = {k: v for k, v in sorted(clean.items()) if v != 0.0}
        self.dropped = dropped
        self._compiled = None

    # --------------------------------------------------------------- basics

    @property
    def degree(self) -> int:
        return max((len(k) for k in self.terms), default=0)

    @property
    def constant(self) -> float:
        return self.terms.get((), 0.0)

    @property
    def nonnegative(self) -> bool:
        return all(v >= 0 for v in self.terms.values())

    def is_homogeneous(self) -> bool:
        return len({len(k) for k in self.terms}) <= 1

    def component(self, k: int) -> "MultilinearPoly":
        return MultilinearPoly(self.n, {m: c for m, c in self.terms.items() if len(m) == k}, allow_constant=True)

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        return f"MultilinearPoly(n={self.n}, degree={self.degree}, monomials={len(self.terms)})"

    def __add__(self, other: "MultilinearPoly") -> "MultilinearPoly":
        terms = dict(self.terms)
        for m, c in other.terms.items():
            terms[m] = terms.get(m, 0.0) + c
        return MultilinearPoly(self.n, terms, allow_constant=True)

    def scale(self, factor: float) -> "MultilinearPoly":
        return MultilinearPoly(self.n, {m: c * factor for m, c in self.terms.items()}, allow_constant=True)

    def max_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # ----------------------------------------------------------- evaluation

    def _arrays(self):
        if self._compiled is None:
            d = max(self.degree, 1)
            m = len(self.terms)
            rows = np.full((m, d), -1, dtype=np.int64)
            cols = np.full((m, d), -1, dtype=np.int64)
            coef = np.empty(m)
            for k, (mono, c) in enumerate(self.terms.items()):
                for t, (i, j) in enumerate(mono):
                    rows[k, t] = i
                    cols[k, t] = j
                coef[k] = c
            self._compiled = (rows, cols, coef)
        return self._compiled

    def evaluate_many(self, sigmas: np.ndarray) -> np.ndarray:
        """Values at each row of ``sigmas`` (shape (S, n))."""
        sigmas = np.ascontiguousarray(sigmas, dtype=np.int64)
        if sigmas.ndim != 2 or sigmas.shape[1] != self.n:
            raise DimensionMismatch(f"permutations of length {sigmas.shape[-1]} for n={self.n}")
        rows, cols, coef = self._arrays()
        return _evaluate_batch(sigmas, rows, cols, coef)

    def evaluate_matrix(self, M: np.ndarray) -> float:
        """Value at an arbitrary real matrix (polynomial evaluation)."""
        return math.fsum(c * math.prod(M[i, j] for i, j in mono) for mono, c in self.terms.items())


@numba.njit(cache=True)
def _evaluate_batch(sigmas, rows, cols, coef):
    S = sigmas.shape[0]
    m, d = rows.shape
    out = np.zeros(S)
    for s in range(S):
        acc = 0.0
        for k in range(m):
            ok = True
            for t in range(d):
                i = rows[k, t]
                if i < 0:
                    break
                if sigmas[s, i] != cols[k, t]:
                    ok = False
                    break
            if ok:
                acc += coef[k]
        out[s] = acc
    return out


def evaluate(phi: MultilinearPoly, sigma: Sequence[int]) -> float:
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape != (phi.n,):
        raise DimensionMismatch(f"permutation of length {len(sigma)} for n={phi.n}")
    return float(phi.evaluate_many(sigma[None, :])[0])


def partial_derivative(phi: MultilinearPoly, i: int, j: int) -> MultilinearPoly:
    terms = {}
    for mono, c in phi.terms.items():
        if (i, j) in mono:
            rest = tuple(p for p in mono if p != (i, j))
            terms[rest] = terms.get(rest, 0.0) + c
    return MultilinearPoly(phi.n, terms, allow_constant=True)


def op_D(phi: MultilinearPoly) -> MultilinearPoly:
    """Average first derivative, normalised per homogeneous component."""
    n = phi.n
    terms: dict[Monomial, float] = {}
    for mono, c in phi.terms.items():
        k = len(mono)
        if k == 0:
            continue
        w = c / (k * n)
        for t in range(k):
            rest = mono[:t] + mono[t + 1:]
            terms[rest] = terms.get(rest, 0.0) + w
    return MultilinearPoly(n, terms, allow_constant=True)


def op_D_power(phi: MultilinearPoly, k: int) -> MultilinearPoly:
    for _ in range(k):
        phi = op_D(phi)
    return phi


def op_U(phi: MultilinearPoly) -> MultilinearPoly:
    """Second-order entry-swap operator, normalised per homogeneous component."""
    n = phi.n
    terms: dict[Monomial, float] = {}
    for mono, c in phi.terms.items():
        k = len(mono)
        if k < 2:
            continue
        # both orderings of each pair contribute the same swapped monomial
        w = 2.0 * c / (k * n)
        for a, b in itertools.combinations(range(k), 2):
            (i, j), (kk, l) = mono[a], mono[b]
            rest = [p for t, p in enumerate(mono) if t != a and t != b]
            new = tuple(sorted(rest + [(i, l), (kk, j)]))
            terms[new] = terms.get(new, 0.0) + w
    return MultilinearPoly(n, terms, allow_constant=True)


# ------------------------------------------------------------ polynomials


def fixed_point_counter(n: int) -> MultilinearPoly:
    return MultilinearPoly(n, {((i, i),): 1.0 for i in range(n)})


def linear_poly(A: np.ndarray) -> MultilinearPoly:
    """sum_ij A_ij X_ij."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    return MultilinearPoly(n, {((i, j),): A[i, j] for i in range(n) for j in range(n) if A[i, j] != 0})


def random_poly(n: int, degree: int, monomials: int, rng: np.random.Generator, signed: bool = False,
                homogeneous: bool = True) -> MultilinearPoly:
    """Random multilinear polynomial with coefficients in (0, 1] (or [-1, 1] if signed).

    Fewer than ``monomials`` terms are returned when the space of distinct
    monomials is exhausted.
    """
    terms: dict[Monomial, float] = {}
    misses = 0
    while len(terms) < monomials and misses < 50 * monomials:
        k = degree if homogeneous else int(rng.integers(1, degree + 1))
        rows = rng.choice(n, size=k, replace=False)
        cols = rng.choice(n, size=k, replace=False)
        key = tuple(sorted(zip(rows.tolist(), cols.tolist())))
        if key in terms:
            misses += 1
            continue
        coef = rng.uniform(-1, 1) if signed else 1.0 - rng.random()
        terms[key] = coef
    return MultilinearPoly(n, terms)


def path_poly(n: int, degree: int, rng: np.random.Generator, start: int = 0, neighbours: int = 3) -> MultilinearPoly:
    """Weighted count of alternating matching/graph walks of ``degree`` matching steps.

    A random ``neighbours``-out graph G on [n] is drawn; the monomial
    X_{a1 b1} ... X_{ad bd} with a1 = start and a_{k+1} a G-neighbour of b_k
    gets weight prod 1/neighbours, the probability of the graph steps.
    """
    adj = [rng.choice(np.delete(np.arange(n), v), size=neighbours, replace=False) for v in range(n)]
    terms: dict[Monomial, float] = {}

    def extend(prefix, a, weight):
        if len(prefix) == degree:
            key = tuple(sorted(prefix))
            terms[key] = terms.get(key, 0.0) + weight
            return
        for b in range(n):
            pair = (a, b)
            if any(p[0] == a or p[1] == b for p in prefix):
                continue
            if len(prefix) + 1 == degree:
                extend(prefix + [pair], -1, weight)
            else:
                for a2 in adj[b]:
                    extend(prefix + [pair], int(a2), weight / neighbours)

    extend([], start, 1.0)
    return MultilinearPoly(n, terms)


def read_poly_file(path, n: int) -> MultilinearPoly:
    """Parse lines ``coef (i1,j1) (i2,j2) ...`` with 1-based indices."""
    import re

    pat = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")
    terms: dict[Monomial, float] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, _, rest = line.partition(" ")
            try:
                coef = float(head)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad coefficient {head!r}") from None
            pairs = [(int(a) - 1, int(b) - 1) for a, b in pat.findall(rest)]
            if not pairs or pat.sub("", rest).strip():
                raise ValueError(f"{path}:{lineno}: cannot parse monomial {rest!r}")
            key = tuple(sorted(pairs))
            terms[key] = terms.get(key, 0.0) + coef
    return MultilinearPoly(n, terms)


def write_poly_file(path, phi: MultilinearPoly) -> None:
    with open(path, "w") as fh:
        for mono, c in phi.terms.items():
            fh.write(f"{c!r} " + " ".join(f"({i + 1},{j + 1})" for i, j in mono) + "\n")


# ---------------------------------------------------------------- moments


def _active_probability(n: int, size: int) -> float:
    """P[a fixed multilinear monomial of the given size is active] = (n-size)!/n!."""
    return 1.0 / math.prod(range(n - size + 1, n + 1)) if size else 1.0


def expectation(phi: MultilinearPoly) -> float:
    """Exact mean under a uniform permutation (by linearity)."""
    return math.fsum(c * _active_probability(phi.n, len(m)) for m, c in phi.terms.items())


def variance(phi: MultilinearPoly) -> float:
    """Exact variance: E[m m'] is the activation probability of the union when consistent."""
    items = list(phi.terms.items())
    second = []
    for (m1, c1), (m2, c2) in itertools.product(items, repeat=2):
        union = set(m1) | set(m2)
        if _is_multilinear(union):
            second.append(c1 * c2 * _active_probability(phi.n, len(union)))
    mean = expectation(phi)
    return max(0.0, math.fsum(second) - mean * mean)


def all_permutations(n: int) -> np.ndarray:
    if n > EXACT_MAX_N:
        raise TooLargeForExact(f"n={n} exceeds the exhaustive limit {EXACT_MAX_N}")
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def sup_norm(phi: MultilinearPoly, perms: np.ndarray | None = None) -> float:
    if not phi.terms:
        return 0.0
    perms = all_permutations(phi.n) if perms is None else perms
    return float(np.max(np.abs(phi.evaluate_many(perms))))


def active_count_max(phi: MultilinearPoly, perms: np.ndarray | None = None) -> int:
    """N(phi) = max over permutations of the number of active monomials."""
    if not phi.terms:
        return 0
    perms = all_permutations(phi.n) if perms is None else perms
    ones = MultilinearPoly(phi.n, {m: 1.0 for m in phi.terms}, allow_constant=True)
    return int(round(np.max(ones.evaluate_many(perms))))


# -------------------------------------------------------------- constants


@dataclass
class ConcentrationConstants:
    C_D: float
    C_D_grad: float
    C_U: float
    max_coef: float
    active_count: float
    A_phi: float
    A_grad: float
    beta: float
    gamma: float
    alpha: float
    degree: int
    n: int
    mean: float
    mode: str


def _log_term(n: int) -> float:
    e = math.exp(-2.0 / n)
    return (2.0 / n) * (2.0 - e) / (1.0 - e)


def _rate(degree: int, big: float, small: float, n: int) -> float:
    """6 d small (log(4 big n / small)^+ + (2/n)(2 - e^{-2/n}) / (1 - e^{-2/n}))."""
    if small <= 0:
        return 0.0
    return 6.0 * degree * small * (max(0.0, math.log(4.0 * big * n / small)) + _log_term(n))


def _grad_sup(psi: MultilinearPoly, perms: np.ndarray) -> float:
    pairs = {p for m in psi.terms for p in m}
    return max((sup_norm(partial_derivative(psi, i, j), perms) for i, j in pairs), default=0.0)


def constants(phi: MultilinearPoly, mode: str = "bounded", mean: float | None = None,
              count: str = "monomials") -> ConcentrationConstants:
    """Constants of the concentration bound.

    ``mode='exact'`` takes sup norms over all permutations (n <= 8);
    ``mode='bounded'`` uses coefficient-times-count bounds, with the count of
    active monomials bounded by the total number of monomials
    (``count='monomials'``) or computed exactly (``count='exact'``, n <= 8).
    """
    n, d = phi.n, max(phi.degree, 1)
    mean = expectation(phi) if mean is None else mean

    def count_of(psi: MultilinearPoly) -> float:
        if count == "exact":
            return float(active_count_max(psi))
        return float(len(psi.terms))

    M = phi.max_coefficient()
    N = count_of(phi)
    A_phi = M * N
    pairs = sorted({p for m in phi.terms for p in m})
    A_grad = 0.0
    for i, j in pairs:
        der = partial_derivative(phi, i, j)
        A_grad = max(A_grad, der.max_coefficient() * count_of(der))

    if mode == "exact":
        perms = all_permutations(n)
        C_D = C_grad = C_U = 0.0
        Uphi = op_U(phi)
        psi, upsi = phi, Uphi
        for _ in range(d + 1):
            C_D = max(C_D, sup_norm(psi, perms))
            C_grad = max(C_grad, _grad_sup(psi, perms))
            C_U = max(C_U, sup_norm(upsi, perms))
            psi, upsi = op_D(psi), op_D(upsi)
    elif mode == "bounded":
        C_D = 2.0 ** d * A_phi
        C_grad = 2.0 ** d * A_grad
        C_U = 2.0 ** d * (d - 1) / n * A_phi
    else:
        raise ValueError(f"unknown mode {mode!r}")

    beta = _rate(d, C_D, C_grad, n)
    gamma = (2.0 * beta / 3.0) * (2.0 * mean + C_U)
    alpha = _rate(d, A_phi, A_grad, n) * 2.0 ** d
    return ConcentrationConstants(C_D, C_grad, C_U, M, N, A_phi, A_grad, beta, gamma, alpha, d, n, mean, mode)


def tail_bound(const: ConcentrationConstants, t: float, side: str = "upper") -> float:
    """Tail bounds: ``upper``/``lower`` one-sided forms or the two-sided ``corollary`` form."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0 and side != "corollary":
        return 1.0
    if side == "upper":
        denom = 2.0 * (const.gamma + const.beta * t)
    elif side == "lower":
        denom = 2.0 * const.gamma
    elif side == "corollary":
        d, n = const.degree, const.n
        inner = 4.0 / 3.0 * const.mean + 2.0 ** (d + 1) * (d - 1) * const.A_phi / (3.0 * n) + t
        return 2.0 * math.exp(-t * t / (2.0 * const.alpha * inner)) if const.alpha > 0 else 0.0
    else:
        raise ValueError(f"unknown side {side!r}")
    if denom <= 0:
        return 0.0
    return math.exp(-t * t / denom)


def theorem_bounds(phi: MultilinearPoly, mode: str = "bounded", mean: float | None = None) -> ConcentrationConstants:
    """Constants for bound emission; signed coefficients are refused."""
    if not phi.nonnegative:
        raise ValueError("the concentration bound needs nonnegative coefficients")
    return constants(phi, mode, mean)


def chatterjee_bound(max_entry: float, mean: float, t: float) -> float:
    """Two-sided degree-one bound 2 exp(-t^2 / (2 ||A|| (t + 2 E Z)))."""
    if t <= 0:
        return 1.0
    denom = 2.0 * max_entry * (t + 2.0 * mean)
    return 2.0 * math.exp(-t * t / denom) if denom > 0 else 0.0


# ----------------------------------------------------------- Monte Carlo


def random_permutations(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    base = np.broadcast_to(np.arange(n, dtype=np.int64), (count, n))
    return rng.permuted(base, axis=1)


def sample_values(phi: MultilinearPoly, samples: int, rng: np.random.Generator, chunk: int = 50_000) -> np.ndarray:
    out = np.empty(samples)
    for lo in range(0, samples, chunk):
        hi = min(samples, lo + chunk)
        out[lo:hi] = phi.evaluate_many(random_permutations(phi.n, hi - lo, rng))
    return out


@dataclass
class TailEstimate:
    t: float
    estimate: float
    lower: float
    upper: float
    hits: int
    samples: int
    center: float


def monte_carlo_tail(phi: MultilinearPoly, ts: float | Sequence[float], samples: int, rng: np.random.Generator,
                     center: float | None = None) -> list[TailEstimate]:
    """Empirical P[phi - E phi >= t] with Wilson intervals.

    Without ``center`` the mean is estimated from an independent sample of
    the same size.
    """
    ts = [float(ts)] if np.isscalar(ts) else [float(t) for t in ts]
    if center is None:
        center = math.fsum(sample_values(phi, samples, rng)) / samples
    vals = sample_values(phi, samples, rng)
    dev = vals - center
    out = []
    for t in ts:
        # tolerance guards against round-off when phi - center sits exactly at t
        hits = int(np.count_nonzero(dev >= t - 1e-12))
        lo, hi = wilson_interval(hits, samples)
        out.append(TailEstimate(t, hits / samples, lo, hi, hits, samples, center))
    return out


# ---------------------------------------------------- exchangeable pairs


def _derivative_at(phi: MultilinearPoly, sigma: np.ndarray, fixed: Sequence[tuple[int, int]]) -> float:
    """Value at sigma of the derivative of phi with respect to the given distinct entries."""
    fixed_set = set(fixed)
    if len(fixed_set) < len(fixed):
        return 0.0
    acc = []
    for mono, c in phi.terms.items():
        if not fixed_set.issubset(mono):
            continue
        if all(sigma[i] == j for i, j in mono if (i, j) not in fixed_set):
            acc.append(c)
    return math.fsum(acc)


def compose_transposition(sigma: np.ndarray, I: int, J: int) -> np.ndarray:
    """sigma o (I J): apply the transposition first."""
    out = np.array(sigma, copy=True)
    out[I], out[J] = sigma[J], sigma[I]
    return out


def exchange_identity_check(phi: MultilinearPoly, sigma: Sequence[int], I: int, J: int,
                            second_order: float = 1.0) -> float:
    """Residual of the first-order expansion of phi(sigma o (I J)).

    phi(sigma tau) = phi + d_{I s(J)} + d_{J s(I)} - d_{I s(I)} - d_{J s(J)}
                     + c (d2_{I s(I), J s(J)} + d2_{I s(J), J s(I)}),
    all evaluated at sigma; the identity holds with c = 1 (``second_order``).
    """
    s = np.asarray(sigma, dtype=np.int64)
    lhs = evaluate(phi, compose_transposition(s, I, J))
    if I == J:
        return abs(lhs - evaluate(phi, s))
    sI, sJ = int(s[I]), int(s[J])
    terms = [
        evaluate(phi, s),
        _derivative_at(phi, s, [(I, sJ)]),
        _derivative_at(phi, s, [(J, sI)]),
        -_derivative_at(phi, s, [(I, sI)]),
        -_derivative_at(phi, s, [(J, sJ)]),
        second_order * _derivative_at(phi, s, [(I, sI), (J, sJ)]),
        second_order * _derivative_at(phi, s, [(I, sJ), (J, sI)]),
    ]
    return abs(lhs - math.fsum(terms))


def conditional_identity_residual(phi: MultilinearPoly, sigma: Sequence[int], u_weight: float = 0.5) -> float:
    """Residual of the exact average over all n^2 ordered pairs (I, J):

    (n / 2d) E[phi(sigma) - phi(sigma (I J)) | sigma]
        = (1 - (d-1)/(2n)) phi - D phi - u_weight * U phi,

    for homogeneous phi; the identity holds with ``u_weight = 1/2``.
    """
    if not phi.is_homogeneous():
        raise ValueError("the conditional identity is stated for homogeneous phi")
    n, d = phi.n, phi.degree
    s = np.asarray(sigma, dtype=np.int64)
    base = evaluate(phi, s)
    swapped = np.array([compose_transposition(s, I, J) for I in range(n) for J in range(n)])
    diffs = base - phi.evaluate_many(swapped)
    lhs = n / (2 * d) * math.fsum(diffs) / (n * n)
    rhs = (1 - (d - 1) / (2 * n)) * base - evaluate(op_D(phi), s) - u_weight * evaluate(op_U(phi), s)
    return abs(lhs - rhs)


def conditional_identity_check(phi: MultilinearPoly, sigmas: np.ndarray | None = None,
                               u_weight: float = 0.5) -> float:
    """Maximum residual of the conditional identity over ``sigmas`` (default: all of S_n)."""
    sigmas = all_permutations(phi.n) if sigmas is None else sigmas
    return max(conditional_identity_residual(phi, s, u_weight) for s in sigmas)


def euler_identity_residual(phi: MultilinearPoly, sigma: Sequence[int]) -> float:
    """|phi(sigma) - (1/d) sum_i d_{i sigma(i)} phi(sigma)| for homogeneous phi."""
    s = np.asarray(sigma, dtype=np.int64)
    d = phi.degree
    total = math.fsum(_derivative_at(phi, s, [(i, int(s[i]))]) for i in range(phi.n))
    return abs(evaluate(phi, s) - total / d)


def mean_recursion_residual(phi: MultilinearPoly) -> float:
    """|E[D phi] - (1 - (d-1)/n) E[phi]| by enumeration of S_n."""
    perms = all_permutations(phi.n)
    d, n = phi.degree, phi.n
    e_phi = math.fsum(phi.evaluate_many(perms)) / len(perms)
    Dphi = op_D(phi)
    e_D = math.fsum(Dphi.evaluate_many(perms)) / len(perms) if Dphi.terms else 0.0
    return abs(e_D - (1 - (d - 1) / n) * e_phi)


def derivative_monotonicity_gap(phi: MultilinearPoly) -> float:
    """max_ij sup|d_ij phi| - sup|phi| (nonpositive when the monotonicity holds)."""
    perms = all_permutations(phi.n)
    return _grad_sup(phi, perms) - sup_norm(phi, perms)
