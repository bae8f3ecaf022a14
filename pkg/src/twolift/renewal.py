"""Markov renewal processes with finite gap tables.

A process on states ``0..S-1`` is given by ``jump_law[x, t, y]``, the probability of
moving from ``x`` to ``y`` with a gap of ``t`` ticks (``t = 1..t_max``; the
``t = 0`` slice is zero). Rows may carry a small mass shortfall when the gap
law was truncated; exact computations treat it as an absorbing defect.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotStationary, TruncationExhausted, ZeroAlpha
from .stats import fsum_mean

ROW_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MarkovRenewalProcess:
    """Gap/transition tables ``jump_law[x, t, y]`` and an initial law ``initial[y, delay]``."""

    jump_law: np.ndarray
    initial: np.ndarray
    truncated: bool = False
    shortfall: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.asarray(self.jump_law, dtype=float)
        init = np.asarray(self.initial, dtype=float)
        if Q.ndim != 3 or Q.shape[0] != Q.shape[2]:
            raise ValueError("Q must have shape (S, t_max + 1, S)")
        if np.any(Q < 0) or np.any(Q[:, 0, :] != 0):
            raise ValueError("gap tables must be nonnegative with no mass at gap 0")
        mass = Q.sum(axis=(1, 2))
        if np.any(mass > 1 + ROW_TOLERANCE):
            raise ValueError("row mass exceeds one")
        if not self.truncated and np.any(mass < 1 - ROW_TOLERANCE):
            raise ValueError("row mass below one; pass truncated=True to allow a defect")
        if init.ndim != 2 or init.shape[0] != Q.shape[0] or abs(init.sum() - 1) > ROW_TOLERANCE or np.any(init < 0):
            raise ValueError("initial law must be a distribution over (state, delay)")
        object.__setattr__(self, "jump_law", Q)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "shortfall", np.clip(1 - mass, 0, None))

    @property
    def states(self) -> int:
        return self.jump_law.shape[0]

    @property
    def t_max(self) -> int:
        return self.jump_law.shape[1] - 1

    def transition(self) -> np.ndarray:
        """Embedded Y-chain kernel, summed over gaps."""
        return self.jump_law.sum(axis=1)

    def with_initial(self, initial: np.ndarray) -> "MarkovRenewalProcess":
        return MarkovRenewalProcess(self.jump_law, initial, self.truncated)


def point_initial(states: int, y: int = 0, delay: int = 0) -> np.ndarray:
    init = np.zeros((states, delay + 1))
    init[y, delay] = 1.0
    return init


def stationary_law(kernel: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible kernel by a linear solve."""
    S = kernel.shape[0]
    A = kernel.T - np.eye(S)
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    mu = np.linalg.solve(A, b)
    return np.clip(mu, 0, None) / np.clip(mu, 0, None).sum()


def gap_moments(mrp: MarkovRenewalProcess, mu: np.ndarray | None = None) -> tuple[float, float, np.ndarray]:
    """(E_mu[T_1], Var_mu[T_1], per-state mean gap) for T_0 = 0 and Y_0 ~ mu."""
    mu = stationary_law(mrp.transition()) if mu is None else mu
    t = np.arange(mrp.t_max + 1, dtype=float)
    gap_law = mrp.jump_law.sum(axis=2)
    per_state = gap_law @ t
    m1 = float(mu @ per_state)
    m2 = float(mu @ (gap_law @ t ** 2))
    return m1, m2 - m1 * m1, per_state


# ------------------------------------------------------------- simulation


def _sample_rows(cum: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index sampled from the cumulative table ``cum[row]`` for each uniform."""
    out = np.empty(len(rows), dtype=np.int64)
    for r in np.unique(rows):
        mask = rows == r
        out[mask] = np.searchsorted(cum[r], u[mask], side="right")
    return out


def simulate_paths(mrp: MarkovRenewalProcess, k: int, paths: int, rng: np.random.Generator,
                   initial: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``Y`` and ``T`` of shape (paths, k + 1)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    init = mrp.initial if initial is None else initial
    S, width = mrp.states, mrp.t_max + 1
    flat0 = np.cumsum(init.ravel())
    idx = np.minimum(np.searchsorted(flat0, rng.random(paths) * flat0[-1], side="right"), flat0.size - 1)
    Y = np.empty((paths, k + 1), dtype=np.int64)
    T = np.empty((paths, k + 1), dtype=np.int64)
    Y[:, 0], T[:, 0] = np.divmod(idx, init.shape[1])
    cum = np.cumsum(mrp.jump_law.reshape(S, -1), axis=1)
    for i in range(1, k + 1):
        draw = _sample_rows(cum, Y[:, i - 1], rng.random(paths))
        if np.any(draw >= width * S):
            raise TruncationExhausted("a draw fell into the truncated gap mass")
        gap, Y[:, i] = np.divmod(draw, S)
        T[:, i] = T[:, i - 1] + gap
    return Y, T


def simulate_mrp(mrp: MarkovRenewalProcess, k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """One path ``[(Y_0, T_0), ..., (Y_k, T_k)]``."""
    Y, T = simulate_paths(mrp, k, 1, rng)
    return list(zip(Y[0].tolist(), T[0].tolist()))


# ------------------------------------------------------------------- LLN


@dataclass
class LLNReport:
    expected_gap: float
    gap_rate: float
    gap_z: float
    renewal_rate: float
    expected_renewal_rate: float
    renewal_z: float
    horizon: int
    inverse_consistent: bool
    auxiliary_mass: float


def counting_process(T: np.ndarray, t: int) -> np.ndarray:
    """N_t = max{k : T_k <= t} per path (-1 if T_0 > t)."""
    return np.sum(T <= t, axis=1) - 1


def lln_check(mrp: MarkovRenewalProcess, k: int, samples: int, rng: np.random.Generator) -> LLNReport:
    """Compare T_k / k and N_t / t with their limits E_mu[T_1] and 1 / E_mu[T_1]."""
    mean_gap, _, _ = gap_moments(mrp)
    Y, T = simulate_paths(mrp, k, samples, rng)
    rates = T[:, -1] / k
    gap_rate = fsum_mean(rates)
    gap_se = float(np.std(rates, ddof=1)) / math.sqrt(samples) if samples > 1 else float("inf")
    horizon = int(T[:, -1].min())
    N = counting_process(T, horizon)
    inverse = bool(np.all(T[np.arange(samples), N] <= horizon) and np.all(T[np.arange(samples), N + 1] > horizon)) \
        if np.all(N + 1 <= k) else bool(np.all(T[np.arange(samples), N] <= horizon))
    nrates = N / horizon
    renewal_rate = fsum_mean(nrates)
    n_se = float(np.std(nrates, ddof=1)) / math.sqrt(samples) if samples > 1 else float("inf")

    def z(value, target, se):
        if se == 0:
            return 0.0 if abs(value - target) < 1e-12 else float("inf")
        return (value - target) / se

    return LLNReport(mean_gap, gap_rate, z(gap_rate, mean_gap, gap_se), renewal_rate, 1 / mean_gap,
                     z(renewal_rate, 1 / mean_gap, n_se), horizon, inverse, auxiliary_stationary_mass(mrp))


# ------------------------------------------------------- auxiliary chain


def _aux_step(mrp: MarkovRenewalProcess, w: np.ndarray) -> np.ndarray:
    """One tick of U_t = (next renewal state, ticks until it); mass in shortfall is lost."""
    new = np.zeros_like(w)
    new[:, :-1] = w[:, 1:]
    # renewal now: draw the next state and gap g, then wait g - 1 more ticks
    arrivals = np.einsum("x,xgy->yg", w[:, 0], mrp.jump_law[:, 1:, :])
    new[:, : arrivals.shape[1]] += arrivals
    return new


def _aux_width(mrp: MarkovRenewalProcess) -> int:
    return max(mrp.t_max, mrp.initial.shape[1])


def auxiliary_stationary_mass(mrp: MarkovRenewalProcess) -> float:
    """Stationary mass of S x {0} for the waiting-time chain, by a linear solve."""
    S, W = mrp.states, mrp.t_max
    size = S * W
    P = np.zeros((size, size))
    for y in range(S):
        for s in range(1, W):
            P[y * W + s, y * W + s - 1] = 1.0
        for g in range(1, W + 1):
            for y2 in range(S):
                P[y * W, y2 * W + g - 1] += mrp.jump_law[y, g, y2]
    P /= P.sum(axis=1, keepdims=True)
    reach = np.zeros(size, dtype=bool)
    # restrict to states reachable from renewal states so the solve is well posed
    frontier = [y * W for y in range(S)]
    reach[frontier] = True
    while frontier:
        nxt = []
        for v in frontier:
            for w in np.flatnonzero(P[v] > 0):
                if not reach[w]:
                    reach[w] = True
                    nxt.append(w)
        frontier = nxt
    idx = np.flatnonzero(reach)
    mu = stationary_law(P[np.ix_(idx, idx)])
    full = np.zeros(size)
    full[idx] = mu
    return float(sum(full[y * W] for y in range(S)))


@dataclass
class RenewalTable:
    u: np.ndarray  # shape (t + 1, S): P[renewal at tick t in state y]
    l1: np.ndarray  # sum_y |u_t(y) - mu(y) / E_mu[T_1]|
    target: np.ndarray
    lost: np.ndarray  # cumulative mass lost to truncation


def renewal_distribution_exact(mrp: MarkovRenewalProcess, t: int) -> RenewalTable:
    mean_gap, _, _ = gap_moments(mrp)
    target = stationary_law(mrp.transition()) / mean_gap
    W = _aux_width(mrp)
    w = np.zeros((mrp.states, W))
    w[:, : mrp.initial.shape[1]] = mrp.initial
    u = np.empty((t + 1, mrp.states))
    lost = np.empty(t + 1)
    for s in range(t + 1):
        u[s] = w[:, 0]
        lost[s] = 1.0 - w.sum()
        if s < t:
            w = _aux_step(mrp, w)
    l1 = np.abs(u - target[None, :]).sum(axis=1)
    return RenewalTable(u, l1, target, lost)


# --------------------------------------------------------------- coupling


def coupling_alpha(mrp: MarkovRenewalProcess) -> float:
    """min_x sum_{t, y} Q_t(x, y) ^ Q_{t+1}(x, y)."""
    overlap = np.minimum(mrp.jump_law[:, :-1, :], mrp.jump_law[:, 1:, :])
    return float(overlap.sum(axis=(1, 2)).min())


def _pair_table(mrp: MarkovRenewalProcess, x: int, x2: int):
    """Joint outcomes (y, y', gap, gap') with probabilities for one coupled step.

    Equal states use the shift-by-one symmetric law with half overlaps
    a_t = (Q_t ^ Q_{t+1}) / 2, which keeps every branch nonnegative.
    Distinct states couple the next states maximally and the gaps
    independently given the next states.
    """
    Q = mrp.jump_law
    S, width = mrp.states, mrp.t_max + 1
    outcomes, probs = [], []
    if x == x2:
        a = np.zeros((width + 1, S))
        a[: width - 1] = 0.5 * np.minimum(Q[x, :-1, :], Q[x, 1:, :])
        for t in range(1, width):
            for y in range(S):
                q = Q[x, t, y]
                if q == 0:
                    continue
                if a[t - 1, y] > 0:
                    outcomes.append((y, y, t - 1, t))
                    probs.append(a[t - 1, y])
                    outcomes.append((y, y, t, t - 1))
                    probs.append(a[t - 1, y])
                same = q - a[t - 1, y] - a[t, y]
                if same > 0:
                    outcomes.append((y, y, t, t))
                    probs.append(same)
        return outcomes, np.array(probs)
    q1, q2 = Q[x].sum(axis=0), Q[x2].sum(axis=0)
    common = np.minimum(q1, q2)
    r1, r2 = q1 - common, q2 - common
    rest = 1.0 - common.sum()
    for y in range(S):
        for y2 in range(S):
            joint = (common[y] if y == y2 else 0.0) + (r1[y] * r2[y2] / rest if rest > 1e-15 else 0.0)
            if joint <= 0:
                continue
            g1 = Q[x, :, y] / q1[y]
            g2 = Q[x2, :, y2] / q2[y2]
            for t in np.flatnonzero(g1):
                for t2 in np.flatnonzero(g2):
                    outcomes.append((y, y2, int(t), int(t2)))
                    probs.append(joint * g1[t] * g2[t2])
    return outcomes, np.array(probs)


def _maximal_initial_coupling(nu1: np.ndarray, nu2: np.ndarray, count: int, rng: np.random.Generator):
    width = max(nu1.shape[1], nu2.shape[1])
    a = np.zeros((nu1.shape[0], width))
    b = np.zeros_like(a)
    a[:, : nu1.shape[1]] = nu1
    b[:, : nu2.shape[1]] = nu2
    a, b = a.ravel(), b.ravel()
    common = np.minimum(a, b)
    p = common.sum()
    cum_c = np.cumsum(common)
    cum_a, cum_b = np.cumsum(a - common), np.cumsum(b - common)
    same = rng.random(count) < p
    u1, u2 = rng.random(count), rng.random(count)
    first = np.where(same, np.searchsorted(cum_c, u1 * p, side="right"),
                     np.searchsorted(cum_a, u1 * (1 - p), side="right"))
    second = np.where(same, first, np.searchsorted(cum_b, u2 * (1 - p), side="right"))
    first = np.minimum(first, a.size - 1)
    second = np.minimum(second, a.size - 1)
    return np.divmod(first, width), np.divmod(second, width)


def mineka_couple_many(mrp: MarkovRenewalProcess, nu1: np.ndarray, nu2: np.ndarray, k_max: int, runs: int,
                       rng: np.random.Generator, return_paths: bool = False):
    """Coalescence index per run (-1 when not coalesced by ``k_max``)."""
    alpha = coupling_alpha(mrp)
    if alpha <= 0:
        raise ZeroAlpha("Q_t and Q_{t+1} have no overlap from some state")
    S = mrp.states
    tables = {}
    for x in range(S):
        for x2 in range(S):
            outcomes, probs = _pair_table(mrp, x, x2)
            tables[x, x2] = (np.array(outcomes, dtype=np.int64).reshape(-1, 4), np.cumsum(probs))
    (Y1, T1), (Y2, T2) = _maximal_initial_coupling(nu1, nu2, runs, rng)
    tau = np.where((Y1 == Y2) & (T1 == T2), 0, -1)
    paths = [(Y1.copy(), T1.copy(), Y2.copy(), T2.copy())] if return_paths else None
    for k in range(1, k_max + 1):
        u = rng.random(runs)
        live = tau < 0
        new = np.empty((runs, 4), dtype=np.int64)
        for (x, x2), (out, cum) in tables.items():
            mask = (Y1 == x) & (Y2 == x2)
            if not mask.any():
                continue
            j = np.searchsorted(cum, u[mask] * cum[-1], side="right")
            if cum[-1] < 1 - ROW_TOLERANCE and np.any(u[mask] >= cum[-1]):
                raise TruncationExhausted("a coupled draw fell into the truncated gap mass")
            new[mask] = out[np.minimum(j, len(out) - 1)]
        # coalesced runs move together
        done = ~live
        new[done, 1] = new[done, 0]
        new[done, 3] = new[done, 2]
        Y1, Y2 = new[:, 0], new[:, 1]
        T1, T2 = T1 + new[:, 2], T2 + new[:, 3]
        tau = np.where(live & (Y1 == Y2) & (T1 == T2), k, tau)
        if return_paths:
            paths.append((Y1.copy(), T1.copy(), Y2.copy(), T2.copy()))
        if not return_paths and np.all(tau >= 0):
            break
    return (tau, paths) if return_paths else tau


def mineka_couple(mrp: MarkovRenewalProcess, nu1: np.ndarray, nu2: np.ndarray, k_max: int,
                  rng: np.random.Generator) -> int | None:
    """Coalescence index of one coupled pair, or None if not coalesced by ``k_max``."""
    tau = int(mineka_couple_many(mrp, nu1, nu2, k_max, 1, rng)[0])
    return None if tau < 0 else tau


@dataclass
class TailFit:
    ks: list[int]
    tails: list[float]
    slope: float
    intercept: float


def coalescence_tail(mrp: MarkovRenewalProcess, nu1, nu2, ks, runs: int, rng: np.random.Generator) -> TailFit:
    """Empirical P[tau > k] at each k and the log-log regression slope."""
    tau = mineka_couple_many(mrp, nu1, nu2, max(ks), runs, rng)
    tails = [float(np.mean((tau < 0) | (tau > k))) for k in ks]
    logk = np.log(np.asarray(ks, dtype=float))
    with np.errstate(divide="ignore"):
        logt = np.log(np.asarray(tails))
    if np.all(np.isfinite(logt)):
        slope, intercept = np.polyfit(logk, logt, 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return TailFit(list(ks), tails, float(slope), float(intercept))


# ------------------------------------------------------------ spectral gap


@dataclass
class GapReport:
    gamma: float
    gamma_ps: float
    k_best: int
    per_k: list[float]


def _reversible_gap(M: np.ndarray, mu: np.ndarray) -> float:
    """1 - largest nontrivial |eigenvalue| of a mu-self-adjoint kernel (0 if 1 is repeated)."""
    root = np.sqrt(mu)
    sym = root[:, None] * M / root[None, :]
    sym = 0.5 * (sym + sym.T)
    vals = np.sort(np.abs(np.linalg.eigvalsh(sym)))[::-1]
    if len(vals) == 1:
        return 1.0
    if vals[1] > 1 - 1e-12:
        return 0.0
    return float(1.0 - vals[1])


def absolute_gap(kernel: np.ndarray) -> float:
    """1 - largest modulus among eigenvalues other than the leading one (0 if 1 is repeated)."""
    vals = np.linalg.eigvals(kernel)
    order = np.argsort(-np.abs(vals))
    mods = np.abs(vals[order])
    if len(mods) == 1:
        return 1.0
    if np.sum(np.abs(vals - 1) < 1e-10) > 1:
        return 0.0
    return float(1.0 - mods[1])


def pseudo_spectral_gap(kernel: np.ndarray, mu: np.ndarray, k_max: int | None = None) -> GapReport:
    kernel = np.asarray(kernel, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.max(np.abs(mu @ kernel - mu)) > 1e-10:
        raise NotStationary("mu is not invariant for the kernel")
    S = kernel.shape[0]
    k_max = 2 * S if k_max is None else k_max
    adjoint = (kernel * mu[:, None]).T / mu[:, None]
    per_k = []
    Qk, Ak = np.eye(S), np.eye(S)
    for k in range(1, k_max + 1):
        Qk, Ak = Qk @ kernel, Ak @ adjoint
        per_k.append(_reversible_gap(Ak @ Qk, mu) / k)
    best = int(np.argmax(per_k))
    return GapReport(absolute_gap(kernel), per_k[best], best + 1, per_k)


@dataclass
class VarianceReport:
    k: int
    empirical: float
    standard_error: float
    bound: float
    passed: bool


def variance_bound_check(mrp: MarkovRenewalProcess, k: int, samples: int, rng: np.random.Generator) -> VarianceReport:
    """Empirical Var_mu[T_k] against 6 k Var_mu[T_1] / gamma_ps, with 3 sigma slack."""
    kernel = mrp.transition()
    mu = stationary_law(kernel)
    _, var1, _ = gap_moments(mrp, mu)
    gap = pseudo_spectral_gap(kernel, mu)
    bound = 6.0 / gap.gamma_ps * k * var1 if var1 > 0 else 0.0
    init = np.zeros((mrp.states, 1))
    init[:, 0] = mu
    _, T = simulate_paths(mrp, k, samples, rng, initial=init)
    Tk = T[:, -1].astype(float)
    centered = Tk - fsum_mean(Tk)
    m2 = float(np.mean(centered ** 2))
    m4 = float(np.mean(centered ** 4))
    empirical = m2 * samples / (samples - 1)
    se = math.sqrt(max(m4 - m2 * m2, 0.0) / samples)
    return VarianceReport(k, empirical, se, bound, empirical <= bound + 3 * se)


# -------------------------------------------------------------------- toys


def toy_process(name: str) -> MarkovRenewalProcess:
    """Test processes: ``deterministic-gap``, ``geometric-gap``, ``uniform-gap``, ``two-state``, ``three-state``."""
    if name == "deterministic-gap":
        Q = np.zeros((1, 3, 1))
        Q[0, 2, 0] = 1.0
        return MarkovRenewalProcess(Q, point_initial(1))
    if name == "geometric-gap":
        t_max = 64
        Q = np.zeros((1, t_max + 1, 1))
        Q[0, 1:, 0] = 0.5 ** np.arange(1, t_max + 1)
        return MarkovRenewalProcess(Q, point_initial(1), truncated=True)
    if name == "uniform-gap":
        Q = np.zeros((1, 3, 1))
        Q[0, 1:, 0] = 0.5
        return MarkovRenewalProcess(Q, point_initial(1))
    if name == "two-state":
        Q = np.zeros((2, 4, 2))
        Q[0, 1, 0], Q[0, 1, 1] = 0.9, 0.1
        Q[1, 2, :] = [0.05, 0.45]
        Q[1, 3, :] = [0.05, 0.45]
        return MarkovRenewalProcess(Q, point_initial(2))
    if name == "three-state":
        P = np.array([[0.2, 0.5, 0.3], [0.4, 0.2, 0.4], [0.3, 0.3, 0.4]])
        gaps = np.array([[0, 1 / 3, 1 / 3, 1 / 3, 0], [0, 0.5, 0.3, 0.2, 0], [0, 0, 0.5, 0.3, 0.2]])
        Q = np.einsum("xt,xy->xty", gaps, P)
        return MarkovRenewalProcess(Q, point_initial(3))
    raise ValueError(f"unknown toy {name!r}")


TOYS = ("deterministic-gap", "geometric-gap", "three-state")
