"""Experiment drivers behind the command line: each yields CSV rows for one output file."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import quasi_tree as qt
from .config import ExperimentConfig
from .coupling import failure_rate_curve
from .errors import ZeroAlpha
from .finite_chain import default_radius, tmix_table
from .network_core import (
    ElectricalNetwork,
    TwoLiftEnvironment,
    build_superposed_kernel,
    builtin_base,
    read_network_file,
    sample_matching,
    stationary_measure,
    validate,
    write_network_file,
)
from .perm_concentration import (
    chatterjee_bound,
    constants,
    expectation,
    fixed_point_counter,
    monte_carlo_tail,
    path_poly,
    random_poly,
    tail_bound,
    variance,
)
from .renewal import coalescence_tail, point_initial, renewal_distribution_exact, toy_process
from .stats import mean_and_stderr, wilson_interval

TAGS = {"env": 1, "rates": 2, "regen": 3, "coupling": 4, "concentration": 5, "renewal": 6, "base": 7}


def rng_for(cfg: ExperimentConfig, tag: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, TAGS[tag], *keys]))


def seed_for(cfg: ExperimentConfig, tag: str, *keys: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, TAGS[tag], *keys]).generate_state(1, dtype=np.uint64)[0])


def make_base(cfg: ExperimentConfig, n: int, rng: np.random.Generator | None = None) -> ElectricalNetwork:
    """Builtin base by name, or a network file (its own size wins over ``n``)."""
    choice = cfg.base.strip()
    if Path(choice).is_file():
        net, _ = read_network_file(choice)
        return net
    return builtin_base(choice, n, rng if rng is not None else rng_for(cfg, "base", n))


def radius_for(cfg: ExperimentConfig, n: int) -> int:
    return cfg.radius if cfg.radius > 0 else default_radius(n)


def environment(cfg: ExperimentConfig, n: int, replica: int) -> TwoLiftEnvironment:
    rng = rng_for(cfg, "env", n, replica)
    base = make_base(cfg, n, rng)
    return TwoLiftEnvironment(base, sample_matching(base.vertex_count // 2, rng), cfg.alpha, cfg.beta)


# ------------------------------------------------------------------ gen-env

ENV_HEADER = ["n", "replica", "file", "edges", "valid"]


def gen_env(cfg: ExperimentConfig, out: Path) -> Iterator[list]:
    for n in cfg.n:
        for r in range(cfg.seeds):
            env = environment(cfg, n, r)
            name = f"env_n{n}_r{r}.txt"
            write_network_file(out / name, env.base, env.eta)
            yield [env.n, r, name, len(env.base.edges()), validate(env).ok]


# ------------------------------------------------------------------- cutoff

CUTOFF_HEADER = ["n", "seed", "eps", "tmix_max", "tmix_min", "ratio", "tmix_median", "log_n_over_h", "status"]
PROFILE_HEADER = ["n", "seed", "t", "tv", "tv_min"]


def cutoff(cfg: ExperimentConfig, profile: Callable[[list], None]) -> Iterator[list]:
    """Two rows per (n, replica), one per eps; ``tv`` in the profile is the worst start."""
    lo, hi = sorted(cfg.eps)
    for n in cfg.n:
        for r in range(cfg.seeds):
            env = environment(cfg, n, r)
            kernel = build_superposed_kernel(env)
            _, lift = stationary_measure(env)
            table, curves = tmix_table(kernel, lift, [lo, hi], cfg.t_max)
            for t, tv in enumerate(curves):
                profile([env.n, r, t, float(tv.max()), float(tv.min())])
            compare = math.log(env.n) / cfg.entropy if cfg.entropy > 0 else None
            if np.any(table < 0):
                for eps in (lo, hi):
                    yield [env.n, r, eps, None, None, None, None, compare, "not-mixing"]
                continue
            slow, fast = int(table[:, 0].max()), int(table[:, 1].min())
            ratio = float("inf") if fast == 0 and slow > 0 else (1.0 if fast == 0 else slow / fast)
            for k, eps in enumerate((lo, hi)):
                yield [env.n, r, eps, int(table[:, k].max()), int(table[:, k].min()), ratio,
                       float(np.median(table[:, k])), compare, "ok"]


# -------------------------------------------------------------------- rates

RATES_HEADER = ["quantity", "estimator", "n", "t", "estimate", "stderr", "samples"]


def rates(cfg: ExperimentConfig, report: Callable[[str], None]) -> Iterator[list]:
    for n in cfg.n:
        model = qt.QuasiTreeModel.build(make_base(cfg, n), cfg.alpha, cfg.beta)
        n = model.n
        for t in cfg.horizons:
            d = qt.estimate_drift(model, cfg.alpha, cfg.beta, t, cfg.samples, seed_for(cfg, "rates", n, t, 0),
                                  cfg.cert)
            yield ["drift", "direct", n, t, d.direct.estimate, d.direct.stderr, d.direct.samples]
            yield ["drift", "regen-ratio", n, t, d.ratio.estimate, d.ratio.stderr, d.ratio.samples]
        h_values = []
        for t in cfg.horizons:
            e = qt.estimate_entropy_rate(model, cfg.alpha, cfg.beta, t, radius_for(cfg, n), cfg.backtrack, cfg.samples,
                                         seed_for(cfg, "rates", n, t, 1), cfg.budget, cfg.cert)
            h_values.append(e.h.estimate)
            yield ["entropy", "direct", n, t, e.h.estimate, e.h.stderr, e.h.samples]
            yield ["entropy", "std", n, t, e.std, None, e.h.samples]
            yield ["entropy", "regen-ratio", n, t, e.ratio.estimate, e.ratio.stderr, e.ratio.samples]
        if len(h_values) >= 2:
            gap = abs(h_values[0] - h_values[1]) / abs(h_values[1])
            report(f"entropy stability n={n}: relative change {gap:.4f} {'PASS' if gap <= 0.05 else 'FAIL'}")
        floors = qt.escape_floor_sample(model, cfg.alpha, cfg.beta, cfg.escape_envs, cfg.escape_horizon,
                                        cfg.escape_samples, seed_for(cfg, "rates", n, 2))
        m, se = mean_and_stderr(floors)
        yield ["escape", "min", n, cfg.escape_horizon, float(floors.min()), None, cfg.escape_envs]
        yield ["escape", "mean", n, cfg.escape_horizon, m, se, cfg.escape_envs]
        ok = floors.min() > cfg.escape_floor
        report(f"escape floor n={n}: min {floors.min():.4f} vs {cfg.escape_floor} {'PASS' if ok else 'FAIL'}")


# -------------------------------------------------------------------- regen

REGEN_HEADER = ["n", "replica", "k", "time", "entry_type", "level", "censored"]


def regen(cfg: ExperimentConfig) -> Iterator[list]:
    for n in cfg.n:
        model = qt.QuasiTreeModel.build(make_base(cfg, n), cfg.alpha, cfg.beta)
        records = qt.regeneration_records(model, cfg.alpha, cfg.beta, cfg.regen_ticks, cfg.regen_samples,
                                          seed_for(cfg, "regen", model.n), cfg.cert)
        for r, recs in enumerate(records):
            for k, rec in enumerate(recs, 1):
                yield [model.n, r, k, rec.time, rec.entry_type, rec.level, rec.censored]


# ----------------------------------------------------------------- coupling

COUPLING_HEADER = ["n", "ticks", "backtrack", "samples", "failures", "rate"]


def coupling(cfg: ExperimentConfig) -> Iterator[list]:
    rows = failure_rate_curve(lambda n: make_base(cfg, n), cfg.alpha, cfg.beta, cfg.backtrack, cfg.ticks, cfg.coupling_runs,
                              seed_for(cfg, "coupling") % 2 ** 32, ns=cfg.n, radius=cfg.radius or None)
    for row in rows:
        yield [row.n, row.ticks, row.backtrack, row.samples, row.failures, row.rate]


# ------------------------------------------------------------ concentration

TAILS_HEADER = ["phi", "n", "degree", "multiplier", "t", "hits", "samples", "empirical", "slack_lower",
                "bound_theorem", "bound_corollary", "bound", "bound_1d", "ok"]


def phi_battery(cfg: ExperimentConfig) -> Iterator[tuple[str, object]]:
    """Fixed-point counter, random nonnegative degree-2/3 maps, and a path-counting map."""
    rng = rng_for(cfg, "concentration", 0)
    largest = max(cfg.perm_n)
    yield "fixed-points", fixed_point_counter(largest)
    for k in range(cfg.polys):
        n = cfg.perm_n[k % len(cfg.perm_n)]
        d = 2 + (k // len(cfg.perm_n)) % 2
        yield f"random-{k}", random_poly(n, d, 20 * n, rng)
    yield "paths", path_poly(cfg.path_n, cfg.path_degree, rng)


def tail_rows(name: str, phi, multipliers, samples: int, rng: np.random.Generator) -> Iterator[list]:
    mean = expectation(phi)
    sd = math.sqrt(max(variance(phi), 0.0))
    const = constants(phi, mean=mean)
    ts = [m * sd for m in multipliers]
    for m, est in zip(multipliers, monte_carlo_tail(phi, ts, samples, rng, center=mean)):
        thm = tail_bound(const, est.t, "upper")
        cor = tail_bound(const, est.t, "corollary")
        bound = min(thm, cor)
        lower = wilson_interval(est.hits, samples, z=3.0)[0]
        one_d = chatterjee_bound(phi.max_coefficient(), mean, est.t) if phi.degree == 1 else None
        ok = lower <= bound and (one_d is None or lower <= one_d)
        yield [name, phi.n, phi.degree, m, est.t, est.hits, samples, est.estimate, lower, thm, cor, bound, one_d, ok]


def concentration(cfg: ExperimentConfig) -> Iterator[list]:
    for k, (name, phi) in enumerate(phi_battery(cfg)):
        yield from tail_rows(name, phi, cfg.multipliers, cfg.perm_samples, rng_for(cfg, "concentration", 1, k))


# ------------------------------------------------------------------ renewal

RENEWAL_HEADER = ["toy", "t", "l1_dev", "lost", "trend"]
MINEKA_HEADER = ["toy", "status", "k", "tail", "slope"]


def _start_pair(states: int):
    return point_initial(states, 0, 0), point_initial(states, states - 1, 3)


def renewal(cfg: ExperimentConfig) -> Iterator[list]:
    for toy in cfg.toys:
        table = renewal_distribution_exact(toy_process(toy), cfg.renewal_t)
        early = float(np.max(table.l1[: min(10, len(table.l1))]))
        trend = "decreasing" if table.l1[-1] < 0.5 * early else "not-decreasing"
        for t in range(cfg.renewal_t + 1):
            yield [toy, t, float(table.l1[t]), float(table.lost[t]), trend]


def mineka(cfg: ExperimentConfig) -> Iterator[list]:
    for j, toy in enumerate(cfg.toys):
        mrp = toy_process(toy)
        nu1, nu2 = _start_pair(mrp.states)
        try:
            fit = coalescence_tail(mrp, nu1, nu2, cfg.mineka_ks, cfg.mineka_runs, rng_for(cfg, "renewal", j))
        except ZeroAlpha:
            yield [toy, "zero-alpha", None, None, None]
            continue
        for k, tail in zip(fit.ks, fit.tails):
            yield [toy, "ok", k, tail, fit.slope]
