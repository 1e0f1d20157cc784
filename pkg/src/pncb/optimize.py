"""MPNM-maximizing search over rotations, energy factors and scattering ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .core import CodebookSet, FactorGraph, OperatorMatrix, build_codebooks
from .lppam import LpPamSpec, n_alpha
from .mcbuild import (
    MotherConstellation,
    PermutationSearchConfig,
    binary_switching,
    codeword_distinctness_check,
)
from .pnmetrics import MetricReport, PnChannelParams, mpnm, pair_q_args

ENERGY_FLOOR = 1e-3


def project_simplex(y, total: float, floor: float = 0.0) -> np.ndarray:
    """Euclidean projection onto {x >= floor, sum(x) = total}."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    s = total - n * floor
    if s < 0:
        raise ValueError("floor too large for the requested total")
    z = y - floor
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - s
    rho = np.flatnonzero(u - css / np.arange(1, n + 1) > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(z - tau, 0.0) + floor


@dataclass(frozen=True)
class DesignSpace:
    theta: tuple
    energy: tuple
    alpha: tuple = ()
    budget: float = 1.0
    alpha_max: float = 4.0

    @classmethod
    def from_vector(cls, x, d_f: int, budget: float, alpha_max: float = 4.0) -> "DesignSpace":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[:d_f]), tuple(x[d_f:2 * d_f]), tuple(x[2 * d_f:]), budget, alpha_max)

    @classmethod
    def corner(cls, d_f: int, T: int, budget: float, alpha_max: float = 4.0) -> "DesignSpace":
        """theta = 0, equal energies, scattering ratios at their lower bound."""
        return cls((0.0,) * d_f, (budget / d_f,) * d_f, (1.0,) * n_alpha(T), budget, alpha_max)

    @property
    def dim(self) -> int:
        return 2 * len(self.theta) + len(self.alpha)

    def vector(self) -> np.ndarray:
        return np.array(self.theta + self.energy + self.alpha, dtype=float)

    def project(self) -> "DesignSpace":
        th = np.clip(self.theta, 0.0, np.pi)
        E = project_simplex(self.energy, self.budget, ENERGY_FLOOR * self.budget)
        a = np.clip(self.alpha, 1.0, self.alpha_max)
        return replace(self, theta=tuple(th), energy=tuple(E), alpha=tuple(a))

    def is_feasible(self, tol: float = 1e-12) -> bool:
        return (
            all(0.0 <= t <= np.pi for t in self.theta)
            and all(e > 0 for e in self.energy)
            and abs(sum(self.energy) - self.budget) <= tol * max(1.0, self.budget)
            and all(1.0 <= a <= self.alpha_max for a in self.alpha)
        )

    def to_dict(self) -> dict:
        return {
            "theta": list(self.theta),
            "energy": list(self.energy),
            "alpha": list(self.alpha),
            "budget": self.budget,
            "alpha_max": self.alpha_max,
        }


@dataclass(frozen=True)
class OptimizerConfig:
    M: int = 4
    T: int = 2
    sigma_p2: float = 0.03
    ebn0_db: float = 14.0
    strategy: str = "differential-evolution"
    population: int = 0  # 0 -> 10 x dimension
    max_evaluations: int = 10_000
    rng_seed: int = 0
    alpha_max: float = 4.0
    polish_fraction: float = 0.1
    objective_mode: str = "active"  # active | exact | pruned
    objective_q: int = 1
    bsa: PermutationSearchConfig = field(default_factory=PermutationSearchConfig)
    report_ebn0_db: float | None = None
    report_sigma_p2: float | None = None

    def __post_init__(self):
        if self.strategy not in ("differential-evolution", "multistart-local"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")


class DesignObjective:
    """Deterministic-given-history map from a design to its MPNM at one operating point.

    ``mode="active"`` scores a candidate by a cheap pruned enumeration
    (``q`` users in error) plus an active set of label pairs that were worst
    on earlier designs. Whenever that upper bound beats the best verified
    value, the candidate is re-scored by the full metric (exact when it fits
    ``max_pairs``, else pruned q=2 plus random pairs) and its ``keep`` worst
    pairs join the active set, so the search cannot settle in a blind spot
    of the cheap enumeration.
    """

    def __init__(self, fg: FactorGraph, M: int, T: int, sigma_p2: float, ebn0_db: float,
                 mode: str = "active", q: int = 1, bsa: PermutationSearchConfig = PermutationSearchConfig(),
                 keep: int = 32, max_active: int = 4096, samples: int = 20_000, max_pairs: int = 1 << 24):
        if mode not in ("active", "pruned", "exact"):
            raise ValueError(f"unknown objective mode {mode!r}")
        self.fg, self.M, self.T = fg, M, T
        self.sigma_p2, self.ebn0_db = sigma_p2, ebn0_db
        self.mode, self.q, self.bsa = mode, q, bsa
        self.keep, self.max_active, self.samples, self.max_pairs = keep, max_active, samples, max_pairs
        self.budget = M * fg.J / fg.K
        self.verified = -math.inf
        self.verifications = 0
        self.active = (np.empty((0, fg.J), int), np.empty((0, fg.J), int))
        self._mc_cache: dict = {}

    def mother(self, alpha) -> MotherConstellation:
        key = tuple(float(a) for a in alpha)
        if key not in self._mc_cache:
            cm = LpPamSpec(self.M, self.T, key).build()
            self._mc_cache[key] = binary_switching(cm, self.fg.N, self.bsa)
        return self._mc_cache[key]

    def codebooks(self, x: DesignSpace, mc: MotherConstellation | None = None) -> CodebookSet:
        mc = mc or self.mother(x.alpha)
        ops = OperatorMatrix(x.energy, x.theta)
        meta = {"lppam": {"M": self.M, "T": self.T, "alpha": list(x.alpha)}}
        return build_codebooks(mc, ops, self.fg, meta)

    def full(self, cbs: CodebookSet, p: PnChannelParams, keep: int = 0) -> MetricReport:
        P = cbs.M**cbs.J
        if P * (P - 1) <= self.max_pairs:
            return mpnm(cbs, p, mode="exact", with_bound=False, with_med=False, keep=keep)
        return mpnm(cbs, p, mode="pruned", q=2, samples=self.samples, seed=0,
                    with_bound=False, with_med=False, keep=keep)

    def __call__(self, x: DesignSpace, mc: MotherConstellation | None = None) -> float:
        x = x.project()
        mc = mc or self.mother(x.alpha)
        if not codeword_distinctness_check(mc)[0]:
            return -math.inf
        cbs = self.codebooks(x, mc)
        p = PnChannelParams.from_ebn0(cbs, self.sigma_p2, self.ebn0_db)
        if self.mode == "exact":
            return self.full(cbs, p).mpnm
        val = mpnm(cbs, p, mode="pruned", q=self.q, samples=0, with_bound=False, with_med=False).mpnm
        if self.mode == "pruned":
            return val
        if len(self.active[0]):
            val = min(val, float(pair_q_args(cbs, *self.active, p)[0].min()))
        if val <= self.verified:
            return val
        r = self.full(cbs, p, keep=self.keep)
        self.verifications += 1
        lw = np.concatenate([r.worst[0], self.active[0]])
        lh = np.concatenate([r.worst[1], self.active[1]])
        _, first = np.unique(np.hstack([lw, lh]), axis=0, return_index=True)
        first = np.sort(first)[: self.max_active]
        self.active = (lw[first], lh[first])
        self.verified = max(self.verified, r.mpnm)
        return r.mpnm


def evaluate_design(x: DesignSpace, fg: FactorGraph, lp_spec: LpPamSpec, sigma_p2: float,
                    ebn0_db: float, mode: str = "exact", q: int = 2) -> float:
    """MPNM of the projected design; -inf when the mother constellation repeats a codeword."""
    return DesignObjective(fg, lp_spec.M, lp_spec.T, sigma_p2, ebn0_db, mode, q)(x)


@dataclass
class OptimizeResult:
    design: DesignSpace
    codebooks: CodebookSet
    report: MetricReport
    objective: float
    trace: list  # (evaluation index, objective, best so far)
    evaluations: int
    budget_exhausted: bool

    def __iter__(self):
        return iter((self.design, self.codebooks, self.report))


class _Budget(Exception):
    pass


class _Counter:
    def __init__(self, objective: DesignObjective, template: DesignSpace, limit: int):
        self.f, self.template, self.limit = objective, template, limit
        self.n = 0
        self.best = -math.inf
        self.best_x = None
        self.trace = []

    def __call__(self, vec) -> float:
        if self.n >= self.limit:
            raise _Budget
        x = DesignSpace.from_vector(vec, len(self.template.theta), self.template.budget,
                                    self.template.alpha_max).project()
        val = self.f(x)
        self.n += 1
        if val > self.best or self.best_x is None:
            self.best, self.best_x = val, x
        self.trace.append((self.n, val, self.best))
        return val


def _differential_evolution(cnt: _Counter, lo, hi, pop_size: int, rng, stop: int):
    dim = len(lo)
    pop = lo + rng.random((pop_size, dim)) * (hi - lo)
    pop[0] = cnt.template.vector()
    fit = np.array([cnt(v) if cnt.n < stop else -np.inf for v in pop])
    while cnt.n < stop:
        best = int(np.argmax(fit))
        for i in range(pop_size):
            if cnt.n >= stop:
                return pop, fit
            a, b = rng.choice([k for k in range(pop_size) if k != i], 2, replace=False)
            F = rng.uniform(0.5, 1.0)
            mutant = np.clip(pop[best] + F * (pop[a] - pop[b]), lo, hi)
            cross = rng.random(dim) < 0.9
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            val = cnt(trial)
            if val >= fit[i]:
                pop[i], fit[i] = trial, val
                if val > fit[best]:
                    best = i
    return pop, fit


def _nelder_mead(cnt: _Counter, starts, lo, hi, stop: int):
    for x0 in starts:
        if cnt.n >= stop:
            return
        remaining = stop - cnt.n
        simplex = [x0] + [np.clip(x0 + 0.05 * (hi - lo) * np.eye(len(x0))[k], lo, hi)
                          for k in range(len(x0))]
        minimize(lambda v: -cnt(np.clip(v, lo, hi)), x0, method="Nelder-Mead",
                 options={"maxfev": remaining, "initial_simplex": np.array(simplex),
                          "xatol": 1e-6, "fatol": 1e-9})


def optimize(cfg: OptimizerConfig, fg: FactorGraph, lp_spec: LpPamSpec | None = None,
             fixed: dict | None = None) -> OptimizeResult:
    """Search the feasible set for the largest MPNM within the evaluation budget.

    The first evaluation is always the feasible corner (theta = 0, equal
    energies, scattering ratios at 1), so ``max_evaluations=1`` returns it.
    ``fixed`` pins coordinates of the design vector (theta, energy, alpha)
    by index; the corner takes those values too.
    """
    M, T = (lp_spec.M, lp_spec.T) if lp_spec else (cfg.M, cfg.T)
    mode, q = cfg.objective_mode, cfg.objective_q
    f = DesignObjective(fg, M, T, cfg.sigma_p2, cfg.ebn0_db, mode, q, cfg.bsa)
    start = DesignSpace.corner(fg.d_f, T, f.budget, cfg.alpha_max)
    d = fg.d_f
    lo = np.array([0.0] * d + [ENERGY_FLOOR * f.budget] * d + [1.0] * n_alpha(T))
    hi = np.array([np.pi] * d + [f.budget] * d + [cfg.alpha_max] * n_alpha(T))
    if fixed:
        v = start.vector()
        for i, val in fixed.items():
            v[i] = lo[i] = hi[i] = val
        start = DesignSpace.from_vector(v, d, f.budget, cfg.alpha_max)
    cnt = _Counter(f, start, cfg.max_evaluations)
    rng = np.random.default_rng(cfg.rng_seed)
    polish = int(cfg.max_evaluations * cfg.polish_fraction)
    try:
        if cfg.strategy == "differential-evolution":
            pop_size = cfg.population or 10 * len(lo)
            pop, fit = _differential_evolution(cnt, lo, hi, pop_size, rng, cfg.max_evaluations - polish)
            order = np.argsort(-fit)[:3]
            _nelder_mead(cnt, [cnt.best_x.vector()] + [pop[i] for i in order], lo, hi, cfg.max_evaluations)
        else:
            starts = [start.vector()] + [lo + rng.random(len(lo)) * (hi - lo) for _ in range(10**6)]
            while cnt.n < cfg.max_evaluations:
                per = max(len(lo) + 2, cfg.max_evaluations // 20)
                _nelder_mead(cnt, [starts.pop(0)], lo, hi, min(cfg.max_evaluations, cnt.n + per))
    except _Budget:
        pass
    exhausted = cnt.n >= cfg.max_evaluations
    best_x, best_val = cnt.best_x, cnt.best
    mc = f.mother(best_x.alpha)
    if cnt.n > 1:
        # one more permutation search on the final scattering ratios
        bsa = replace(cfg.bsa, restarts=4 * cfg.bsa.restarts, rng_seed=cfg.bsa.rng_seed + 1)
        alt = binary_switching(LpPamSpec(M, T, best_x.alpha).build(), fg.N, bsa)
        alt_val = f(best_x, alt)
        if alt_val > best_val:
            mc, best_val = alt, alt_val
    cbs = f.codebooks(best_x, mc)
    cbs.metadata["design"] = best_x.to_dict()
    cbs.metadata["objective"] = {"sigma_p2": cfg.sigma_p2, "ebn0_db": cfg.ebn0_db, "mode": mode, "q": q}
    report = final_report(cbs, cfg.report_sigma_p2 if cfg.report_sigma_p2 is not None else cfg.sigma_p2,
                          cfg.report_ebn0_db if cfg.report_ebn0_db is not None else cfg.ebn0_db)
    return OptimizeResult(best_x, cbs, report, best_val, cnt.trace, cnt.n, exhausted)


def final_report(cbs: CodebookSet, sigma_p2: float, ebn0_db: float, max_pairs: int = 1 << 26,
                 samples: int = 100_000, seed: int = 0) -> MetricReport:
    """Exact enumeration when affordable, else pruned(q=2) plus random pairs."""
    p = PnChannelParams.from_ebn0(cbs, sigma_p2, ebn0_db)
    P = cbs.M**cbs.J
    if P * (P - 1) <= max_pairs:
        return mpnm(cbs, p, mode="exact", max_pairs=max_pairs)
    return mpnm(cbs, p, mode="pruned", q=2, samples=samples, seed=seed)
