"""Regularity constants and the approximation error budgets of projected
backward induction, with the operation-count complexity report"""

import logging
import time
from dataclasses import dataclass, field
from math import log
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import sympy as sp
from scipy.stats import linregress  # type: ignore
from sympy.calculus.util import maximum, minimum

from sqsdplan.qsd.belief import BeliefGrid, posterior_rows, project_ties
from sqsdplan.qsd.constants import PFLOOR, PFLOOR_ETA, V_SUP
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.errors import AllDegenerate, CountersEmpty, EtaNonPositive, MissingParams
from sqsdplan.qsd.planner import PlannerConfig, ValueTable, oracle_on_grid, plan, tie_average
from sqsdplan.qsd.quantum import DensityOperator, MeasurementLibrary, born_prob
from sqsdplan.utils import circular_distance, circular_gaps, header, underline


logger = logging.getLogger(__name__)


@dataclass
class RegularityConstants:
    C_P_b: float
    C_tau_b: float
    L_ell: float
    eta: float
    L_seq: List[float]
    K_seq: List[float]
    V_sup: float = V_SUP
    C_tau_sampled: Optional[float] = None
    L_ell_analytic: Optional[float] = None
    provenance: Dict[str, str] = field(default_factory=dict)

    def asdict(self) -> Dict:
        return {
            "C_P_b": self.C_P_b,
            "C_tau_b": self.C_tau_b,
            "C_tau_sampled": self.C_tau_sampled,
            "L_ell": self.L_ell,
            "L_ell_analytic": self.L_ell_analytic,
            "eta": self.eta,
            "V_sup": self.V_sup,
            "L_seq": list(self.L_seq),
            "K_seq": list(self.K_seq),
            "provenance": dict(self.provenance),
        }


@dataclass
class ErrorBudget:
    """Budget at stage t. The grid variant bounds the error at grid points,
    the arbitrary-belief variant bounds the projected estimator anywhere on
    the simplex. per_stage holds (s, action partial, belief partial) sums from
    stage s to the end."""

    t: int
    delta_B: float
    delta_A: float
    belief_term: float
    action_term: float
    total: float
    belief_term_arbitrary: float
    total_arbitrary: float
    uniform_belief: float
    uniform_action: float
    per_stage: List[Tuple[int, float, float]]

    def asdict(self) -> Dict:
        d = dict(self.__dict__)
        d["per_stage"] = [list(r) for r in self.per_stage]
        return d

    def report(self) -> str:  # pragma: no cover
        s = f"{header('ERROR BUDGET', '=')}\n"
        s += f"stage t = {self.t}, delta_B = {self.delta_B:.6g}, delta_A = {self.delta_A:.6g}\n"
        s += f"{'':>24} {'grid':>14} {'arbitrary b':>14}\n"
        s += f"{'belief term':>24} {self.belief_term:14.6g} {self.belief_term_arbitrary:14.6g}\n"
        s += f"{'action term':>24} {self.action_term:14.6g} {self.action_term:14.6g}\n"
        s += f"{'total':>24} {self.total:14.6g} {self.total_arbitrary:14.6g}\n"
        s += f"{'uniform-L shortcut':>24} {self.uniform_belief:14.6g}\n"
        s += f"{'uniform-K shortcut':>24} {self.uniform_action:14.6g}\n"
        hdr = f"{'s':>4} {'action sum':>14} {'belief sum':>14}"
        s += f"{hdr}\n{underline(hdr)}\n"
        for st, a, b in self.per_stage:
            s += f"{st:4d} {a:14.6g} {b:14.6g}\n"
        return s


# Belief-side constants


def constant_C_P_b(table) -> float:
    """max over (a, o) of sum_i l_i(a, o)"""
    return float(table.values.sum(axis=0).max())


def constant_C_tau_analytic(C_P_b: float, eta: float) -> float:
    if eta <= 0:
        raise EtaNonPositive(eta)
    return C_P_b / eta + C_P_b / eta**2


def constant_C_tau_sampled(table, eta: float, samples: int = 10_000, seed: int = 0) -> float:
    """Largest ratio ||tau(b) - tau(b')|| / ||b - b'|| (infinity norms) over
    random belief pairs, restricted to outcomes whose probability is at least
    eta under both beliefs"""
    rng = np.random.default_rng(seed)
    M = table.hypotheses
    b1 = rng.dirichlet(np.ones(M), size=samples)
    b2 = rng.dirichlet(np.ones(M), size=samples)
    gap = np.abs(b1 - b2).max(axis=1)
    best = 0.0
    for a in range(table.actions):
        for o in range(table.outcomes):
            lik = table.values[:, a, o]
            p1, p2 = b1 @ lik, b2 @ lik
            ok = (p1 >= eta) & (p2 >= eta) & (gap > 0)
            if not np.any(ok):
                continue
            t1 = posterior_rows(b1[ok], np.broadcast_to(lik, b1[ok].shape))
            t2 = posterior_rows(b2[ok], np.broadcast_to(lik, b2[ok].shape))
            best = max(best, float((np.abs(t1 - t2).max(axis=1) / gap[ok]).max()))
    return best


# Action-side constants


@dataclass(frozen=True)
class LipschitzEstimate:
    finite_difference: float
    analytic: Optional[float]
    samples: int


# Likelihood templates l(x) of the built-in families, as functions of the
# angle offset x, with the interval on which the offset varies
_TEMPLATES = {
    "binary": (lambda x: sp.cos(x) ** 2, sp.pi),
    "trine": (lambda x: (1 + sp.cos(x)) / 3, 2 * sp.pi),
}


def analytic_L_ell(family: str) -> Optional[float]:
    """Largest |dl/dx| of the family template, from sympy; None for families
    without a template"""
    if family not in _TEMPLATES:
        return None
    x = sp.symbols("x", real=True)
    f, span = _TEMPLATES[family]
    d = sp.diff(f(x), x)
    dom = sp.Interval(0, span)
    bound = sp.Max(sp.Abs(maximum(d, x, dom)), sp.Abs(minimum(d, x, dom)))
    return float(bound)


def _sample_params(lib: MeasurementLibrary, refine: int) -> npt.NDArray[np.float64]:
    p = np.asarray(lib.params, dtype=float)
    if lib.factory is None or lib.period is None:
        return p
    nxt = np.append(p[1:], p[0] + lib.period)
    steps = np.arange(refine) / refine
    return (p[:, None] + (nxt - p)[:, None] * steps[None, :]).ravel()


def _likelihoods(povms, states: Sequence[DensityOperator]) -> npt.NDArray[np.float64]:
    out = np.empty((len(states), len(povms), povms[0].outcome_count))
    for i, rho in enumerate(states):
        for a, f in enumerate(povms):
            for o, e in enumerate(f.effects):
                out[i, a, o] = born_prob(e, rho)
    return out


def constant_L_ell(lib: MeasurementLibrary, states: Sequence[DensityOperator], refine: int = 10) -> LipschitzEstimate:
    """Action-Lipschitz constant of the likelihoods in the circular parameter
    distance. The finite-difference value is the largest ratio between
    adjacent sample points on a grid `refine` times denser than the library."""
    if lib.params is None:
        raise MissingParams()
    samples = _sample_params(lib, refine)
    if samples.size < 2:
        fd = 0.0
    else:
        if lib.factory is not None and lib.period is not None:
            where = np.mod(samples, lib.period)
            povms = [lib.factory(float(x)) for x in where]
        else:
            where = samples
            povms = list(lib.povms)
        lik = _likelihoods(povms, states)
        n = samples.size
        pairs = range(n) if lib.period is not None else range(n - 1)
        period = lib.period if lib.period is not None else np.inf
        diff, dist = [], []
        for k in pairs:
            j = (k + 1) % n
            here, there = lik[:, k, :], lik[:, j, :]
            if where[j] < where[k]:
                # crossing the period may rotate the outcome labels
                d = min(float(np.abs(np.roll(there, s, axis=1) - here).max()) for s in range(lik.shape[2]))
            else:
                d = float(np.abs(there - here).max())
            diff.append(d)
            dist.append(circular_distance(samples[k], samples[j], period))
        diff_a, dist_a = np.array(diff), np.array(dist)
        ok = dist_a > 0
        fd = float((diff_a[ok] / dist_a[ok]).max()) if np.any(ok) else 0.0
    analytic = analytic_L_ell(lib.family)
    if analytic is not None:
        logger.debug("L_ell finite difference %.6g, analytic %.6g", fd, analytic)
    return LipschitzEstimate(fd, analytic, int(samples.size))


@dataclass(frozen=True)
class EtaEstimate:
    eta: float
    point_id: int
    action: int
    outcome: int


def estimate_eta(table, grid: BeliefGrid, pfloor_eta: float = PFLOOR_ETA) -> EtaEstimate:
    """Smallest outcome probability above the floor over grid beliefs, actions
    and outcomes, with the place where it is attained"""
    p = np.einsum("ki,iao->kao", grid.points, table.values)
    kept = np.where(p > pfloor_eta, p, np.inf)
    flat = int(np.argmin(kept))
    eta = float(kept.flat[flat])
    if not np.isfinite(eta):
        raise AllDegenerate(pfloor_eta)
    k, a, o = np.unravel_index(flat, p.shape)
    logger.info("eta = %.6g at point %d, action %d, outcome %d", eta, k, a, o)
    return EtaEstimate(eta, int(k), int(a), int(o))


# Stage sequences and budgets


def lipschitz_L_seq(C_P_b: float, C_tau_b: float, H: int, outcomes: int, V_sup: float = V_SUP) -> List[float]:
    L = [0.0] * (H + 1)
    L[H] = 1.0
    for t in range(H - 1, -1, -1):
        L[t] = max(1.0, outcomes * (C_P_b * V_sup + L[t + 1] * C_tau_b))
    return L


def constant_K_seq(L_ell: float, eta: float, L_seq: Sequence[float], outcomes: int, V_sup: float = V_SUP) -> List[float]:
    if eta <= 0:
        raise EtaNonPositive(eta)
    H = len(L_seq) - 1
    return [outcomes * (L_ell * V_sup + L_seq[t + 1] * (L_ell / eta + L_ell / eta**2)) for t in range(H)]


def delta_A(lib: MeasurementLibrary) -> float:
    """Action covering radius: half the largest circular gap between adjacent
    library parameters"""
    if lib.params is None or lib.period is None:
        raise MissingParams()
    return float(circular_gaps(lib.params, lib.period).max() / 2)


def regularity_constants(cfg: PlannerConfig, states: Sequence[DensityOperator], samples: int = 10_000, seed: int = 0) -> RegularityConstants:
    table = cfg.table
    C_P = constant_C_P_b(table)
    eta = estimate_eta(table, cfg.grid).eta
    C_tau = constant_C_tau_analytic(C_P, eta)
    C_tau_s = constant_C_tau_sampled(table, eta, samples, seed)
    prov = {"C_P_b": "analytic", "C_tau_b": "analytic", "eta": "grid minimum"}
    if cfg.library.params is not None:
        est = constant_L_ell(cfg.library, states)
        L_ell = est.finite_difference if est.analytic is None else est.analytic
        prov["L_ell"] = "finite differences" if est.analytic is None else "analytic"
        L_ell_analytic = est.analytic
    else:
        L_ell, L_ell_analytic = 0.0, None
        prov["L_ell"] = "untagged library"
    L = lipschitz_L_seq(C_P, C_tau, cfg.horizon, table.outcomes)
    K = constant_K_seq(L_ell, eta, L, table.outcomes)
    logger.info("C_P_b=%.6g C_tau_b=%.6g (sampled %.6g) L_ell=%.6g eta=%.6g", C_P, C_tau, C_tau_s, L_ell, eta)
    return RegularityConstants(C_P, C_tau, L_ell, eta, L, K, V_SUP, C_tau_s, L_ell_analytic, prov)


def total_budget(consts: RegularityConstants, d_A: float, d_B: float, t: int = 0) -> ErrorBudget:
    L, K = consts.L_seq, consts.K_seq
    H = len(L) - 1
    if not 0 <= t <= H:
        raise ValueError(f"stage t must lie in [0, {H}], got {t}")
    action = d_A * sum(K[t:H])
    belief = d_B * sum(L[t + 1 : H + 1])
    belief_arb = d_B * sum(L[t : H + 1])
    per_stage = [(s, d_A * sum(K[s:H]), d_B * sum(L[s + 1 : H + 1])) for s in range(t, H + 1)]
    uni_b = (H - t) * max(L) * d_B
    uni_a = (H - t) * (max(K) if K else 0.0) * d_A
    return ErrorBudget(t, d_B, d_A, belief, action, belief + action, belief_arb, belief_arb + action, uni_b, uni_a, per_stage)


# Sampled validity checks


def belief_lipschitz_ratios(values: ValueTable) -> List[float]:
    """Largest |V_t(b) - V_t(b')| / ||b - b'|| over neighbouring grid pairs,
    per stage"""
    grid = values.grid
    pairs = np.array([(i, j) for i in range(grid.size) for j in grid.neighbours(i) if j > i])
    if pairs.size == 0:
        return [0.0] * (values.horizon + 1)
    step = 1.0 / grid.resolution
    return [float(np.abs(values.values[t, pairs[:, 0]] - values.values[t, pairs[:, 1]]).max() / step) for t in range(values.horizon + 1)]


def action_lipschitz_ratios(cfg: PlannerConfig, values: ValueTable) -> List[float]:
    """Largest |G_t(b, a) - G_t(b, a')| / d(a, a') over grid beliefs and
    adjacent library parameters, where G_t is the continuation value
    sum_o p_o V_{t+1}(Proj(tau)), per stage t < H"""
    lib = cfg.library
    if lib.params is None or lib.period is None:
        raise MissingParams()
    A = len(lib)
    if A < 2:
        return [0.0] * cfg.horizon
    params = np.asarray(lib.params)
    dist = np.array([circular_distance(params[a], params[(a + 1) % A], lib.period) for a in range(A)])
    w = cfg.grid.points
    joint = w[:, :, None, None] * cfg.table.values[None]
    p = joint.sum(axis=1)
    valid = p > PFLOOR
    ties = np.full(p.shape + (2**cfg.M,), -1, dtype=np.int64)
    post = np.moveaxis(joint, 1, -1)[valid] / p[valid][:, None]
    ties[valid], _ = project_ties(post, cfg.grid, method="local")
    out = []
    for t in range(cfg.horizon):
        g = np.where(valid, p * tie_average(ties, values.values[t + 1]), 0.0).sum(axis=2)
        diff = np.abs(np.roll(g, -1, axis=1) - g)
        out.append(float((diff / dist[None, :]).max()))
    return out


def empirical_error(values: ValueTable, oracle: ValueTable) -> List[float]:
    """max over grid points of |oracle - planned value| per stage"""
    ref = oracle_on_grid(oracle, values.grid)
    return [float(x) for x in np.abs(ref - values.values).max(axis=1)]


# Complexity


@dataclass
class ComplexityReport:
    mode: str
    counts: Dict[str, int]
    horizon: int
    grid_size: int
    actions: int
    outcomes: int
    hypotheses: int
    closed_projections: int
    closed_candidates: int
    matches: bool
    predicted_scale: float

    def asdict(self) -> Dict:
        return dict(self.__dict__)

    def report(self) -> str:  # pragma: no cover
        s = f"{header(f'OFFLINE COMPLEXITY ({self.mode})', '=')}\n"
        s += f"H = {self.horizon}, |B| = {self.grid_size}, |A| = {self.actions}, |O| = {self.outcomes}, M = {self.hypotheses}\n"
        s += f"{'measured projection candidates':>36}: {self.counts['proj_candidates']}\n"
        s += f"{'closed count (H|B||A||O| - skipped)|B|':>36}: {self.closed_candidates}\n"
        s += f"{'match':>36}: {self.matches}\n"
        s += f"{'H|A||O|M delta_B^-2(M-1)':>36}: {self.predicted_scale:.6g}\n"
        return s


def complexity_report(cfg: PlannerConfig, counters: CostCounters) -> ComplexityReport:
    """Measured atomic counts against the closed count of the linear-scan
    planner. The closed count H|B||A||O| - skipped applies to raw mode; in
    memoized mode projections are computed once with the local search."""
    if counters.total() == 0:
        raise CountersEmpty()
    H, K = cfg.horizon, cfg.grid.size
    A, O, M = cfg.table.actions, cfg.table.outcomes, cfg.M
    if counters.mode == "raw":
        projections = H * K * A * O - counters.skipped
        candidates = projections * K
    else:
        projections = (K * A * O - counters.skipped // max(H, 1)) if H > 0 else 0
        candidates = projections * 2**M
    matches = counters.projections == projections and counters.proj_candidates == candidates
    d_B = 1.0 / (2 * cfg.grid.resolution)
    predicted = H * A * O * M * d_B ** (-2 * (M - 1))
    return ComplexityReport(counters.mode, counters.counts(), H, K, A, O, M, projections, candidates, matches, predicted)


@dataclass
class ScalingResult:
    rows: List[Dict]
    slope: float
    intercept: float
    rvalue: float

    def report(self) -> str:  # pragma: no cover
        hdr = f"{'N':>6} {'|B|':>8} {'proj_candidates':>16} {'wall [s]':>10}"
        s = f"{header('SCALING', '=')}\n{hdr}\n{underline(hdr)}\n"
        for r in self.rows:
            s += f"{r['N']:6d} {r['size']:8d} {r['counts']['proj_candidates']:16d} {r['wall']:10.3f}\n"
        s += f"log-log slope = {self.slope:.4f} (r = {self.rvalue:.6f})\n"
        return s


def scaling_experiment(make_cfg: Callable[[int], PlannerConfig], grids: Sequence[int]) -> ScalingResult:
    """Plan at each resolution in raw mode and fit log(candidate scans)
    against log |B|"""
    rows = []
    for N in grids:
        cfg = make_cfg(N)
        counters = CostCounters()
        start = time.perf_counter()
        plan(cfg, counters)
        wall = time.perf_counter() - start
        rows.append({"N": N, "size": cfg.grid.size, "counts": counters.counts(), "wall": wall})
        logger.info("N=%d |B|=%d candidates=%d in %.3f s", N, cfg.grid.size, counters.proj_candidates, wall)
    if len(rows) < 2:
        raise ValueError("scaling fit needs at least two grid resolutions")
    x = [log(r["size"]) for r in rows]
    y = [log(max(r["counts"]["proj_candidates"], 1)) for r in rows]
    fit = linregress(x, y)
    return ScalingResult(rows, float(fit.slope), float(fit.intercept), float(fit.rvalue))

