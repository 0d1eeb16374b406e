"""Worked scenarios: binary pure-state discrimination in closed form and the
trine ensemble maps, routing and two-stage structure"""

import logging
from dataclasses import dataclass, field
from math import cos, pi, sin
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from sqsdplan.qsd.belief import Belief, BeliefGrid, build_grid, embed, obs_prob
from sqsdplan.qsd.constants import PFLOOR
from sqsdplan.qsd.errors import OutOfRange, ZeroProbabilityOutcome
from sqsdplan.qsd.planner import ActionKind, PlannerConfig, PolicyTable, ValueTable, one_step_values, plan
from sqsdplan.qsd.quantum import (
    LikelihoodTable,
    MeasurementLibrary,
    binary_library,
    binary_states,
    build_likelihood_table,
    trine_library,
    trine_states,
)
from sqsdplan.utils import header, underline


logger = logging.getLogger(__name__)

# Threshold above which a one-step gain counts as positive
GAIN_TOL: float = 1e-9


# Binary scenario


@dataclass
class BinaryScenario:
    """Two pure qubit states |0> and cos(theta)|0> + sin(theta)|1>, measured
    with projective bases rotated by phi. The library is uniform on [0, pi)
    with the one-step maximizer theta/2 + pi/4 inserted."""

    theta: float
    library_size: int = 181
    c_meas: float = 0.01
    horizon: int = 2
    resolution: int = 2000
    insert_maximizer: bool = True

    def __post_init__(self):
        if not 0 < self.theta < pi / 2:
            raise OutOfRange("theta", self.theta, 0.0, pi / 2)

    def states(self):
        return binary_states(self.theta)

    def library(self) -> MeasurementLibrary:
        return binary_library(self.library_size, self.theta if self.insert_maximizer else None)

    def table(self) -> LikelihoodTable:
        return build_likelihood_table(self.states(), self.library())

    def config(self, prior: Optional[Belief] = None, memoize: bool = True, workers: int = 1) -> PlannerConfig:
        lib = self.library()
        table = build_likelihood_table(self.states(), lib)
        prior = Belief.uniform(2) if prior is None else prior
        grid = build_grid(self.resolution, 2)
        return PlannerConfig(self.horizon, self.c_meas, grid, lib, table, prior, memoize, workers)


@dataclass(frozen=True)
class BinaryClosedForm:
    p0: float
    p1: float
    J1: float
    stopval: float
    pr0: float
    pr1: float


def binary_closed_forms(theta: float, p: float, phi: float) -> BinaryClosedForm:
    """Posteriors of hypothesis 1 after each outcome and the one-step value
    J1(p, phi) = max(p cos^2 phi, (1-p) cos^2(theta-phi))
               + max(p sin^2 phi, (1-p) sin^2(theta-phi))"""
    c1, s1 = cos(phi) ** 2, sin(phi) ** 2
    c2, s2 = cos(theta - phi) ** 2, sin(theta - phi) ** 2
    pr0 = p * c1 + (1 - p) * c2
    pr1 = p * s1 + (1 - p) * s2
    if pr0 <= PFLOOR:
        raise ZeroProbabilityOutcome(0, pr0)
    if pr1 <= PFLOOR:
        raise ZeroProbabilityOutcome(1, pr1)
    J1 = max(p * c1, (1 - p) * c2) + max(p * s1, (1 - p) * s2)
    return BinaryClosedForm(p * c1 / pr0, p * s1 / pr1, J1, max(p, 1 - p), pr0, pr1)


def default_p_grid() -> npt.NDArray[np.float64]:
    return np.linspace(1e-3, 1 - 1e-3, 2001)


def _intervals(x: npt.NDArray[np.float64], mask: npt.NDArray[np.bool_]) -> List[Tuple[float, float]]:
    out = []
    start = None
    for k, m in enumerate(mask):
        if m and start is None:
            start = k
        if not m and start is not None:
            out.append((float(x[start]), float(x[k - 1])))
            start = None
    if start is not None:
        out.append((float(x[start]), float(x[-1])))
    return out


@dataclass
class GainCurve:
    p: npt.NDArray[np.float64]
    j1star: npt.NDArray[np.float64]
    gain: npt.NDArray[np.float64]
    phi_star: npt.NDArray[np.float64]
    c_meas: float
    intervals: List[Tuple[float, float]]

    def report(self) -> str:  # pragma: no cover
        s = f"{header('ONE-STEP GAIN', '=')}\n"
        k = int(np.argmin(np.abs(self.p - 0.5)))
        s += f"G({self.p[k]:.4f}) = {self.gain[k]:.6f}, max G = {self.gain.max():.6f}\n"
        s += f"measurement region G(p) > {self.c_meas}: " + ", ".join(f"[{a:.4f}, {b:.4f}]" for a, b in self.intervals) + "\n"
        return s


def _binary_rows(p: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return np.column_stack([p, 1 - p])


def binary_gain_curve(
    theta: float, p_grid: Optional[Sequence[float]] = None, lib: Optional[MeasurementLibrary] = None, c_meas: float = 0.0
) -> GainCurve:
    """G(p) = max over the library of J1(p, phi) - StopVal(p), through the
    generic likelihood pipeline. The measurement region {G > c_meas} is
    reported as a list of intervals of the p-grid."""
    p = default_p_grid() if p_grid is None else np.asarray(p_grid, dtype=float)
    lib = binary_library(181, theta) if lib is None else lib
    table = build_likelihood_table(binary_states(theta), lib)
    j = one_step_values(_binary_rows(p), table)
    best = np.argmax(j, axis=1)
    j1 = j[np.arange(p.size), best]
    g = np.maximum(0.0, j1 - np.maximum(p, 1 - p))
    phi = np.array([lib.param(int(a)) for a in best], dtype=float)
    return GainCurve(p, j1, g, phi, c_meas, _intervals(p, g > c_meas))


@dataclass
class BellmanH2:
    p: npt.NDArray[np.float64]
    V2: npt.NDArray[np.float64]
    V1: npt.NDArray[np.float64]
    V0: npt.NDArray[np.float64]


def _binary_branches(
    theta: float, p: npt.NDArray[np.float64], phi: npt.NDArray[np.float64]
) -> Tuple[Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]], ...]:
    """(probability, posterior) of outcomes 0 and 1 on the (p, phi) mesh"""
    P = p[:, None]
    c1, s1 = np.cos(phi) ** 2, np.sin(phi) ** 2
    c2, s2 = np.cos(theta - phi) ** 2, np.sin(theta - phi) ** 2
    out = []
    for a, b in ((c1, c2), (s1, s2)):
        pr = P * a + (1 - P) * b
        post = np.where(pr > PFLOOR, P * a / np.where(pr > PFLOOR, pr, 1.0), 0.0)
        out.append((np.where(pr > PFLOOR, pr, 0.0), post))
    return tuple(out)


def _continue(theta: float, c_meas: float, p: npt.NDArray[np.float64], phi: npt.NDArray[np.float64], v_next) -> npt.NDArray[np.float64]:
    """max over phi of -c + sum_o Pr_o V_next(posterior_o), in row chunks"""
    out = np.empty(p.size)
    rows = max(1, 1_000_000 // phi.size)
    for lo in range(0, p.size, rows):
        hi = min(p.size, lo + rows)
        q = np.full((hi - lo, phi.size), -c_meas)
        for pr, post in _binary_branches(theta, p[lo:hi], phi):
            q += pr * v_next(post)
        out[lo:hi] = q.max(axis=1)
    return out


def binary_bellman_h2(
    theta: float, c_meas: float, phi_grid: Sequence[float], p_grid: Optional[Sequence[float]] = None
) -> BellmanH2:
    """Exact two-stage recursion evaluated pointwise on the p-grid:
    V2 = S, V1 = max(S, sup_phi[-c + sum_o Pr_o S(p'_o)]),
    V0 = max(S, sup_phi[-c + sum_o Pr_o V1(p'_o)])"""
    p = default_p_grid() if p_grid is None else np.asarray(p_grid, dtype=float)
    phi = np.asarray(phi_grid, dtype=float)

    def S(x):
        return np.maximum(x, 1 - x)

    def V1(x):
        flat = np.ravel(x)
        return np.maximum(S(flat), _continue(theta, c_meas, flat, phi, S)).reshape(np.shape(x))

    v2 = S(p)
    v1 = V1(p)
    v0 = np.maximum(v2, _continue(theta, c_meas, p, phi, V1))
    return BellmanH2(p, v2, v1, v0)


# Trine scenario


@dataclass
class TrineScenario:
    """Trine states on the Bloch equator, measured with trine POVMs rotated by
    alpha in [0, 2 pi/3)"""

    alpha_count: int = 24
    resolution: int = 60
    c_meas: float = 0.02
    horizon: int = 2

    def __post_init__(self):
        if self.alpha_count < 1:
            raise ValueError(f"alpha_count must be >= 1, got {self.alpha_count}")
        if self.resolution < 1:
            raise ValueError(f"grid resolution must be >= 1, got {self.resolution}")

    def library(self) -> MeasurementLibrary:
        return trine_library(self.alpha_count)

    def table(self) -> LikelihoodTable:
        return build_likelihood_table(trine_states(), self.library())

    def config(self, prior: Optional[Belief] = None, memoize: bool = True, workers: int = 1) -> PlannerConfig:
        lib = self.library()
        table = build_likelihood_table(trine_states(), lib)
        prior = Belief.uniform(3) if prior is None else prior
        return PlannerConfig(self.horizon, self.c_meas, build_grid(self.resolution, 3), lib, table, prior, memoize, workers)


@dataclass(eq=False)
class TrineMaps:
    grid: BeliefGrid = field(repr=False)
    j1star: npt.NDArray[np.float64]
    gain: npt.NDArray[np.float64]
    alpha_index: npt.NDArray[np.int64]
    alpha_star: npt.NDArray[np.float64]
    stopval: npt.NDArray[np.float64]

    def columns(self) -> Dict[str, npt.NDArray]:
        x, y = self.grid.embedding()
        return {"x": x, "y": y, "J1star": self.j1star, "gain": self.gain, "alpha_star": self.alpha_star, "stopval": self.stopval}


def one_step_maps(grid: BeliefGrid, table: LikelihoodTable, lib: MeasurementLibrary) -> TrineMaps:
    j = one_step_values(grid.points, table)
    best = np.argmax(j, axis=1)
    j1 = j[np.arange(grid.size), best]
    s = grid.points.max(axis=1)
    alpha = np.array([np.nan if lib.params is None else lib.params[int(a)] for a in best])
    return TrineMaps(grid, j1, np.maximum(0.0, j1 - s), best.astype(np.int64), alpha, s)


def trine_maps(scn: TrineScenario) -> TrineMaps:
    lib = scn.library()
    return one_step_maps(build_grid(scn.resolution, 3), build_likelihood_table(trine_states(), lib), lib)


def cyclic_permutation(grid: BeliefGrid, shift: int = 1) -> npt.NDArray[np.int64]:
    """perm[i] is the id of the point whose coordinates are those of point i
    rolled by `shift`"""
    return np.array([grid.id_of(np.roll(k, shift)) for k in grid.coords], dtype=np.int64)


def cyclic_symmetry_residual(grid: BeliefGrid, values: npt.NDArray[np.float64]) -> float:
    """Largest change of a grid map (or of every row of a stage table) under a
    cyclic permutation of the belief coordinates"""
    perm = cyclic_permutation(grid)
    v = np.atleast_2d(values)
    return float(np.abs(v[:, perm] - v).max())


# Routing


@dataclass
class RoutingBranch:
    outcome: int
    probability: float
    posterior: Optional[Belief]
    x: Optional[float]
    y: Optional[float]


@dataclass
class RoutingReport:
    start: Belief
    action: int
    orientation: Optional[float]
    branches: List[RoutingBranch]
    probability_residual: float
    normalization_residual: float
    total_probability_residual: float
    runner_up_gap: float

    def asdict(self) -> Dict:
        return {
            "start": [float(v) for v in self.start.weights],
            "action": self.action,
            "orientation": self.orientation,
            "branches": [
                {
                    "outcome": br.outcome,
                    "probability": br.probability,
                    "posterior": None if br.posterior is None else [float(v) for v in br.posterior.weights],
                    "x": br.x,
                    "y": br.y,
                }
                for br in self.branches
            ],
            "diagnostics": {
                "probability_residual": self.probability_residual,
                "normalization_residual": self.normalization_residual,
                "total_probability_residual": self.total_probability_residual,
                "runner_up_gap": self.runner_up_gap,
            },
        }

    def report(self) -> str:  # pragma: no cover
        s = f"{header('ROUTING', '=')}\n"
        s += f"start {self.start}, action {self.action + 1}, alpha* = {self.orientation}\n"
        hdr = f"{'o':>3} {'Pr(o)':>10} {'posterior':>30} {'x':>8} {'y':>8}"
        s += f"{hdr}\n{underline(hdr)}\n"
        for br in self.branches:
            post = "-" if br.posterior is None else ", ".join(f"{v:.4f}" for v in br.posterior.weights)
            xs = "-" if br.x is None else f"{br.x:.4f}"
            ys = "-" if br.y is None else f"{br.y:.4f}"
            s += f"{br.outcome + 1:3d} {br.probability:10.6f} {post:>30} {xs:>8} {ys:>8}\n"
        s += f"residuals: sum Pr {self.probability_residual:.2e}, normalization {self.normalization_residual:.2e}, "
        s += f"total probability {self.total_probability_residual:.2e}; runner-up gap {self.runner_up_gap:.3e}\n"
        return s


def trine_routing(scn: TrineScenario, start: Belief) -> RoutingReport:
    """Follow the one-step optimal orientation at `start` into its three
    outcome-conditioned posteriors"""
    lib = scn.library()
    table = build_likelihood_table(trine_states(), lib)
    return route(start, table, lib)


def route(start: Belief, table: LikelihoodTable, lib: MeasurementLibrary) -> RoutingReport:
    j = one_step_values(start.weights, table)[0]
    a = int(np.argmax(j))
    ranked = np.sort(j)[::-1]
    gap = float(ranked[0] - ranked[1]) if ranked.size > 1 else 0.0
    p = obs_prob(start, a, table)
    branches = []
    mix = np.zeros(start.M)
    norm = 0.0
    for o in range(table.outcomes):
        if p[o] <= PFLOOR:
            branches.append(RoutingBranch(o, float(p[o]), None, None, None))
            continue
        w = start.weights * table.values[:, a, o] / p[o]
        norm = max(norm, abs(float(w.sum()) - 1.0))
        post = Belief(w / w.sum())
        mix += p[o] * w
        x, y = (float(v[0]) for v in embed(post.weights)) if start.M == 3 else (None, None)
        branches.append(RoutingBranch(o, float(p[o]), post, x, y))
    total = float(np.abs(mix - start.weights).max())
    return RoutingReport(start, a, lib.param(a), branches, abs(float(p.sum()) - 1.0), norm, total, gap)


# Finite horizon


@dataclass(eq=False)
class TrineHorizon:
    """Planned tables with their continuation advantages
    D_{H-1} = V_{H-1} - S and D_t = V_t - V_{t+1} for t < H - 1"""

    values: ValueTable
    policy: PolicyTable
    advantages: List[npt.NDArray[np.float64]]
    measure_fraction: List[float]
    alpha_index: npt.NDArray[np.int64]
    alpha: npt.NDArray[np.float64]

    @property
    def D1(self) -> npt.NDArray[np.float64]:
        return self.advantages[1]

    @property
    def D0(self) -> npt.NDArray[np.float64]:
        return self.advantages[0]

    def report(self) -> str:  # pragma: no cover
        hdr = f"{'stage':>6} {'measure share':>14} {'min D':>12} {'max D':>12}"
        s = f"{header('FINITE HORIZON', '=')}\n{hdr}\n{underline(hdr)}\n"
        for t, d in enumerate(self.advantages):
            s += f"{t:6d} {self.measure_fraction[t]:14.4f} {d.min():12.4e} {d.max():12.4e}\n"
        return s


def finite_horizon(cfg: PlannerConfig) -> TrineHorizon:
    values, policy = plan(cfg)
    H = cfg.horizon
    V = values.values
    adv = [V[t] - V[t + 1] for t in range(H)]
    measure = policy.kinds[:H] == ActionKind.MEASURE
    alpha_index = np.where(measure, policy.indices[:H], -1)
    params = cfg.library.params
    alpha = np.full(alpha_index.shape, np.nan)
    if params is not None:
        alpha[measure] = np.asarray(params)[alpha_index[measure]]
    fractions = [policy.measure_fraction(t) for t in range(H)]
    logger.info("measure fractions per stage: %s", ", ".join(f"{f:.4f}" for f in fractions))
    return TrineHorizon(values, policy, adv, fractions, alpha_index, alpha)


def trine_finite_horizon(scn: TrineScenario, workers: int = 1) -> TrineHorizon:
    if scn.horizon != 2:
        raise ValueError(f"the two-stage maps need horizon 2, got {scn.horizon}")
    return finite_horizon(scn.config(workers=workers))


def trine_robustness(
    scn: TrineScenario, refinements: Sequence[Tuple[int, int]] = ((1, 1), (2, 1), (1, 2)), workers: int = 1
) -> List[Dict]:
    """Continuation fractions per stage when the grid resolution and the
    library size are multiplied by the given factors"""
    rows = []
    for fn, fa in refinements:
        s = TrineScenario(scn.alpha_count * fa, scn.resolution * fn, scn.c_meas, scn.horizon)
        res = finite_horizon(s.config(workers=workers))
        rows.append({"resolution": s.resolution, "alpha_count": s.alpha_count, "measure_fraction": res.measure_fraction})
    return rows


# Representative starting beliefs


@dataclass(frozen=True)
class RepresentativeCase:
    label: str
    belief: Belief
    description: str


def switching_point(maps: TrineMaps) -> int:
    """First interior grid point, in lexicographic order, with positive gain
    and an interior neighbour of positive gain whose optimal orientation
    differs"""
    grid = maps.grid
    interior = np.all(grid.coords > 0, axis=1)
    for i in range(grid.size):
        if not interior[i] or maps.gain[i] <= GAIN_TOL:
            continue
        for j in grid.neighbours(i):
            if interior[j] and maps.gain[j] > GAIN_TOL and maps.alpha_index[j] != maps.alpha_index[i]:
                return i
    raise ValueError("no orientation switch found on the grid")


def representative_cases(maps: Optional[TrineMaps] = None) -> List[RepresentativeCase]:
    maps = trine_maps(TrineScenario()) if maps is None else maps
    e = maps.grid.point(switching_point(maps))
    return [
        RepresentativeCase("A", Belief.uniform(3), "central"),
        RepresentativeCase("B", Belief(np.array([0.49, 0.49, 0.02])), "quasi-binary edge"),
        RepresentativeCase("C", Belief(np.array([0.90, 0.05, 0.05])), "near certainty"),
        RepresentativeCase("D", Belief(np.array([0.50, 0.30, 0.20])), "asymmetric interior"),
        RepresentativeCase("E", e, "near an orientation switch"),
    ]
