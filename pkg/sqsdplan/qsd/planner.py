"""One-step values and gains, and projected backward induction on a finite
belief grid with a finite measurement library"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from sqsdplan.qsd.belief import Belief, BeliefGrid, build_grid, obs_prob, project_ties, stop_val
from sqsdplan.qsd.constants import EPS_ONE_STEP, GRID_CAP, PFLOOR, V_SUP
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.errors import ConfigError, ConsistencyError, DimMismatch, EmptyLibrary, OutOfRange
from sqsdplan.qsd.quantum import LikelihoodTable, MeasurementLibrary
from sqsdplan.utils import header, underline


logger = logging.getLogger(__name__)

# Upper limit on joint-probability entries evaluated per node chunk
CHUNK_ELEMS: int = 1_000_000


class ActionKind(IntEnum):
    STOP = 0
    MEASURE = 1


ActionLabel = {
    ActionKind.STOP: "stop",
    ActionKind.MEASURE: "measure",
}


@dataclass(frozen=True)
class Action:
    """Action is either Stop(i), declaring hypothesis i, or Measure(a) with
    library action a. Indices are zero based."""

    kind: ActionKind
    index: int

    @classmethod
    def stop(cls, i: int) -> "Action":
        return cls(ActionKind.STOP, i)

    @classmethod
    def measure(cls, a: int) -> "Action":
        return cls(ActionKind.MEASURE, a)

    @property
    def is_stop(self) -> bool:
        return self.kind == ActionKind.STOP

    def __str__(self) -> str:
        return f"{ActionLabel[self.kind]}({self.index + 1})"


@dataclass(frozen=True, eq=False)
class PlannerConfig:
    horizon: int
    c_meas: float
    grid: BeliefGrid
    library: MeasurementLibrary
    table: LikelihoodTable
    prior: Belief
    memoize: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        if self.c_meas < 0:
            raise ConfigError(f"measurement cost must be >= 0, got {self.c_meas}")
        if self.c_meas * self.horizon > V_SUP:
            raise ConfigError(f"c_meas * H = {self.c_meas * self.horizon!r} exceeds {V_SUP}; values are no longer bounded by 1")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        M = self.table.hypotheses
        if self.grid.dim != M:
            raise DimMismatch(M, self.grid.dim)
        if self.prior.M != M:
            raise DimMismatch(M, self.prior.M)
        if self.table.actions != len(self.library):
            raise DimMismatch(len(self.library), self.table.actions)
        if self.table.outcomes != self.library.outcome_count:
            raise DimMismatch(self.library.outcome_count, self.table.outcomes)

    @property
    def M(self) -> int:
        return self.table.hypotheses

    def fingerprint(self) -> str:
        """Hash of everything the tables depend on. The execution options
        (memoize, workers) are excluded since they do not change the tables."""
        h = hashlib.sha256()
        h.update(f"H={self.horizon};c={self.c_meas!r};N={self.grid.resolution};M={self.M};".encode())
        h.update(f"family={self.library.family};params={self.library.params!r};".encode())
        h.update(np.ascontiguousarray(self.table.values).tobytes())
        h.update(np.ascontiguousarray(self.prior.weights).tobytes())
        return h.hexdigest()


@dataclass(eq=False)
class ValueTable:
    values: npt.NDArray[np.float64]
    grid: BeliefGrid = field(repr=False)

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def __getitem__(self, t: int) -> npt.NDArray[np.float64]:
        return self.values[t]

    def report(self, ids: Optional[List[int]] = None) -> str:  # pragma: no cover
        ids = list(range(min(self.grid.size, 10))) if ids is None else ids
        hdr = f"{'id':>6} {'belief':>30} " + " ".join(f"{'V_' + str(t):>10}" for t in range(self.horizon + 1))
        s = f"{header('VALUE TABLE', '=')}\n{hdr}\n{underline(hdr)}\n"
        for i in ids:
            b = ", ".join(f"{x:.4f}" for x in self.grid.points[i])
            s += f"{i:6d} {b:>30} " + " ".join(f"{v:10.6f}" for v in self.values[:, i]) + "\n"
        return s


@dataclass(eq=False)
class PolicyTable:
    kinds: npt.NDArray[np.int8]
    indices: npt.NDArray[np.int64]

    @property
    def horizon(self) -> int:
        return self.kinds.shape[0] - 1

    def action(self, t: int, i: int) -> Action:
        return Action(ActionKind(int(self.kinds[t, i])), int(self.indices[t, i]))

    def measure_fraction(self, t: int) -> float:
        return float(np.mean(self.kinds[t] == ActionKind.MEASURE))


# One-step quantities


def _joint(weights: npt.NDArray[np.float64], table: LikelihoodTable) -> npt.NDArray[np.float64]:
    """joint[n, i, a, o] = b_n(i) l_i(a, o)"""
    return weights[:, :, None, None] * table.values[None, :, :, :]


def one_step_values(weights: npt.NDArray[np.float64], table: LikelihoodTable) -> npt.NDArray[np.float64]:
    """Simplified one-step values J1(b, a) = sum_o max_i b(i) l_i(a, o) for a
    batch of beliefs; returns an (n, A) array."""
    w = np.atleast_2d(weights)
    best = _joint(w, table).max(axis=1)
    out = best[:, :, 0].copy()
    for o in range(1, table.outcomes):
        out += best[:, :, o]
    return out


def routed_one_step_value(b: Belief, a: int, table: LikelihoodTable) -> float:
    """J1 through the posteriors: sum_o Pr(o|b,a) max_i tau(b,a,o)(i)"""
    p = obs_prob(b, a, table)
    total = 0.0
    for o in range(table.outcomes):
        if p[o] > 0:
            post = b.weights * table.values[:, a, o] / p[o]
            total += p[o] * float(post.max())
    return total


def one_step_value(b: Belief, a: int, table: LikelihoodTable) -> float:
    simplified = float(one_step_values(b.weights, table)[0, a])
    routed = routed_one_step_value(b, a, table)
    if abs(routed - simplified) > EPS_ONE_STEP:
        raise ConsistencyError(routed, simplified)
    return simplified


@dataclass(frozen=True)
class OneStepResult:
    value: float
    action: int
    alpha: Optional[float]


def one_step_opt(b: Belief, table: LikelihoodTable, library: Optional[MeasurementLibrary] = None) -> OneStepResult:
    if table.actions == 0:
        raise EmptyLibrary()
    j = one_step_values(b.weights, table)[0]
    a = int(np.argmax(j))
    alpha = None if library is None else library.param(a)
    return OneStepResult(float(j[a]), a, alpha)


def gain(b: Belief, table: LikelihoodTable) -> float:
    return max(0.0, one_step_opt(b, table).value - stop_val(b))


# Backward induction


def _chunks(n: int, size: int) -> List[Tuple[int, int]]:
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def _targets(
    cfg: PlannerConfig, lo: int, hi: int, counters: Optional[CostCounters], method: str
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
    """Outcome probabilities (k, A, O) and the tie sets (k, A, O, 2^M) of the
    projected posteriors for nodes lo..hi; sets are all -1 where the outcome
    is skipped."""
    w = cfg.grid.points[lo:hi]
    joint = _joint(w, cfg.table)
    p = joint.sum(axis=1)
    valid = p > PFLOOR
    ties = np.full(p.shape + (2**cfg.M,), -1, dtype=np.int64)
    if np.any(valid):
        post = np.moveaxis(joint, 1, -1)[valid] / p[valid][:, None]
        ties[valid], _ = project_ties(post, cfg.grid, counters, method)
    return p, ties


def _memo_targets(cfg: PlannerConfig, counters: Optional[CostCounters]) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
    K, A, O = cfg.grid.size, cfg.table.actions, cfg.table.outcomes
    p = np.empty((K, A, O))
    ties = np.empty((K, A, O, 2**cfg.M), dtype=np.int64)
    size = _chunk_size(cfg)

    def work(span: Tuple[int, int]) -> None:
        lo, hi = span
        p[lo:hi], ties[lo:hi] = _targets(cfg, lo, hi, counters, "local")

    _run(cfg.workers, work, _chunks(K, size))
    logger.debug("memoized %d projection targets", int(np.count_nonzero(ties[..., 0] >= 0)))
    return p, ties


def _chunk_size(cfg: PlannerConfig) -> int:
    return max(1, CHUNK_ELEMS // (cfg.table.actions * cfg.table.outcomes * cfg.M))


def _run(workers: int, fn, spans) -> None:
    if workers == 1:
        for s in spans:
            fn(s)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for _ in pool.map(fn, spans):
            pass


def tie_average(ties: npt.NDArray[np.int64], v: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Mean of v over each tie set (last axis), summed in ascending id order;
    0 where the set is empty"""
    present = ties >= 0
    picked = np.where(present, v[np.where(present, ties, 0)], 0.0)
    total = picked[..., 0]
    for j in range(1, ties.shape[-1]):
        total = total + picked[..., j]
    count = np.count_nonzero(present, axis=-1)
    return np.where(count > 0, total / np.maximum(count, 1), 0.0)


def _measure_values(
    c_meas: float, p: npt.NDArray[np.float64], ties: npt.NDArray[np.int64], v_next: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """q(a) = -c + sum over outcomes with p_o > PFLOOR of p_o V_{t+1}(target),
    where V_{t+1}(target) averages over equidistant nearest grid points"""
    q = np.full(p.shape[:2], -c_meas)
    target = tie_average(ties, v_next)
    for o in range(p.shape[2]):
        q += np.where(ties[:, :, o, 0] >= 0, p[:, :, o] * target[:, :, o], 0.0)
    return q


def plan(cfg: PlannerConfig, counters: Optional[CostCounters] = None) -> Tuple[ValueTable, PolicyTable]:
    """Backward induction over the grid. Stop wins ties with the best
    measurement; measurement ties go to the smallest action id and declaration
    ties to the smallest hypothesis index."""
    grid = cfg.grid
    H, K = cfg.horizon, grid.size
    A, O, M = cfg.table.actions, cfg.table.outcomes, cfg.M
    if counters is not None:
        counters.mode = "memoized" if cfg.memoize else "raw"
    values = np.empty((H + 1, K))
    kinds = np.full((H + 1, K), ActionKind.STOP, dtype=np.int8)
    indices = np.empty((H + 1, K), dtype=np.int64)
    stop = grid.points.max(axis=1)
    declare = np.argmax(grid.points, axis=1)
    values[H] = stop
    indices[H] = declare
    if counters is not None:
        counters.add(stop=K)
    memo = _memo_targets(cfg, counters) if (cfg.memoize and H > 0) else None
    size = _chunk_size(cfg)

    for t in range(H - 1, -1, -1):
        v_next = values[t + 1]

        def work(span: Tuple[int, int]) -> None:
            lo, hi = span
            k = hi - lo
            local = None if counters is None else CostCounters()
            if memo is None:
                p, ties = _targets(cfg, lo, hi, local, "scan")
            else:
                p, ties = memo[0][lo:hi], memo[1][lo:hi]
            q = _measure_values(cfg.c_meas, p, ties, v_next)
            best = np.argmax(q, axis=1)
            v_meas = q[np.arange(k), best]
            measure = v_meas > stop[lo:hi]
            values[t, lo:hi] = np.where(measure, v_meas, stop[lo:hi])
            kinds[t, lo:hi] = np.where(measure, ActionKind.MEASURE, ActionKind.STOP)
            indices[t, lo:hi] = np.where(measure, best, declare[lo:hi])
            if local is not None:
                nvalid = int(np.count_nonzero(ties[..., 0] >= 0))
                local.add(
                    stop=k,
                    inits=k * A,
                    obs=k * A * O,
                    skipped=k * A * O - nvalid,
                    posterior=nvalid,
                    lookups=nvalid,
                    aggregations=nvalid,
                    actmax=k * A,
                )
                if memo is not None:
                    local.add(memo_hits=nvalid)
                counters.merge(local)  # type: ignore[union-attr]

        _run(cfg.workers, work, _chunks(K, size))
        logger.info("stage %d done: %d of %d nodes measure", t, int(np.count_nonzero(kinds[t])), K)

    return ValueTable(values, grid), PolicyTable(kinds, indices)


def value_at(b: Belief, t: int, values: ValueTable, grid: Optional[BeliefGrid] = None) -> float:
    """Projected estimator: the table value at the grid point nearest to b,
    averaged over equidistant nearest points"""
    g = values.grid if grid is None else grid
    if not 0 <= t <= values.horizon:
        raise OutOfRange("stage", t, 0, values.horizon + 1)
    ties, _ = project_ties(b.weights[None, :], g, method="local")
    return float(tie_average(ties, values.values[t])[0])


def exact_1d_oracle(cfg: PlannerConfig, resolution: Optional[int] = None, cap: int = GRID_CAP) -> ValueTable:
    """Reference values for two hypotheses from the same recursion on a much
    finer grid (default 100 N points per unit)"""
    if cfg.M != 2:
        raise DimMismatch(2, cfg.M)
    n = 100 * cfg.grid.resolution if resolution is None else resolution
    fine = PlannerConfig(
        cfg.horizon, cfg.c_meas, build_grid(n, 2, cap), cfg.library, cfg.table, cfg.prior, memoize=True, workers=cfg.workers
    )
    logger.info("oracle recursion on N=%d", n)
    values, _ = plan(fine)
    return values


def oracle_on_grid(oracle: ValueTable, grid: BeliefGrid) -> npt.NDArray[np.float64]:
    """Oracle values at the points of a coarser grid, (H+1, |B|)"""
    ties, _ = project_ties(grid.points, oracle.grid, method="local")
    return np.stack([tie_average(ties, v) for v in oracle.values])
