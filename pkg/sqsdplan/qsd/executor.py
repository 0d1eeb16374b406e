"""Online execution of a planned policy: hidden-state sampling, Born-rule
observations, exact belief tracking and Monte Carlo statistics"""

import logging
from dataclasses import asdict, dataclass, field
from math import sqrt
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy.stats import linregress  # type: ignore

from sqsdplan.qsd.belief import Belief, posterior_rows, project_batch
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.planner import ActionKind, PlannerConfig, PolicyTable, ValueTable
from sqsdplan.utils import header


logger = logging.getLogger(__name__)

ONLINE_KEYS = ("pol_lookups", "obs_recv", "updates", "term")


class EpisodeStream:
    """Counter-based uniform stream. Episode e reads row e mod block of the
    block e // block, and block b is drawn from a Philox generator keyed by
    (b, seed). Any episode can be regenerated on its own, so results do not
    depend on how episodes are batched or scheduled."""

    def __init__(self, seed: int, width: int, block: int = 4096):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.width = width
        self.block = block

    def _block(self, b: int) -> npt.NDArray[np.float64]:
        gen = np.random.Generator(np.random.Philox(key=(b << 64) | self.seed))
        return gen.random((self.block, self.width))

    def rows(self, start: int, stop: int) -> npt.NDArray[np.float64]:
        out = np.empty((stop - start, self.width))
        b = start // self.block
        pos = start
        while pos < stop:
            data = self._block(b)
            lo = pos - b * self.block
            hi = min(self.block, stop - b * self.block)
            out[pos - start : pos - start + hi - lo] = data[lo:hi]
            pos += hi - lo
            b += 1
        return out


@dataclass
class EpisodeTrace:
    episode: int
    hidden: int
    outcomes: List[Tuple[int, int, int]]
    beliefs: List[Belief]
    stop_stage: int
    declared: int
    correct: bool
    online_ops: Dict[str, int]

    def asdict(self) -> Dict:
        return {
            "episode": self.episode,
            "hidden": self.hidden,
            "outcomes": [list(x) for x in self.outcomes],
            "beliefs": [[float(v) for v in b.weights] for b in self.beliefs],
            "stop_stage": self.stop_stage,
            "declared": self.declared,
            "correct": self.correct,
            "online_ops": dict(self.online_ops),
        }


@dataclass
class MonteCarloSummary:
    episodes: int
    seed: int
    success_rate: float
    success_stderr: float
    mean_stop_time: float
    stop_time_stderr: float
    mean_reward: float
    reward_stderr: float
    per_step_cost: int
    terminal_cost: int
    cost_estimate: float
    mean_online_ops: float = 0.0
    regression: Dict = field(default_factory=dict)
    first_update_mean: Optional[List[float]] = None
    counters: Dict[str, int] = field(default_factory=dict)

    def asdict(self) -> Dict:
        return dict(self.__dict__)

    def report(self) -> str:  # pragma: no cover
        s = f"{header('MONTE CARLO SUMMARY', '=')}\n"
        s += f"{'episodes':>24}: {self.episodes} (seed {self.seed})\n"
        s += f"{'success rate':>24}: {self.success_rate:.6f} +/- {self.success_stderr:.6f}\n"
        s += f"{'mean stopping time':>24}: {self.mean_stop_time:.6f} +/- {self.stop_time_stderr:.6f}\n"
        s += f"{'mean reward':>24}: {self.mean_reward:.6f} +/- {self.reward_stderr:.6f}\n"
        s += f"{'online cost':>24}: {self.cost_estimate:.3f} = E[tau] * {self.per_step_cost} + {self.terminal_cost}\n"
        s += f"{'measured online ops':>24}: {self.mean_online_ops:.3f}\n"
        return s


def lookup_method(cfg: PlannerConfig) -> str:
    """Projection used for online policy lookups: a full scan of B in raw
    mode, the 2^M bracketing box once targets are memoized"""
    return "local" if cfg.memoize else "scan"


def step_costs(cfg: PlannerConfig) -> Tuple[int, int]:
    """Predicted per-step and terminal online operation counts: candidates
    times M for a policy lookup, 1 for receiving an outcome, M for the
    update, M for the final argmax. Candidates are |B| for the scan and 2^M
    for the box."""
    M = cfg.M
    cand = cfg.grid.size if lookup_method(cfg) == "scan" else 2**M
    return cand * M + 1 + M, cand * M + M


def _sample(cdf_rows: npt.NDArray[np.float64], u: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
    """Inverse-CDF draw per row; never lands on a zero-probability index"""
    cum = np.cumsum(cdf_rows, axis=1)
    idx = np.count_nonzero(u[:, None] >= cum, axis=1)
    last = cdf_rows.shape[1] - 1 - np.argmax(cdf_rows[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last).astype(np.int64)


@dataclass
class _Batch:
    hidden: npt.NDArray[np.int64]
    stop_stage: npt.NDArray[np.int64]
    declared: npt.NDArray[np.int64]
    first_update: Optional[npt.NDArray[np.float64]]
    history: List[Tuple[npt.NDArray[np.bool_], npt.NDArray[np.int64], npt.NDArray[np.int64], npt.NDArray[np.float64]]]
    ops: npt.NDArray[np.int64]
    counters: CostCounters


def _simulate(cfg: PlannerConfig, policy: PolicyTable, u: npt.NDArray[np.float64], record: bool = False) -> _Batch:
    """Run a batch of episodes from their uniforms u (n, H + 1). Column 0
    picks the hidden hypothesis, column t + 1 the outcome at stage t.
    Online operations are tallied per episode as they happen."""
    n = u.shape[0]
    H, M = cfg.horizon, cfg.M
    L = cfg.table.values
    prior = cfg.prior.weights
    method = lookup_method(cfg)
    hidden = _sample(np.broadcast_to(prior, (n, prior.size)), u[:, 0])
    w = np.broadcast_to(prior, (n, prior.size)).copy()
    active = np.ones(n, dtype=bool)
    stop_stage = np.full(n, H, dtype=np.int64)
    declared = np.zeros(n, dtype=np.int64)
    ops = np.zeros(n, dtype=np.int64)
    tally = CostCounters(mode="online")
    first_update = None
    history = []
    for t in range(H + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        lookup = CostCounters()
        ids, _ = project_batch(w[rows], cfg.grid, lookup, method=method)
        ops[rows] += lookup.proj_comparisons // rows.size
        tally.add(pol_lookups=lookup.proj_comparisons)
        stops = (policy.kinds[t, ids] == ActionKind.STOP) | (t == H)
        done = rows[stops]
        stop_stage[done] = t
        declared[done] = np.argmax(w[done], axis=1)
        ops[done] += M
        tally.add(term=done.size * M)
        active[done] = False
        go = rows[~stops]
        if go.size == 0:
            break
        a = policy.indices[t, ids[~stops]]
        o = _sample(L[hidden[go], a, :], u[go, t + 1])
        ops[go] += 1
        tally.add(obs_recv=go.size)
        w[go] = posterior_rows(w[go], L[:, a, o].T)
        ops[go] += M
        tally.add(updates=go.size * M)
        if t == 0:
            first_update = w[go].mean(axis=0)
        if record:
            history.append((go, a, o, w.copy()))
    return _Batch(hidden, stop_stage, declared, first_update, history, ops, tally)


def run_episode(
    cfg: PlannerConfig, tables: Tuple[ValueTable, PolicyTable], stream: EpisodeStream, episode: int = 0
) -> EpisodeTrace:
    """One episode, identical to the same episode inside monte_carlo"""
    _, policy = tables
    batch = _simulate(cfg, policy, stream.rows(episode, episode + 1), record=True)
    beliefs = [cfg.prior]
    outcomes = []
    for t, (_, a, o, w) in enumerate(batch.history):
        outcomes.append((t, int(a[0]), int(o[0])))
        beliefs.append(Belief(w[0]))
    tau = int(batch.stop_stage[0])
    counts = batch.counters.counts()
    ops = {k: counts[k] for k in ONLINE_KEYS}
    ops["total"] = int(batch.ops[0])
    hidden, declared = int(batch.hidden[0]), int(batch.declared[0])
    return EpisodeTrace(episode, hidden, outcomes, beliefs, tau, declared, hidden == declared, ops)


def monte_carlo(
    cfg: PlannerConfig,
    tables: Tuple[ValueTable, PolicyTable],
    n: int,
    seed: int,
    counters: Optional[CostCounters] = None,
    batch: int = 65536,
) -> Tuple[MonteCarloSummary, npt.NDArray[np.int64]]:
    """Aggregate n episodes. Returns the summary and the realized stopping
    times, in episode order."""
    if n < 1:
        raise ValueError("episode count must be >= 1")
    _, policy = tables
    stream = EpisodeStream(seed, cfg.horizon + 1)
    correct = np.empty(n, dtype=bool)
    tau = np.empty(n, dtype=np.int64)
    ops = np.empty(n, dtype=np.int64)
    local = CostCounters(mode="online")
    first_sum = None
    first_count = 0
    for start in range(0, n, batch):
        stop = min(n, start + batch)
        res = _simulate(cfg, policy, stream.rows(start, stop))
        correct[start:stop] = res.hidden == res.declared
        tau[start:stop] = res.stop_stage
        ops[start:stop] = res.ops
        local.merge(res.counters)
        if res.first_update is not None:
            k = int(np.count_nonzero(res.stop_stage > 0))
            first_sum = res.first_update * k if first_sum is None else first_sum + res.first_update * k
            first_count += k
    per_step, terminal = step_costs(cfg)
    reward = correct.astype(float) - cfg.c_meas * tau
    if counters is not None:
        counters.merge(local)
    summary = MonteCarloSummary(
        episodes=n,
        seed=seed,
        success_rate=float(correct.mean()),
        success_stderr=_stderr(correct.astype(float)),
        mean_stop_time=float(tau.mean()),
        stop_time_stderr=_stderr(tau.astype(float)),
        mean_reward=float(reward.mean()),
        reward_stderr=_stderr(reward),
        per_step_cost=per_step,
        terminal_cost=terminal,
        cost_estimate=float(tau.mean()) * per_step + terminal,
        mean_online_ops=float(ops.mean()),
        regression=asdict(online_cost_regression(tau, ops)),
        first_update_mean=None if first_sum is None else [float(x) for x in first_sum / first_count],
        counters={k: v for k, v in local.counts().items() if k in ONLINE_KEYS},
    )
    logger.info("seed %d, %d episodes: success %.6f, E[tau] %.4f", seed, n, summary.success_rate, summary.mean_stop_time)
    return summary, tau


def _stderr(x: npt.NDArray[np.float64]) -> float:
    if x.size < 2:
        return 0.0
    return float(np.std(x, ddof=1) / sqrt(x.size))


def traces(cfg: PlannerConfig, tables: Tuple[ValueTable, PolicyTable], count: int, seed: int) -> List[EpisodeTrace]:
    stream = EpisodeStream(seed, cfg.horizon + 1)
    return [run_episode(cfg, tables, stream, e) for e in range(count)]


@dataclass(frozen=True)
class CostRegression:
    slope: Optional[float]
    intercept: float
    rvalue: Optional[float]


def online_cost_regression(stop_times: npt.NDArray[np.int64], ops: npt.NDArray[np.int64]) -> CostRegression:
    """Least-squares fit of measured per-episode online operations against
    realized stopping times. With a single distinct stopping time the slope
    is not identified and only the mean is reported."""
    if stop_times.shape != ops.shape:
        raise ValueError("stop times and operation counts differ in length")
    if np.unique(stop_times).size < 2:
        return CostRegression(None, float(ops.mean()), None)
    fit = linregress(stop_times.astype(float), ops.astype(float))
    return CostRegression(float(fit.slope), float(fit.intercept), float(fit.rvalue))
