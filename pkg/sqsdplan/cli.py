"""Command-line front end: plan, simulate, maps, routing, bounds, scaling"""

import functools
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from math import pi
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from sqsdplan.__about__ import __version__
from sqsdplan.qsd.belief import Belief, build_grid, estimate_delta_B
from sqsdplan.qsd.bounds import (
    action_lipschitz_ratios,
    belief_lipschitz_ratios,
    complexity_report,
    delta_A,
    empirical_error,
    regularity_constants,
    scaling_experiment,
    total_budget,
)
from sqsdplan.qsd.cases import (
    BinaryScenario,
    TrineScenario,
    binary_bellman_h2,
    binary_gain_curve,
    cyclic_symmetry_residual,
    finite_horizon,
    one_step_maps,
    representative_cases,
    route,
)
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.errors import ConfigError, SizeOverflow, SQSDError, TableMismatch
from sqsdplan.qsd.executor import monte_carlo, traces
from sqsdplan.qsd.export import (
    config_hash,
    load_ensemble,
    read_values_csv,
    write_csv,
    write_golden,
    write_grid_csv,
    write_json,
    write_jsonl,
    write_manifest,
    write_map_csv,
    write_values_csv,
)
from sqsdplan.qsd.planner import ActionKind, PlannerConfig, exact_1d_oracle, plan, value_at
from sqsdplan.qsd.quantum import DensityOperator, build_likelihood_table, trine_states


logger = logging.getLogger(__name__)

OUTPUT_ENV = "SQSDPLAN_OUTPUT"

# Scenario defaults: grid resolution, library size, measurement cost
DEFAULTS = {
    "binary": (2000, 181, 0.01),
    "trine": (60, 24, 0.02),
    "custom": (100, 24, 0.01),
}


@dataclass
class RunConfig:
    scenario: str = "binary"
    ensemble: Optional[str] = None
    theta: float = pi / 3
    horizon: Optional[int] = None
    grid: Optional[int] = None
    library: Optional[int] = None
    cost: Optional[float] = None
    prior: Optional[str] = None
    mode: str = "memoized"
    workers: int = 1
    seed: int = 0
    episodes: int = 10_000
    traces: int = 0
    case: str = "A"
    grids: str = "50,100,200,400"
    oracle: Optional[int] = None
    samples: int = 10_000
    out: Optional[str] = None

    def resolve(self) -> "RunConfig":
        """Fill scenario defaults for options left unset"""
        d_grid, d_lib, d_cost = DEFAULTS.get(self.scenario, DEFAULTS["custom"])
        self.grid = d_grid if self.grid is None else self.grid
        self.library = d_lib if self.library is None else self.library
        self.cost = d_cost if self.cost is None else self.cost
        return self

    def validate(self) -> None:
        if self.scenario not in DEFAULTS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "custom" and self.ensemble is None:
            raise ConfigError("scenario custom needs --ensemble")
        if self.ensemble is not None and not Path(self.ensemble).exists():
            raise ConfigError(f"ensemble file {self.ensemble} does not exist")
        if self.mode not in ("raw", "memoized"):
            raise ConfigError(f"mode must be raw or memoized, got {self.mode!r}")
        for name in ("grid", "library", "workers", "episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.horizon is not None and self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        if self.cost is not None and self.cost < 0:
            raise ConfigError(f"cost must be >= 0, got {self.cost}")
        if self.case not in "ABCDE" or len(self.case) != 1:
            raise ConfigError(f"case must be one of A-E, got {self.case!r}")

    def require_horizon(self) -> int:
        if self.horizon is None:
            raise click.UsageError("Missing option '--horizon'")
        return self.horizon

    def outdir(self) -> Path:
        root = self.out or os.environ.get(OUTPUT_ENV, "out")
        path = Path(root)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def grid_list(self) -> List[int]:
        try:
            return [int(x) for x in self.grids.split(",") if x.strip()]
        except ValueError as e:
            raise ConfigError(f"grids must be a comma separated list of integers, got {self.grids!r}") from e

    def prior_belief(self, M: int) -> Belief:
        if self.prior is None:
            return Belief.uniform(M)
        try:
            w = np.array([float(x) for x in self.prior.split(",")])
            b = Belief(w)
        except ValueError as e:
            raise ConfigError(f"prior: {e}") from e
        if b.M != M:
            raise ConfigError(f"prior has {b.M} weights, the ensemble has {M} hypotheses")
        return b

    def identity(self) -> Dict[str, Any]:
        """The fields that determine data artifacts"""
        d = asdict(self)
        for k in ("workers", "out"):
            d.pop(k)
        return d


def apply_config_file(rc: RunConfig, path: str) -> RunConfig:
    """Keys of the JSON file override the flags"""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, e.lineno, path) from e
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object", 1, path)
    known = {f.name: f for f in fields(RunConfig)}
    for key, value in doc.items():
        line = next((n for n, s in enumerate(text.splitlines(), start=1) if f'"{key}"' in s), None)
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", line, path)
        numeric = known[key].type in (int, float, Optional[int], Optional[float])
        if numeric and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{key} must be a number, got {value!r}", line, path)
        if key in ("prior", "grids") and isinstance(value, list):
            value = ",".join(str(x) for x in value)
        setattr(rc, key, value)
    return rc


# Scenario assembly


def build(rc: RunConfig, grid: Optional[int] = None, memoize: Optional[bool] = None) -> Tuple[PlannerConfig, Sequence[DensityOperator]]:
    H = rc.require_horizon()
    N = rc.grid if grid is None else grid
    memo = (rc.mode == "memoized") if memoize is None else memoize
    if rc.scenario == "binary":
        scn = BinaryScenario(rc.theta, rc.library, rc.cost, H, N)  # type: ignore[arg-type]
        return scn.config(rc.prior_belief(2), memo, rc.workers), scn.states()
    if rc.scenario == "trine":
        tscn = TrineScenario(rc.library, N, rc.cost, H)  # type: ignore[arg-type]
        return tscn.config(rc.prior_belief(3), memo, rc.workers), trine_states()
    ens = load_ensemble(Path(rc.ensemble))  # type: ignore[arg-type]
    table = build_likelihood_table(ens.states, ens.library)
    M = table.hypotheses
    prior = ens.prior if (ens.prior is not None and rc.prior is None) else rc.prior_belief(M)
    cfg = PlannerConfig(H, rc.cost, build_grid(N, M), ens.library, table, prior, memo, rc.workers)  # type: ignore[arg-type]
    return cfg, ens.states


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SizeOverflow as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(3)
        except TableMismatch as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(4)
        except (ConfigError, SQSDError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)

    return wrapper


def _options(fn):
    opts = [
        click.option("--scenario", type=click.Choice(["binary", "trine", "custom"]), default="binary", show_default=True),
        click.option("--ensemble", type=click.Path(), default=None, help="Ensemble file for --scenario custom"),
        click.option("--theta", type=float, default=pi / 3, show_default=True, help="Binary overlap angle"),
        click.option("--horizon", type=int, default=None, help="Planning horizon H"),
        click.option("--grid", type=int, default=None, help="Belief grid resolution N"),
        click.option("--library", type=int, default=None, help="Measurement library size"),
        click.option("--cost", type=float, default=None, help="Cost per measurement"),
        click.option("--prior", type=str, default=None, help="Comma separated prior weights"),
        click.option("--mode", type=click.Choice(["raw", "memoized"]), default="memoized", show_default=True),
        click.option("--workers", type=int, default=1, show_default=True),
        click.option("--out", type=click.Path(), default=None, help=f"Output directory (default ${OUTPUT_ENV} or ./out)"),
        click.option("--config", "config_file", type=click.Path(exists=True), default=None, help="JSON file overriding flags"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _run_config(config_file: Optional[str], **kwargs) -> RunConfig:
    rc = RunConfig(**{k: v for k, v in kwargs.items() if k in {f.name for f in fields(RunConfig)}})
    if config_file is not None:
        rc = apply_config_file(rc, config_file)
    rc.resolve().validate()
    return rc


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG")
def main(verbose: int) -> None:
    """Sequential quantum state discrimination by projected dynamic programming"""
    level = logging.WARNING if verbose == 0 else (logging.INFO if verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("plan")
@_options
@_exit_codes
def cmd_plan(config_file, **kwargs):
    """Plan value and policy tables with budget and counter reports"""
    start = time.perf_counter()
    rc = _run_config(config_file, **kwargs)
    cfg, states = build(rc)
    counters = CostCounters()
    values, policy = plan(cfg, counters)
    out = rc.outdir()
    arts = [
        write_grid_csv(out / "grid.csv", cfg.grid),
        write_values_csv(out / "values.csv", values, policy),
        write_golden(out / "values.bin", values),
    ]
    report = {
        "config": rc.identity(),
        "config_hash": config_hash(rc.identity()),
        "fingerprint": cfg.fingerprint(),
        "V0_prior": _value_at_prior(cfg, values),
        "counters": counters.asdict(),
        "complexity": complexity_report(cfg, counters).asdict() if cfg.horizon > 0 else None,
        "budget": _budget(cfg, states, rc),
    }
    arts.append(write_json(out / "plan.json", report))
    write_manifest(out, "plan", rc.identity(), arts, time.perf_counter() - start)
    click.echo(f"planned H={cfg.horizon} on {cfg.grid.size} points with {len(cfg.library)} measurements; V0(prior) = {report['V0_prior']!r}")


def _value_at_prior(cfg: PlannerConfig, values) -> float:
    return value_at(cfg.prior, 0, values)


def _budget(cfg: PlannerConfig, states, rc: RunConfig) -> Dict[str, Any]:
    consts = regularity_constants(cfg, states, rc.samples, rc.seed)
    d_B = estimate_delta_B(cfg.grid, rc.samples, rc.seed)
    try:
        d_A = delta_A(cfg.library)
    except SQSDError:
        d_A = 0.0
    budget = total_budget(consts, d_A, d_B, 0)
    return {"constants": consts.asdict(), "delta_B": d_B, "delta_A": d_A, "budget": budget.asdict()}


@main.command("simulate")
@_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--episodes", type=int, default=10_000, show_default=True)
@click.option("--traces", "trace_count", type=int, default=0, show_default=True, help="Episodes written to traces.jsonl")
@_exit_codes
def cmd_simulate(config_file, trace_count, **kwargs):
    """Monte Carlo execution of planned tables"""
    start = time.perf_counter()
    rc = _run_config(config_file, traces=trace_count, **kwargs)
    cfg, _ = build(rc)
    out = rc.outdir()
    planned = out / "plan.json"
    if not planned.exists():
        raise ConfigError(f"no planned tables in {out}; run plan first")
    recorded = json.loads(planned.read_text())["fingerprint"]
    if recorded != cfg.fingerprint():
        raise TableMismatch(cfg.fingerprint(), recorded)
    tables = read_values_csv(out / "values.csv", cfg.grid)
    summary, _ = monte_carlo(cfg, tables, rc.episodes, rc.seed)
    doc = {"config_hash": config_hash(rc.identity()), "fingerprint": recorded, **summary.asdict()}
    arts = [write_json(out / "summary.json", doc)]
    if rc.traces > 0:
        arts.append(write_jsonl(out / "traces.jsonl", (tr.asdict() for tr in traces(cfg, tables, rc.traces, rc.seed))))
    write_manifest(out, "simulate", rc.identity(), arts, time.perf_counter() - start)
    click.echo(f"success {summary.success_rate:.6f} +/- {summary.success_stderr:.6f}, E[tau] = {summary.mean_stop_time:.4f}")


@main.command("maps")
@_options
@_exit_codes
def cmd_maps(config_file, **kwargs):
    """One-step maps and finite-horizon structure"""
    start = time.perf_counter()
    rc = _run_config(config_file, **kwargs)
    if rc.horizon is None:
        rc.horizon = 2
    out = rc.outdir()
    if rc.scenario == "binary":
        arts = _binary_maps(rc, out)
    else:
        arts = _simplex_maps(rc, out)
    write_manifest(out, "maps", rc.identity(), arts, time.perf_counter() - start)
    click.echo(f"wrote {len(arts)} map artifacts to {out}")


def _binary_maps(rc: RunConfig, out: Path) -> List[Path]:
    scn = BinaryScenario(rc.theta, rc.library, rc.cost, rc.horizon, rc.grid)  # type: ignore[arg-type]
    lib = scn.library()
    curve = binary_gain_curve(rc.theta, lib=lib, c_meas=rc.cost)  # type: ignore[arg-type]
    bell = binary_bellman_h2(rc.theta, rc.cost, lib.params, curve.p)  # type: ignore[arg-type]
    return [
        write_csv(out / "gain.csv", ["p", "J1star", "gain", "phi_star"], zip(curve.p, curve.j1star, curve.gain, curve.phi_star)),
        write_csv(out / "bellman.csv", ["p", "V2", "V1", "V0"], zip(bell.p, bell.V2, bell.V1, bell.V0)),
        write_json(out / "maps.json", {"theta": rc.theta, "c_meas": rc.cost, "measurement_intervals": curve.intervals}),
    ]


def _simplex_maps(rc: RunConfig, out: Path) -> List[Path]:
    cfg, _ = build(rc)
    maps = one_step_maps(cfg.grid, cfg.table, cfg.library)
    cols = {"J1star": maps.j1star, "gain": maps.gain, "alpha_index": maps.alpha_index + 1, "alpha_star": maps.alpha_star}
    if cfg.M == 3:
        x, y = cfg.grid.embedding()
        cols = {"x": x, "y": y, **cols}
    arts = [write_map_csv(out / "maps.csv", cfg.grid, cols)]
    fh = finite_horizon(cfg)
    hcols: Dict[str, Any] = {}
    for t in range(cfg.horizon + 1):
        hcols[f"V{t}"] = fh.values.values[t]
    for t, d in enumerate(fh.advantages):
        hcols[f"D{t}"] = d
    for t in range(cfg.horizon):
        hcols[f"measure{t}"] = (fh.policy.kinds[t] == ActionKind.MEASURE).astype(int)
        hcols[f"alpha_index{t}"] = np.where(fh.alpha_index[t] >= 0, fh.alpha_index[t] + 1, 0)
    arts.append(write_map_csv(out / "horizon.csv", cfg.grid, hcols))
    summary: Dict[str, Any] = {"measure_fraction": fh.measure_fraction}
    if cfg.M == 3 and rc.scenario == "trine":
        summary["symmetry_residual"] = {
            "J1star": cyclic_symmetry_residual(cfg.grid, maps.j1star),
            "values": cyclic_symmetry_residual(cfg.grid, fh.values.values),
        }
    arts.append(write_json(out / "maps.json", summary))
    return arts


@main.command("routing")
@_options
@click.option("--case", type=click.Choice(list("ABCDE")), default="A", show_default=True)
@_exit_codes
def cmd_routing(config_file, **kwargs):
    """Outcome-conditioned posteriors from a representative starting belief"""
    start = time.perf_counter()
    rc = _run_config(config_file, **kwargs)
    if rc.scenario != "trine":
        raise ConfigError("routing is defined for the trine scenario")
    scn = TrineScenario(rc.library, rc.grid, rc.cost, 2)  # type: ignore[arg-type]
    cfg = scn.config()
    maps = one_step_maps(cfg.grid, cfg.table, cfg.library)
    case = {c.label: c for c in representative_cases(maps)}[rc.case]
    rep = route(case.belief, cfg.table, cfg.library)
    out = rc.outdir()
    doc = {"case": case.label, "description": case.description, **rep.asdict()}
    arts = [write_json(out / f"routing-{case.label}.json", doc)]
    write_manifest(out, "routing", rc.identity(), arts, time.perf_counter() - start)
    click.echo(", ".join(f"Pr(o={br.outcome + 1}) = {br.probability:.6f}" for br in rep.branches))


@main.command("bounds")
@_options
@_exit_codes
def cmd_bounds(config_file, **kwargs):
    """Regularity constants, error budgets and, for two hypotheses, the
    empirical error against a fine-grid oracle"""
    start = time.perf_counter()
    rc = _run_config(config_file, **kwargs)
    cfg, states = build(rc)
    values, _ = plan(cfg)
    doc = _budget(cfg, states, rc)
    doc["config_hash"] = config_hash(rc.identity())
    doc["belief_lipschitz_ratios"] = belief_lipschitz_ratios(values)
    if cfg.library.params is not None and cfg.library.period is not None:
        doc["action_lipschitz_ratios"] = action_lipschitz_ratios(cfg, values)
    if cfg.M == 2:
        oracle = exact_1d_oracle(cfg, rc.oracle)
        err = empirical_error(values, oracle)
        doc["empirical_error"] = err
        doc["within_budget"] = err[0] <= doc["budget"]["total"]
    out = rc.outdir()
    arts = [write_json(out / "bounds.json", doc)]
    write_manifest(out, "bounds", rc.identity(), arts, time.perf_counter() - start)
    click.echo(f"total budget {doc['budget']['total']!r}" + (f", empirical error {doc['empirical_error'][0]!r}" if cfg.M == 2 else ""))


@main.command("scaling")
@_options
@click.option("--grids", type=str, default="50,100,200,400", show_default=True)
@_exit_codes
def cmd_scaling(config_file, **kwargs):
    """Raw-mode operation counts against grid size, with a log-log fit"""
    start = time.perf_counter()
    rc = _run_config(config_file, **kwargs)
    rc.require_horizon()
    res = scaling_experiment(lambda N: build(rc, grid=N, memoize=False)[0], rc.grid_list())
    out = rc.outdir()
    names = list(res.rows[0]["counts"])
    arts = [
        write_csv(out / "scaling.csv", ["N", "size"] + names, ([r["N"], r["size"]] + [r["counts"][k] for k in names] for r in res.rows)),
        write_json(out / "scaling.json", {"slope": res.slope, "intercept": res.intercept, "rvalue": res.rvalue}),
    ]
    walls = {str(r["N"]): r["wall"] for r in res.rows}
    write_manifest(out, "scaling", rc.identity(), arts, time.perf_counter() - start, {"wall_seconds_by_N": walls})
    click.echo(f"log-log slope {res.slope:.4f}")
