from itertools import product
from math import isclose, pi, sin

import numpy as np
import pytest

from sqsdplan.qsd.belief import Belief, build_grid, project
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.errors import ConfigError, DimMismatch, OutOfRange
from sqsdplan.qsd.planner import (
    Action,
    ActionKind,
    PlannerConfig,
    exact_1d_oracle,
    gain,
    one_step_opt,
    one_step_value,
    one_step_values,
    oracle_on_grid,
    plan,
    routed_one_step_value,
    tie_average,
    value_at,
)
from sqsdplan.qsd.quantum import (
    LikelihoodTable,
    MeasurementLibrary,
    binary_library,
    binary_projective_povm,
    binary_states,
    build_likelihood_table,
    coarse_grain_povm,
    parameter_library,
    success_probability,
    trine_library,
    trine_states,
    validate_povm,
)


THETA = pi / 3


def binary_config(H, c, N, params=(0.0, pi / 4), theta=THETA, prior=None, memoize=False, workers=1):
    lib = parameter_library(binary_projective_povm, params, pi, "binary")
    table = build_likelihood_table(binary_states(theta), lib)
    prior = Belief.uniform(2) if prior is None else prior
    return PlannerConfig(H, c, build_grid(N, 2), lib, table, prior, memoize, workers)


def trine_config(H, c, N, count=12, memoize=False, workers=1):
    lib = trine_library(count)
    table = build_likelihood_table(trine_states(), lib)
    return PlannerConfig(H, c, build_grid(N, 3), lib, table, Belief.uniform(3), memoize, workers)


def j1_half(theta, phi):
    """J1 at p = 1/2 for the projective family"""
    return 0.5 + 0.5 * sin(theta) * abs(sin(2 * phi - theta))


class TestAction:
    def test_01(self):
        assert Action.stop(0).is_stop
        assert not Action.measure(3).is_stop
        assert str(Action.measure(3)) == "measure(4)"
        assert str(Action.stop(1)) == "stop(2)"


class TestOneStep:
    def test_01(self):
        # phi = theta/2 makes both outcomes uninformative about the ordering
        lib = parameter_library(binary_projective_povm, [THETA / 2], pi, "binary")
        table = build_likelihood_table(binary_states(THETA), lib)
        for p in (0.1, 0.3, 0.5, 0.8):
            b = Belief(np.array([p, 1 - p]))
            assert isclose(one_step_value(b, 0, table), max(p, 1 - p), abs_tol=1e-12)

    def test_02(self):
        phis = [0.0, 0.2, 0.7, 1.1, 2.0, 3.0]
        lib = parameter_library(binary_projective_povm, phis, pi, "binary")
        table = build_likelihood_table(binary_states(THETA), lib)
        b = Belief.uniform(2)
        for a, phi in enumerate(phis):
            assert isclose(one_step_value(b, a, table), j1_half(THETA, phi), abs_tol=1e-12)

    def test_03(self):
        lib = MeasurementLibrary((validate_povm([np.eye(2)]),))
        table = build_likelihood_table(binary_states(THETA), lib)
        b = Belief(np.array([0.35, 0.65]))
        assert isclose(one_step_value(b, 0, table), 0.65, abs_tol=1e-12)

    def test_04(self):
        table = build_likelihood_table(trine_states(), trine_library(24))
        rng = np.random.default_rng(5)
        for w in rng.dirichlet(np.ones(3), size=25):
            b = Belief(w)
            for a in (0, 7, 19):
                assert abs(routed_one_step_value(b, a, table) - one_step_values(w, table)[0, a]) <= 1e-12

    def test_05(self):
        lib = binary_library(180, THETA)
        table = build_likelihood_table(binary_states(THETA), lib)
        r = one_step_opt(Belief.uniform(2), table, lib)
        assert isclose(r.value, 0.5 + 0.5 * sin(THETA), abs_tol=1e-12)
        assert r.alpha is not None
        assert isclose(gain(Belief.uniform(2), table), 0.5 * sin(THETA), abs_tol=1e-12)

    def test_06(self):
        lib = trine_library(24)
        table = build_likelihood_table(trine_states(), lib)
        r = one_step_opt(Belief.vertex(0, 3), table, lib)
        assert isclose(r.value, 1.0, abs_tol=1e-12)
        assert gain(Belief.vertex(0, 3), table) <= 1e-12

    def test_07(self):
        # J1* is convex and cyclically symmetric, so the center is a minimizer
        lib = trine_library(24)
        table = build_likelihood_table(trine_states(), lib)
        g = build_grid(12, 3)
        j = one_step_values(g.points, table).max(axis=1)
        center = g.id_of((4, 4, 4))
        assert j[center] <= j.min() + 1e-12
        assert isclose(j[center], 2 / 3, abs_tol=1e-12)

    def test_08(self):
        # routed and simplified forms against every deterministic decision rule
        rng = np.random.default_rng(17)
        for _ in range(10_000):
            M, O = rng.integers(2, 4, size=2)
            lik = rng.dirichlet(np.ones(O), size=M)[:, None, :]
            table = LikelihoodTable(lik)
            b = Belief(rng.dirichlet(np.ones(M)))
            simplified = one_step_values(b.weights, table)[0, 0]
            assert abs(routed_one_step_value(b, 0, table) - simplified) <= 1e-12
            rules = np.array(list(product(range(M), repeat=O)))
            joint = b.weights[:, None] * lik[:, 0, :]
            best = joint[rules, np.arange(O)].sum(axis=1).max()
            assert abs(best - simplified) <= 1e-12

    def test_09(self):
        lib = trine_library(6)
        states = trine_states()
        table = build_likelihood_table(states, lib)
        rng = np.random.default_rng(19)
        for w in rng.dirichlet(np.ones(3), size=20):
            for a in (0, 4):
                best = max(
                    success_probability(states, w, coarse_grain_povm(lib.povms[a], rule, 3))
                    for rule in product(range(3), repeat=3)
                )
                assert abs(best - one_step_values(w, table)[0, a]) <= 1e-12


class TestPlannerConfig:
    def test_01(self):
        with pytest.raises(ConfigError):
            binary_config(2, 0.6, 10)
        with pytest.raises(ConfigError):
            binary_config(-1, 0.1, 10)
        with pytest.raises(ConfigError):
            binary_config(1, -0.1, 10)
        with pytest.raises(ConfigError):
            binary_config(1, 0.1, 10, workers=0)

    def test_02(self):
        with pytest.raises(DimMismatch):
            binary_config(1, 0.1, 10, prior=Belief.uniform(3))

    def test_03(self):
        a = binary_config(2, 0.01, 10)
        assert a.fingerprint() == binary_config(2, 0.01, 10, memoize=True, workers=3).fingerprint()
        assert a.fingerprint() != binary_config(2, 0.02, 10).fingerprint()
        assert a.fingerprint() != binary_config(2, 0.01, 12).fingerprint()


class TestPlan:
    def test_01(self):
        cfg = binary_config(0, 0.01, 10)
        values, policy = plan(cfg)
        assert np.array_equal(values[0], cfg.grid.points.max(axis=1))
        assert np.all(policy.kinds[0] == ActionKind.STOP)
        assert np.array_equal(policy.indices[0], np.argmax(cfg.grid.points, axis=1))

    def test_02(self):
        values, policy = plan(binary_config(1, 0.5, 20))
        assert np.all(policy.kinds == ActionKind.STOP)
        assert np.array_equal(values[0], values[1])

    def test_03(self):
        values, _ = plan(binary_config(3, 0.01, 40, params=tuple(np.arange(12) * pi / 12)))
        for t in range(3):
            assert np.all(values[t] >= values[t + 1])
        assert np.all(values.values <= 1.0)

    def test_04(self):
        params = tuple(np.arange(10) * pi / 10)
        v_raw, p_raw = plan(binary_config(2, 0.01, 30, params=params))
        v_mem, p_mem = plan(binary_config(2, 0.01, 30, params=params, memoize=True))
        assert np.array_equal(v_raw.values, v_mem.values)
        assert np.array_equal(p_raw.kinds, p_mem.kinds)
        assert np.array_equal(p_raw.indices, p_mem.indices)

    def test_05(self):
        v1, p1 = plan(trine_config(2, 0.02, 8))
        v2, p2 = plan(trine_config(2, 0.02, 8, workers=3))
        assert np.array_equal(v1.values, v2.values)
        assert np.array_equal(p1.indices, p2.indices)

    def test_06(self):
        # orthogonal states are told apart by one measurement
        cfg = binary_config(1, 0.0, 10, params=(0.0,), theta=pi / 2)
        values, policy = plan(cfg)
        center = cfg.grid.id_of((5, 5))
        assert isclose(values[0][center], 1.0, abs_tol=1e-12)
        assert policy.action(0, center) == Action.measure(0)

    def test_07(self):
        cfg = trine_config(2, 0.02, 10)
        values, policy = plan(cfg)
        assert 0.0 <= policy.measure_fraction(1) <= policy.measure_fraction(0) <= 1.0
        assert policy.measure_fraction(2) == 0.0

    def test_08(self):
        # grid posteriors often sit midway between lattice points
        v_raw, p_raw = plan(trine_config(2, 0.02, 12))
        v_mem, p_mem = plan(trine_config(2, 0.02, 12, memoize=True))
        assert np.array_equal(v_raw.values, v_mem.values)
        assert np.array_equal(p_raw.kinds, p_mem.kinds)
        assert np.array_equal(p_raw.indices, p_mem.indices)


class TestTieAverage:
    def test_01(self):
        v = np.array([0.5, 0.7, 0.9, 1.0])
        ties = np.array([[1, 2, -1, -1], [3, -1, -1, -1], [-1, -1, -1, -1]])
        assert np.allclose(tie_average(ties, v), [0.8, 1.0, 0.0])

    def test_02(self):
        # the value at a midpoint is the mean of its two neighbours
        cfg = binary_config(1, 0.01, 10)
        values, _ = plan(cfg)
        b = Belief(np.array([0.25, 0.75]))
        lo, hi = cfg.grid.id_of((2, 8)), cfg.grid.id_of((3, 7))
        assert isclose(value_at(b, 0, values), 0.5 * (values[0][lo] + values[0][hi]), abs_tol=1e-15)


class TestCounters:
    def test_01(self):
        cfg = binary_config(1, 0.01, 10)
        c = CostCounters()
        plan(cfg, c)
        assert c.mode == "raw"
        # |0> never gives outcome 1 of the phi = 0 basis
        assert c.skipped == 1
        assert c.projections == 1 * 11 * 2 * 2 - c.skipped
        assert c.proj_candidates == (1 * 11 * 2 * 2 - c.skipped) * 11
        assert c.proj_comparisons == c.proj_candidates * 2
        assert c.stop == 22
        assert c.obs == 44
        assert c.inits == 22
        assert c.actmax == 22
        assert c.posterior == c.lookups == c.aggregations == 43

    def test_02(self):
        cfg = binary_config(3, 0.01, 10, memoize=True)
        c = CostCounters()
        plan(cfg, c)
        assert c.mode == "memoized"
        assert c.projections == 43
        assert c.proj_candidates == 43 * 4
        assert c.memo_hits == 3 * 43

    def test_03(self):
        c1, c2 = CostCounters(), CostCounters()
        plan(trine_config(2, 0.02, 6), c1)
        plan(trine_config(2, 0.02, 6, workers=4), c2)
        assert c1.counts() == c2.counts()


class TestValueAt:
    def test_01(self):
        cfg = binary_config(2, 0.01, 20)
        values, _ = plan(cfg)
        i = cfg.grid.id_of((7, 13))
        assert value_at(cfg.grid.point(i), 0, values) == values[0][i]
        b = Belief(np.array([0.341, 0.659]))
        j = project(b, cfg.grid).grid_id
        assert value_at(b, 1, values) == values[1][j]
        assert value_at(b, 2, values) == cfg.grid.points[j].max()

    def test_02(self):
        cfg = binary_config(1, 0.01, 10)
        values, _ = plan(cfg)
        with pytest.raises(OutOfRange):
            value_at(Belief.uniform(2), 2, values)


class TestOracle:
    def test_01(self):
        cfg = binary_config(0, 0.01, 10)
        oracle = exact_1d_oracle(cfg, 200)
        assert np.array_equal(oracle_on_grid(oracle, cfg.grid)[0], cfg.grid.points.max(axis=1))

    def test_02(self):
        cfg = binary_config(1, 0.01, 20, params=tuple(np.arange(8) * pi / 8))
        a = oracle_on_grid(exact_1d_oracle(cfg, 400), cfg.grid)
        b = oracle_on_grid(exact_1d_oracle(cfg, 800), cfg.grid)
        assert np.abs(a - b).max() <= 1 / 400

    def test_03(self):
        with pytest.raises(DimMismatch):
            exact_1d_oracle(trine_config(1, 0.01, 4))
