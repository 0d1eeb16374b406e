from math import cos, isclose, pi, sin

import numpy as np
import pytest

from sqsdplan.qsd.belief import Belief, build_grid
from sqsdplan.qsd.cases import (
    BinaryScenario,
    TrineScenario,
    binary_bellman_h2,
    binary_closed_forms,
    binary_gain_curve,
    cyclic_permutation,
    cyclic_symmetry_residual,
    finite_horizon,
    one_step_maps,
    representative_cases,
    route,
    switching_point,
    trine_finite_horizon,
    trine_maps,
    trine_robustness,
    trine_routing,
)
from sqsdplan.qsd.constants import TRINE_PERIOD
from sqsdplan.qsd.errors import OutOfRange, ZeroProbabilityOutcome
from sqsdplan.qsd.planner import PlannerConfig, plan
from sqsdplan.qsd.quantum import (
    binary_library,
    binary_states,
    build_likelihood_table,
    helstrom_success,
    parameter_library,
    trine_library,
    trine_povm_wrapped,
    trine_states,
)


THETA = pi / 3


@pytest.fixture
def small_trine():
    return TrineScenario(alpha_count=24, resolution=12, c_meas=0.02, horizon=2)


class TestBinaryClosedForms:
    def test_01(self):
        p, phi = 0.3, 0.4
        r = binary_closed_forms(THETA, p, phi)
        pr0 = p * cos(phi) ** 2 + (1 - p) * cos(THETA - phi) ** 2
        assert isclose(r.pr0, pr0)
        assert isclose(r.pr0 + r.pr1, 1.0)
        assert isclose(r.p0, p * cos(phi) ** 2 / pr0)
        assert isclose(r.stopval, 0.7)

    def test_02(self):
        for phi in (0.1, 0.9, 2.2):
            r = binary_closed_forms(THETA, 0.5, phi)
            assert isclose(r.J1, 0.5 + 0.5 * sin(THETA) * abs(sin(2 * phi - THETA)), abs_tol=1e-12)

    def test_03(self):
        with pytest.raises(ZeroProbabilityOutcome):
            binary_closed_forms(THETA, 1.0, 0.0)


class TestBinaryScenario:
    def test_01(self):
        with pytest.raises(OutOfRange):
            BinaryScenario(pi / 2)
        with pytest.raises(OutOfRange):
            BinaryScenario(0.0)

    def test_02(self):
        scn = BinaryScenario(THETA, library_size=35, resolution=50, horizon=1)
        cfg = scn.config()
        assert cfg.grid.size == 51
        assert len(cfg.library) == 36
        assert cfg.memoize


class TestGainCurve:
    def test_01(self):
        for theta in (0.3, THETA, 1.2):
            curve = binary_gain_curve(theta, [0.5], binary_library(36, theta))
            rho1, rho2 = binary_states(theta)
            assert isclose(curve.j1star[0], helstrom_success(0.5, rho1, rho2), abs_tol=1e-9)
            assert isclose(curve.gain[0], 0.5 * sin(theta), abs_tol=1e-12)

    def test_02(self):
        curve = binary_gain_curve(THETA, c_meas=0.01)
        assert np.all(curve.gain >= 0)
        assert len(curve.intervals) == 1
        lo, hi = curve.intervals[0]
        assert lo < 0.5 < hi

    def test_03(self):
        curve = binary_gain_curve(THETA, [0.001, 0.999])
        assert np.all(curve.gain < 0.01)


class TestBellmanH2:
    def test_01(self):
        phi = binary_library(24, THETA).params
        b = binary_bellman_h2(THETA, 0.01, phi, np.linspace(0.01, 0.99, 99))
        assert np.all(b.V0 >= b.V1)
        assert np.all(b.V1 >= b.V2)
        assert np.allclose(b.V2, np.maximum(b.p, 1 - b.p))

    def test_02(self):
        scn = BinaryScenario(THETA, library_size=24, c_meas=0.01, horizon=2, resolution=200)
        cfg = scn.config()
        values, _ = plan(cfg)
        p = cfg.grid.points[:, 0]
        b = binary_bellman_h2(THETA, 0.01, cfg.library.params, p)
        assert np.abs(values[1] - b.V1).max() <= 1 / 400 + 1e-12
        assert np.abs(values[0] - b.V0).max() <= 0.01


class TestTrineMaps:
    def test_01(self, small_trine):
        maps = trine_maps(small_trine)
        center = maps.grid.id_of((4, 4, 4))
        assert isclose(maps.j1star[center], 2 / 3, abs_tol=1e-12)
        assert isclose(maps.gain[center], 1 / 3, abs_tol=1e-12)
        assert maps.alpha_index[center] == 0
        for v in ((12, 0, 0), (0, 12, 0), (0, 0, 12)):
            assert maps.gain[maps.grid.id_of(v)] <= 1e-12

    def test_02(self, small_trine):
        maps = trine_maps(small_trine)
        assert cyclic_symmetry_residual(maps.grid, maps.j1star) <= 1e-12
        assert cyclic_symmetry_residual(maps.grid, maps.gain) <= 1e-12
        assert set(maps.columns()) == {"x", "y", "J1star", "gain", "alpha_star", "stopval"}

    def test_03(self):
        g = build_grid(5, 3)
        perm = cyclic_permutation(g)
        assert np.array_equal(perm[cyclic_permutation(g, 2)], np.arange(g.size))
        assert tuple(g.coords[perm[g.id_of((5, 0, 0))]]) == (0, 5, 0)

    def test_04(self):
        # equidistant posteriors must not favour one relabeling
        lib = trine_library(24)
        table = build_likelihood_table(trine_states(), lib)
        cfg = PlannerConfig(2, 0.02, build_grid(60, 3), lib, table, Belief.uniform(3), memoize=True)
        values, _ = plan(cfg)
        assert cyclic_symmetry_residual(cfg.grid, values.values) <= 1e-12

    def test_05(self):
        step = TRINE_PERIOD / 24
        lib = parameter_library(trine_povm_wrapped, [(k + 0.5) * step for k in range(24)], TRINE_PERIOD, "trine")
        table = build_likelihood_table(trine_states(), lib)
        cfg = PlannerConfig(2, 0.02, build_grid(12, 3), lib, table, Belief.uniform(3), memoize=True)
        values, _ = plan(cfg)
        assert cyclic_symmetry_residual(cfg.grid, values.values) <= 1e-12


class TestRouting:
    def test_01(self, small_trine):
        rep = trine_routing(small_trine, Belief.uniform(3))
        for br in rep.branches:
            assert isclose(br.probability, 1 / 3, abs_tol=1e-12)
            assert br.posterior is not None
        assert rep.probability_residual <= 1e-12
        assert rep.normalization_residual <= 1e-12
        assert rep.total_probability_residual <= 1e-12
        assert rep.orientation == 0.0

    def test_02(self, small_trine):
        rep = trine_routing(small_trine, Belief(np.array([0.90, 0.05, 0.05])))
        top = max(rep.branches, key=lambda br: br.probability)
        assert top.posterior.weights[0] > 0.9
        assert rep.total_probability_residual <= 1e-12

    def test_03(self, small_trine):
        rep = trine_routing(small_trine, Belief(np.array([0.5, 0.3, 0.2])))
        d = rep.asdict()
        assert len(d["branches"]) == 3
        assert set(d["diagnostics"]) == {
            "probability_residual",
            "normalization_residual",
            "total_probability_residual",
            "runner_up_gap",
        }
        assert all(br["x"] is not None for br in d["branches"])

    def test_04(self):
        lib = binary_library(12, THETA)
        table = build_likelihood_table(binary_states(THETA), lib)
        rep = route(Belief.uniform(2), table, lib)
        assert rep.branches[0].x is None
        assert isclose(sum(br.probability for br in rep.branches), 1.0)


class TestRepresentativeCases:
    def test_01(self, small_trine):
        maps = trine_maps(small_trine)
        cases = representative_cases(maps)
        assert [c.label for c in cases] == ["A", "B", "C", "D", "E"]
        e = cases[-1].belief
        assert np.all(e.weights > 0)
        i = switching_point(maps)
        assert maps.gain[i] > 0


class TestFiniteHorizon:
    def test_01(self, small_trine):
        res = trine_finite_horizon(small_trine)
        assert len(res.advantages) == 2
        assert np.all(res.D0 >= 0) and np.all(res.D1 >= 0)
        assert res.measure_fraction[0] >= res.measure_fraction[1]
        stop1 = res.alpha_index[1] < 0
        assert np.all(np.isnan(res.alpha[1][stop1]))

    def test_02(self, small_trine):
        with pytest.raises(ValueError):
            trine_finite_horizon(TrineScenario(24, 12, 0.02, 3))

    def test_03(self):
        cfg = TrineScenario(12, 8, 0.02, 3).config()
        res = finite_horizon(cfg)
        assert len(res.measure_fraction) == 3
        assert all(0.0 <= f <= 1.0 for f in res.measure_fraction)

    def test_04(self):
        rows = trine_robustness(TrineScenario(12, 8, 0.02, 2), [(1, 1), (2, 1), (1, 2)])
        assert [(r["resolution"], r["alpha_count"]) for r in rows] == [(8, 12), (16, 12), (8, 24)]

    def test_05(self):
        res = trine_finite_horizon(TrineScenario())
        assert np.all(res.D0 >= 0) and np.all(res.D1 >= 0)
        assert cyclic_symmetry_residual(res.values.grid, res.values.values) <= 1e-12

    @pytest.mark.slow
    def test_06(self):
        rows = trine_robustness(TrineScenario())
        base = rows[0]["measure_fraction"]
        for r in rows[1:]:
            for t in range(2):
                assert abs(r["measure_fraction"][t] - base[t]) <= 0.05


class TestOneStepMaps:
    def test_01(self):
        lib = binary_library(12, THETA)
        table = build_likelihood_table(binary_states(THETA), lib)
        maps = one_step_maps(build_grid(20, 2), table, lib)
        mid = maps.grid.id_of((10, 10))
        assert isclose(maps.gain[mid], 0.5 * sin(THETA), abs_tol=1e-12)
