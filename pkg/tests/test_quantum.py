from math import cos, isclose, pi, sin

import numpy as np
import pytest

from sqsdplan.qsd.errors import (
    BadTrace,
    DimMismatch,
    EffectNotPsd,
    EmptyLibrary,
    IncompleteSum,
    NotHermitian,
    NotPsd,
    NotUnitary,
    OutOfRange,
)
from sqsdplan.qsd.quantum import (
    PAULI_Y,
    MeasurementLibrary,
    LikelihoodTable,
    binary_library,
    binary_projective_povm,
    binary_states,
    born_prob,
    build_likelihood_table,
    coarse_grain_povm,
    computational_povm,
    helstrom_success,
    parameter_library,
    success_probability,
    trine_library,
    trine_povm,
    trine_states,
    uniform_params,
    unitary_conjugated_povm,
    unitary_family_library,
    validate_density,
    validate_povm,
    y_rotation,
)


PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
KET0 = np.array([[1, 0], [0, 0]], dtype=complex)
KET1 = np.array([[0, 0], [0, 1]], dtype=complex)


class TestDensity:
    def test_01(self):
        rho = validate_density(np.eye(2) / 2)
        assert np.allclose(rho.eigenvalues, [0.5, 0.5])
        assert rho.dim == 2

    def test_02(self):
        rho = validate_density(KET0)
        assert np.allclose(rho.eigenvalues, [0.0, 1.0])

    def test_03(self):
        with pytest.raises(BadTrace) as e:
            validate_density(np.diag([0.6, 0.6]))
        assert isclose(e.value.trace, 1.2)

    def test_04(self):
        with pytest.raises(NotHermitian):
            validate_density([[0.5, 0.1], [0.2, 0.5]])
        with pytest.raises(NotPsd) as e:
            validate_density(np.diag([1.5, -0.5]))
        assert isclose(e.value.min_eigenvalue, -0.5)

    def test_05(self):
        with pytest.raises(DimMismatch):
            validate_density(np.ones((2, 3)) / 2)


class TestPovm:
    def test_01(self):
        f = validate_povm([KET0, KET1])
        assert f.outcome_count == 2
        assert validate_povm([np.eye(2)]).outcome_count == 1

    def test_02(self):
        with pytest.raises(IncompleteSum):
            validate_povm([0.9 * KET0, KET1])

    def test_03(self):
        with pytest.raises(EffectNotPsd) as e:
            validate_povm([np.diag([1.5, 0.0]), np.diag([-0.5, 1.0])])
        assert e.value.outcome == 1

    def test_04(self):
        with pytest.raises(DimMismatch):
            validate_povm([np.eye(2), np.eye(3)])


class TestBorn:
    def test_01(self):
        rho = validate_density(KET0)
        assert born_prob(KET0, rho) == 1.0
        assert born_prob(KET1, rho) == 0.0

    def test_02(self):
        rho = validate_density(KET0)
        for phi in (0.0, 0.3, pi / 4, 1.2, 2.9):
            f = binary_projective_povm(phi)
            assert isclose(born_prob(f.effects[0], rho), cos(phi) ** 2, abs_tol=1e-14)
            assert isclose(born_prob(f.effects[1], rho), sin(phi) ** 2, abs_tol=1e-14)


class TestUnitary:
    def test_01(self):
        f = computational_povm(2)
        g = unitary_conjugated_povm(np.eye(2), f)
        for a, b in zip(f.effects, g.effects):
            assert np.allclose(a, b)

    def test_02(self):
        g = unitary_conjugated_povm(PAULI_X, computational_povm(2))
        assert np.allclose(g.effects[0], KET1)
        assert np.allclose(g.effects[1], KET0)

    def test_03(self):
        with pytest.raises(NotUnitary):
            unitary_conjugated_povm(2 * np.eye(2), computational_povm(2))

    def test_04(self):
        # y_rotation(phi) maps |0> to cos(phi)|0> + sin(phi)|1>
        phi = 0.4
        v = y_rotation(phi) @ np.array([1.0, 0.0])
        assert np.allclose(v, [cos(phi), sin(phi)])


class TestFamilies:
    def test_binary01(self):
        f0 = binary_projective_povm(0.0)
        assert np.allclose(f0.effects[0], KET0)
        assert np.allclose(f0.effects[1], KET1)
        f1 = binary_projective_povm(pi / 2)
        assert np.allclose(f1.effects[0], KET1)
        assert np.allclose(f1.effects[1], KET0)

    def test_binary02(self):
        rho = validate_density(KET0)
        f = binary_projective_povm(pi / 4)
        assert isclose(born_prob(f.effects[0], rho), 0.5)
        assert isclose(born_prob(f.effects[1], rho), 0.5)

    def test_trine01(self):
        tab = build_likelihood_table(trine_states(), trine_library(3))
        assert isclose(tab.values[0, 0, 0], 2 / 3, abs_tol=1e-14)
        assert isclose(tab.values[1, 0, 0], 1 / 6, abs_tol=1e-14)
        assert tab.values.shape == (3, 3, 3)
        assert np.allclose(tab.values.sum(axis=2), 1.0, atol=1e-12)

    def test_trine02(self):
        with pytest.raises(OutOfRange):
            trine_povm(2 * pi / 3)

    def test_unitary_family01(self):
        lib = unitary_family_library(computational_povm(2), PAULI_Y, [pi / 6, pi / 3], pi, "y-rotation")
        rho = validate_density(KET0)
        assert isclose(born_prob(lib.povms[0].effects[0], rho), cos(pi / 6) ** 2, abs_tol=1e-12)
        assert isclose(born_prob(lib.povms[1].effects[0], rho), cos(pi / 3) ** 2, abs_tol=1e-12)


class TestLibrary:
    def test_01(self):
        assert len(binary_library(180, pi / 3)) == 180
        assert len(binary_library(181, pi / 3)) == 182
        assert len(binary_library(16)) == 16

    def test_02(self):
        ps = uniform_params(4, 1.0, [0.3, 0.25, 1.3])
        assert ps == (0.0, 0.25, 0.3, 0.5, 0.75)

    def test_03(self):
        with pytest.raises(EmptyLibrary):
            MeasurementLibrary(())
        with pytest.raises(DimMismatch):
            MeasurementLibrary((computational_povm(2), validate_povm([np.eye(2)])))
        with pytest.raises(ValueError):
            parameter_library(binary_projective_povm, [0.5, 0.5], pi, "binary")

    def test_04(self):
        lib = trine_library(24)
        assert len(lib) == 24
        assert lib.param(0) == 0.0
        assert isclose(lib.param(1), (2 * pi / 3) / 24)


class TestLikelihoodTable:
    def test_01(self):
        theta = pi / 3
        lib = parameter_library(binary_projective_povm, [0.0, pi / 4], pi, "binary")
        tab = build_likelihood_table(binary_states(theta), lib)
        assert isclose(tab.values[0, 0, 0], 1.0)
        assert isclose(tab.values[1, 0, 0], 0.25)
        assert tab.hypotheses == 2 and tab.actions == 2 and tab.outcomes == 2

    def test_02(self):
        lib = MeasurementLibrary((validate_povm([np.eye(2)]),))
        tab = build_likelihood_table(binary_states(pi / 3), lib)
        assert np.allclose(tab.values, 1.0, atol=1e-15)

    def test_03(self):
        with pytest.raises(IncompleteSum):
            LikelihoodTable(np.array([[[0.5, 0.4]]]))
        with pytest.raises(DimMismatch):
            build_likelihood_table(trine_states(), MeasurementLibrary((computational_povm(3),)))


class TestHelstrom:
    def test_01(self):
        for theta in (0.2, pi / 6, pi / 3, 1.3):
            rho1, rho2 = binary_states(theta)
            assert isclose(helstrom_success(0.5, rho1, rho2), 0.5 * (1 + sin(theta)), abs_tol=1e-9)

    def test_02(self):
        # projective basis at theta/2 + pi/4, outcome 0 declares the second state
        theta = pi / 3
        states = binary_states(theta)
        f = coarse_grain_povm(binary_projective_povm(theta / 2 + pi / 4), [1, 0], 2)
        ps = success_probability(states, [0.5, 0.5], f)
        assert isclose(ps, helstrom_success(0.5, *states), abs_tol=1e-9)
