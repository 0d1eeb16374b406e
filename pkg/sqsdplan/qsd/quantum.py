"""Density operators, POVMs, the parameterized measurement families and the
Born-rule likelihood table"""

import logging
from dataclasses import dataclass, field
from math import cos, sin, pi
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.linalg import eigvalsh, expm, norm  # type: ignore

from sqsdplan.qsd.constants import (
    EPS_HERM,
    EPS_TR,
    EPS_COMP,
    EPS_PSD,
    EPS_UNIT,
    BINARY_PERIOD,
    TRINE_PERIOD,
    TRINE_PHASES,
)
from sqsdplan.qsd.errors import (
    NotHermitian,
    NotPsd,
    BadTrace,
    EffectNotPsd,
    IncompleteSum,
    DimMismatch,
    NotUnitary,
    OutOfRange,
    EmptyLibrary,
)
from sqsdplan.utils import is_strictly_increasing


logger = logging.getLogger(__name__)

ComplexMatrix = npt.NDArray[np.complex128]
MatrixLike = Union[ComplexMatrix, Sequence[Sequence[complex]]]


def as_matrix(m: MatrixLike) -> ComplexMatrix:
    a = np.array(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch("square matrix", a.shape)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    a.setflags(write=False)
    return a


def hermitian_residual(m: ComplexMatrix) -> float:
    return float(np.max(np.abs(m - m.conj().T)))


def min_eigenvalue(m: ComplexMatrix) -> float:
    # Hermitian part only; callers check Hermiticity first
    h = (m + m.conj().T) / 2
    return float(eigvalsh(h)[0])


def ket(amplitudes: Sequence[complex]) -> npt.NDArray[np.complex128]:
    v = np.asarray(amplitudes, dtype=np.complex128)
    return v / np.linalg.norm(v)


def projector(v: Sequence[complex]) -> ComplexMatrix:
    k = ket(v)
    return as_matrix(np.outer(k, k.conj()))


# Density operators


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """DensityOperator is a validated quantum state: Hermitian, positive
    semidefinite and of unit trace. Construct it through `validate_density`."""

    matrix: ComplexMatrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eigenvalues(self) -> npt.NDArray[np.float64]:
        return eigvalsh(self.matrix)

    def __repr__(self) -> str:
        ev = ", ".join(f"{x:.4f}" for x in self.eigenvalues)
        return f"DensityOperator(dim={self.dim}, eigenvalues=({ev}))"


def validate_density(m: MatrixLike) -> DensityOperator:
    a = as_matrix(m)
    r = hermitian_residual(a)
    if r > EPS_HERM:
        raise NotHermitian(r)
    lam = min_eigenvalue(a)
    if lam < -EPS_PSD:
        raise NotPsd(lam)
    tr = complex(np.trace(a))
    if abs(tr - 1) > EPS_TR:
        raise BadTrace(tr.real)
    return DensityOperator(a)


def pure_state(amplitudes: Sequence[complex]) -> DensityOperator:
    return validate_density(projector(amplitudes))


# POVMs


@dataclass(frozen=True, eq=False)
class Povm:
    """Povm is an ordered list of effects indexed by outcome. Construct it
    through `validate_povm`."""

    effects: Tuple[ComplexMatrix, ...]

    @property
    def outcome_count(self) -> int:
        return len(self.effects)

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    def __repr__(self) -> str:
        return f"Povm(dim={self.dim}, outcomes={self.outcome_count})"


def validate_povm(effects: Sequence[MatrixLike]) -> Povm:
    if len(effects) == 0:
        raise ValueError("POVM needs at least one effect")
    mats = tuple(as_matrix(e) for e in effects)
    dim = mats[0].shape[0]
    for e in mats:
        if e.shape[0] != dim:
            raise DimMismatch(dim, e.shape[0])
    for o, e in enumerate(mats):
        r = hermitian_residual(e)
        if r > EPS_HERM:
            raise NotHermitian(r)
        lam = min_eigenvalue(e)
        if lam < -EPS_PSD:
            raise EffectNotPsd(o, lam)
    residual = float(norm(sum(mats) - np.eye(dim), 2))
    if residual > EPS_COMP:
        raise IncompleteSum(residual)
    return Povm(mats)


def born_prob(e: MatrixLike, rho: Union[DensityOperator, MatrixLike]) -> float:
    em = e if isinstance(e, np.ndarray) else as_matrix(e)
    r = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=np.complex128)
    if em.shape != r.shape:
        raise DimMismatch(em.shape, r.shape)
    p = float(np.trace(em @ r).real)
    if p < -EPS_PSD or p > 1 + EPS_PSD:
        raise OutOfRange("Born probability", p, 0.0, 1.0)
    return min(max(p, 0.0), 1.0)


def is_unitary(u: ComplexMatrix) -> float:
    return float(norm(u.conj().T @ u - np.eye(u.shape[0]), 2))


def unitary_conjugated_povm(u: MatrixLike, f: Povm) -> Povm:
    um = as_matrix(u)
    if um.shape[0] != f.dim:
        raise DimMismatch(f.dim, um.shape[0])
    r = is_unitary(um)
    if r > EPS_UNIT:
        raise NotUnitary(r)
    return validate_povm([um.conj().T @ e @ um for e in f.effects])


def computational_povm(dim: int = 2) -> Povm:
    return validate_povm([np.diag([1.0 if j == i else 0.0 for j in range(dim)]) for i in range(dim)])


PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)


def y_rotation(phi: float) -> ComplexMatrix:
    """exp(-i phi Y), which maps |0> to cos(phi)|0> + sin(phi)|1>"""
    return as_matrix(expm(-1j * phi * PAULI_Y))


# Measurement families


def binary_projective_povm(phi: float) -> Povm:
    """Projective measurement onto |e_0> = cos(phi)|0> + sin(phi)|1> and
    |e_1> = -sin(phi)|0> + cos(phi)|1>. Outcome 0 has Tr(E_0 |0><0|) = cos^2(phi)."""
    e0 = np.array([cos(phi), sin(phi)], dtype=np.complex128)
    e1 = np.array([-sin(phi), cos(phi)], dtype=np.complex128)
    return validate_povm([np.outer(e0, e0.conj()), np.outer(e1, e1.conj())])


def _equatorial_ket(beta: float) -> npt.NDArray[np.complex128]:
    return np.array([1.0, np.exp(1j * beta)], dtype=np.complex128) / np.sqrt(2)


def trine_povm(alpha: float) -> Povm:
    if not (0.0 <= alpha < TRINE_PERIOD):
        raise OutOfRange("alpha", alpha, 0.0, TRINE_PERIOD)
    effects = []
    for phase in TRINE_PHASES:
        v = _equatorial_ket(alpha + phase)
        effects.append((2.0 / 3.0) * np.outer(v, v.conj()))
    return validate_povm(effects)


def trine_povm_wrapped(alpha: float) -> Povm:
    return trine_povm(float(np.mod(alpha, TRINE_PERIOD)))


def binary_states(theta: float) -> Tuple[DensityOperator, DensityOperator]:
    """|psi_1> = |0>, |psi_2> = cos(theta)|0> + sin(theta)|1>"""
    return pure_state([1.0, 0.0]), pure_state([cos(theta), sin(theta)])


def trine_states() -> Tuple[DensityOperator, ...]:
    return tuple(validate_density(np.outer(v, v.conj())) for v in (_equatorial_ket(ph) for ph in TRINE_PHASES))


def coarse_grain_povm(povm: Povm, rule: Sequence[int], hypotheses: int) -> Povm:
    """Guess-labeled POVM M_i = sum of E_o over outcomes o with rule[o] == i"""
    if len(rule) != povm.outcome_count:
        raise DimMismatch(povm.outcome_count, len(rule))
    grouped = [np.zeros((povm.dim, povm.dim), dtype=np.complex128) for _ in range(hypotheses)]
    for o, i in enumerate(rule):
        grouped[i] = grouped[i] + povm.effects[o]
    return validate_povm(grouped)


def success_probability(states: Sequence[DensityOperator], prior: Sequence[float], povm: Povm) -> float:
    """Success probability of declaring hypothesis i on outcome i"""
    if povm.outcome_count != len(states):
        raise DimMismatch(len(states), povm.outcome_count)
    return float(sum(q * born_prob(povm.effects[i], s) for i, (q, s) in enumerate(zip(prior, states))))


def helstrom_success(q1: float, rho1: DensityOperator, rho2: DensityOperator) -> float:
    """Optimal one-shot success probability for two hypotheses,
    1/2 (1 + || q1 rho1 - q2 rho2 ||_1)"""
    gamma = q1 * rho1.matrix - (1 - q1) * rho2.matrix
    return 0.5 * (1.0 + float(np.sum(np.abs(eigvalsh(gamma)))))


# Measurement library


@dataclass(frozen=True, eq=False)
class MeasurementLibrary:
    """MeasurementLibrary is the finite action set A_meas. Parameter tags, when
    present, are angles within one period of the family."""

    povms: Tuple[Povm, ...]
    params: Optional[Tuple[float, ...]] = None
    period: Optional[float] = None
    family: str = "custom"
    factory: Optional[Callable[[float], Povm]] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.povms) == 0:
            raise EmptyLibrary()
        dim = self.povms[0].dim
        n_out = self.povms[0].outcome_count
        for p in self.povms:
            if p.dim != dim:
                raise DimMismatch(dim, p.dim)
            if p.outcome_count != n_out:
                raise DimMismatch(n_out, p.outcome_count)
        if self.params is not None:
            if len(self.params) != len(self.povms):
                raise DimMismatch(len(self.povms), len(self.params))
            if not is_strictly_increasing(self.params):
                raise ValueError("library parameters must be strictly increasing")
            if self.period is not None and (self.params[0] < 0 or self.params[-1] >= self.period):
                raise OutOfRange("library parameter", self.params[-1], 0.0, self.period)

    def __len__(self) -> int:
        return len(self.povms)

    @property
    def outcome_count(self) -> int:
        return self.povms[0].outcome_count

    @property
    def dim(self) -> int:
        return self.povms[0].dim

    def param(self, a: int) -> Optional[float]:
        return None if self.params is None else self.params[a]


def parameter_library(
    factory: Callable[[float], Povm], params: Sequence[float], period: float, family: str
) -> MeasurementLibrary:
    ps = tuple(sorted(float(p) for p in params))
    return MeasurementLibrary(tuple(factory(p) for p in ps), ps, period, family, factory)


def uniform_params(count: int, period: float, extra: Sequence[float] = ()) -> Tuple[float, ...]:
    """count uniformly spaced angles on [0, period), merged with extra angles
    (reduced into the period, duplicates within 1e-12 dropped)"""
    if count < 1:
        raise ValueError("library size must be >= 1")
    ps = [k * period / count for k in range(count)]
    for x in extra:
        x = float(np.mod(x, period))
        if all(abs(x - p) > 1e-12 for p in ps):
            ps.append(x)
    return tuple(sorted(ps))


def binary_library(count: int, theta: Optional[float] = None) -> MeasurementLibrary:
    """Uniform phi library on [0, pi); when theta is given, the analytic
    one-step maximizer theta/2 + pi/4 is inserted."""
    extra = () if theta is None else (theta / 2 + pi / 4,)
    return parameter_library(binary_projective_povm, uniform_params(count, BINARY_PERIOD, extra), BINARY_PERIOD, "binary")


def trine_library(count: int) -> MeasurementLibrary:
    return parameter_library(trine_povm_wrapped, uniform_params(count, TRINE_PERIOD), TRINE_PERIOD, "trine")


def unitary_family_library(
    base: Povm, generator: MatrixLike, params: Sequence[float], period: float, family: str = "unitary"
) -> MeasurementLibrary:
    """Library E_o(theta) = U(theta)^H F_o U(theta) with U(theta) = exp(-i theta G)"""
    g = as_matrix(generator)
    if hermitian_residual(g) > EPS_HERM:
        raise NotHermitian(hermitian_residual(g))

    def factory(theta: float) -> Povm:
        return unitary_conjugated_povm(expm(-1j * theta * g), base)

    return parameter_library(factory, params, period, family)


# Likelihood table


@dataclass(frozen=True, eq=False)
class LikelihoodTable:
    """values[i, a, o] = Tr(E_o^(a) rho_i)"""

    values: npt.NDArray[np.float64]

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise DimMismatch(3, v.ndim)
        if np.any(v < 0) or np.any(v > 1):
            raise OutOfRange("likelihood", float(v.min() if np.any(v < 0) else v.max()), 0.0, 1.0)
        residual = float(np.max(np.abs(v.sum(axis=2) - 1.0)))
        if residual > EPS_COMP:
            raise IncompleteSum(residual)
        v.setflags(write=False)

    @property
    def hypotheses(self) -> int:
        return self.values.shape[0]

    @property
    def actions(self) -> int:
        return self.values.shape[1]

    @property
    def outcomes(self) -> int:
        return self.values.shape[2]

    def row(self, i: int, a: int) -> npt.NDArray[np.float64]:
        return self.values[i, a]


def build_likelihood_table(states: Sequence[DensityOperator], lib: MeasurementLibrary) -> LikelihoodTable:
    for s in states:
        if s.dim != lib.dim:
            raise DimMismatch(lib.dim, s.dim)
    values = np.empty((len(states), len(lib), lib.outcome_count))
    for i, rho in enumerate(states):
        for a, povm in enumerate(lib.povms):
            for o, e in enumerate(povm.effects):
                values[i, a, o] = born_prob(e, rho)
    logger.debug("likelihood table %s built for family %s", values.shape, lib.family)
    return LikelihoodTable(values)
