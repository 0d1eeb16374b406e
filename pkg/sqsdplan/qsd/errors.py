"""Errors raised by the qsd subpackage. All derive from ValueError so that
callers treating invalid input generically keep working."""

from typing import Optional


class SQSDError(ValueError):
    pass


class NotHermitian(SQSDError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"matrix is not Hermitian: max |M - M^H| = {residual:.3e}")


class NotPsd(SQSDError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"matrix is not positive semidefinite: smallest eigenvalue = {min_eigenvalue:.3e}")


class BadTrace(SQSDError):
    def __init__(self, trace: float):
        self.trace = trace
        super().__init__(f"trace must be 1, got {trace:.12g}")


class EffectNotPsd(SQSDError):
    def __init__(self, outcome: int, min_eigenvalue: float):
        self.outcome = outcome
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"effect {outcome} is not positive semidefinite: smallest eigenvalue = {min_eigenvalue:.3e}")


class IncompleteSum(SQSDError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"effects do not sum to identity: ||sum E_o - I|| = {residual:.3e}")


class DimMismatch(SQSDError):
    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")


class NotUnitary(SQSDError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"matrix is not unitary: ||U^H U - I|| = {residual:.3e}")


class OutOfRange(SQSDError):
    def __init__(self, name: str, value: float, lo: float, hi: float):
        self.name = name
        self.value = value
        super().__init__(f"{name} = {value!r} outside [{lo}, {hi})")


class ZeroProbabilityOutcome(SQSDError):
    def __init__(self, outcome: int, probability: float):
        self.outcome = outcome
        self.probability = probability
        super().__init__(f"outcome {outcome} has probability {probability:.3e}; posterior is undefined")


class SizeOverflow(SQSDError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"grid of {size} points exceeds the cap of {cap}")


class EmptyLibrary(SQSDError):
    def __init__(self):
        super().__init__("measurement library is empty")


class MissingParams(SQSDError):
    def __init__(self):
        super().__init__("measurement library has no parameter tags")


class AllDegenerate(SQSDError):
    def __init__(self, floor: float):
        self.floor = floor
        super().__init__(f"every outcome probability is below the floor {floor:.1e}")


class EtaNonPositive(SQSDError):
    def __init__(self, eta: float):
        self.eta = eta
        super().__init__(f"nondegeneracy floor eta must be > 0, got {eta!r}")


class CountersEmpty(SQSDError):
    def __init__(self):
        super().__init__("cost counters are empty; run the planner with counters first")


class ConsistencyError(SQSDError):
    def __init__(self, routed: float, simplified: float):
        self.routed = routed
        self.simplified = simplified
        super().__init__(f"routed J1 = {routed!r} disagrees with simplified J1 = {simplified!r}")


class ConfigError(SQSDError):
    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        prefix = ""
        if source is not None:
            prefix = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(prefix + message)


class TableMismatch(SQSDError):
    def __init__(self, expected: str, got: str):
        self.expected = expected
        self.got = got
        super().__init__(f"tables were planned for config {got}, current config is {expected}")
