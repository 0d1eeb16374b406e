import os
from math import pi


# Matrix tolerances (double precision, dims <= 4)
EPS_HERM: float = 1e-10
EPS_TR: float = 1e-10
EPS_COMP: float = 1e-10
EPS_PSD: float = 1e-9
EPS_UNIT: float = 1e-10

# Outcome floors
PFLOOR: float = 1e-12  # planning sums and direct Bayes updates
PFLOOR_ETA: float = 1e-6  # nondegeneracy estimate for the error budget

# Scaled lattice coordinates closer than this to an integer are snapped
SNAP_TOL: float = 1e-9

# One-step cancellation check (routed vs simplified J1)
EPS_ONE_STEP: float = 1e-12

GRID_CAP: int = int(os.environ.get("SQSDPLAN_GRID_CAP", "2000000"))

# Parameter periods of the built-in families
BINARY_PERIOD: float = pi
TRINE_PERIOD: float = 2 * pi / 3
TRINE_PHASES: tuple = (0.0, 2 * pi / 3, 4 * pi / 3)

V_SUP: float = 1.0
