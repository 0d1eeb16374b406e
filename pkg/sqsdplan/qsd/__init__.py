"""qsd is a subpackage for projected dynamic programming on the belief simplex
of a quantum state discrimination problem"""

from sqsdplan.qsd.constants import (  # noqa: F401
    EPS_HERM,
    EPS_TR,
    EPS_COMP,
    EPS_PSD,
    EPS_UNIT,
    PFLOOR,
    PFLOOR_ETA,
)
