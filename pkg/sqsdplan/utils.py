from typing import Sequence

import numpy as np


def underline(s: str, ch: str = "-") -> str:
    return ch * len(s)


def header(s: str, ch: str = "-") -> str:
    return s + "\n" + underline(s, ch)


def fmt(x: float) -> str:
    """Round-trip-safe text for a double (17 significant digits)."""
    return format(float(x), ".17g")


def circular_distance(x: float, y: float, period: float) -> float:
    d = abs(x - y) % period
    return min(d, period - d)


def circular_gaps(params: Sequence[float], period: float) -> np.ndarray:
    """Gaps between consecutive parameters on a circle of the given period,
    including the wrap-around gap from the last parameter back to the first."""
    p = np.sort(np.mod(np.asarray(params, dtype=float), period))
    if p.size == 0:
        return np.array([period])
    return np.diff(np.append(p, p[0] + period))


def is_strictly_increasing(values: Sequence[float]) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) > 0))
