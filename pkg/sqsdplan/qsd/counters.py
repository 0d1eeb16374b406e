"""Instrumented operation counts for offline planning and online execution"""

import threading
from dataclasses import dataclass, field, fields
from typing import Dict

from sqsdplan.utils import header, underline


@dataclass
class CostCounters:
    """Atomic operation counts.

    Offline: stop, obs, posterior, projections, proj_candidates, proj_comparisons,
    lookups, aggregations, inits, actmax, skipped, memo_hits. Online: pol_lookups,
    obs_recv, updates, term. Increments are guarded by a lock so that worker
    threads may share one instance; totals do not depend on the schedule."""

    mode: str = "raw"
    stop: int = 0
    obs: int = 0
    posterior: int = 0
    projections: int = 0
    proj_candidates: int = 0
    proj_comparisons: int = 0
    lookups: int = 0
    aggregations: int = 0
    inits: int = 0
    actmax: int = 0
    skipped: int = 0
    memo_hits: int = 0
    pol_lookups: int = 0
    obs_recv: int = 0
    updates: int = 0
    term: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, **counts: int) -> None:
        with self._lock:
            for k, v in counts.items():
                setattr(self, k, getattr(self, k) + int(v))

    def merge(self, other: "CostCounters") -> None:
        self.add(**other.counts())

    def counts(self) -> Dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("mode", "_lock")}

    def total(self) -> int:
        return sum(self.counts().values())

    def asdict(self) -> Dict:
        d: Dict = {"mode": self.mode}
        d.update(self.counts())
        return d

    def report(self) -> str:  # pragma: no cover
        hdr = f"{'Counter':>18} {'Count':>16}"
        s = f"{header(f'COST COUNTERS ({self.mode})', '=')}\n{hdr}\n{underline(hdr)}\n"
        for k, v in self.counts().items():
            s += f"{k:>18} {v:16d}\n"
        return s
