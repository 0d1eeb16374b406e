"""Belief simplex, Bayesian updates, the barycentric belief grid and its
nearest-neighbour projection"""

import logging
from dataclasses import dataclass, field
from itertools import product
from math import sqrt
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.special import comb  # type: ignore

from sqsdplan.qsd.constants import EPS_COMP, PFLOOR, SNAP_TOL, GRID_CAP
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.errors import DimMismatch, SizeOverflow, ZeroProbabilityOutcome
from sqsdplan.qsd.quantum import LikelihoodTable


logger = logging.getLogger(__name__)

# Upper limit on the number of float entries in one projection block
CHUNK_ELEMS: int = 2_000_000


@dataclass(frozen=True, eq=False)
class Belief:
    """Belief is a point on the probability simplex over the M hypotheses"""

    weights: npt.NDArray[np.float64]

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise DimMismatch("1-D weight vector", w.shape)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError(f"belief weights must be finite and nonnegative, got {w}")
        if abs(w.sum() - 1.0) > EPS_COMP:
            raise ValueError(f"belief weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, M: int) -> "Belief":
        return cls(np.full(M, 1.0 / M))

    @classmethod
    def vertex(cls, i: int, M: int) -> "Belief":
        w = np.zeros(M)
        w[i] = 1.0
        return cls(w)

    @property
    def M(self) -> int:
        return self.weights.size

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.weights))

    def distance(self, other: "Belief") -> float:
        return float(np.max(np.abs(self.weights - other.weights)))

    def __repr__(self) -> str:
        return "Belief(" + ", ".join(f"{x:.6g}" for x in self.weights) + ")"


def stop_val(b: Belief) -> float:
    return float(np.max(b.weights))


def obs_prob(b: Belief, a: int, table: LikelihoodTable) -> npt.NDArray[np.float64]:
    if table.hypotheses != b.M:
        raise DimMismatch(table.hypotheses, b.M)
    return b.weights @ table.values[:, a, :]


def posterior_rows(weights: npt.NDArray[np.float64], likelihoods: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Row-wise Bayes rule for beliefs (n, M) and likelihood vectors (n, M).
    Callers guarantee that every normalizer exceeds PFLOOR."""
    joint = weights * likelihoods
    return joint / joint.sum(axis=1, keepdims=True)


def bayes_update(b: Belief, a: int, o: int, table: LikelihoodTable) -> Belief:
    p = float(obs_prob(b, a, table)[o])
    if p <= PFLOOR:
        raise ZeroProbabilityOutcome(o, p)
    post = posterior_rows(b.weights[None, :], table.values[:, a, o][None, :])[0]
    return Belief(post)


# Barycentric grid


def _compositions(N: int, M: int) -> Iterator[Tuple[int, ...]]:
    """Integer vectors of length M with nonnegative entries summing to N, in
    lexicographic order"""
    if M == 1:
        yield (N,)
        return
    for first in range(N + 1):
        for rest in _compositions(N - first, M - 1):
            yield (first,) + rest


def grid_size(N: int, M: int) -> int:
    return int(comb(N + M - 1, M - 1, exact=True))


@dataclass(frozen=True)
class ProjectionResult:
    grid_id: int
    distance: float


@dataclass(frozen=True, eq=False)
class BeliefGrid:
    """BeliefGrid is the regular barycentric lattice B_N: every point has
    weights k/N with integer k summing to N. Points are sorted lexicographically
    by their integer coordinates."""

    resolution: int
    dim: int
    coords: npt.NDArray[np.int64]
    index: Dict[Tuple[int, ...], int] = field(repr=False)

    def __post_init__(self):
        self.coords.setflags(write=False)
        object.__setattr__(self, "_coords_f", self.coords.astype(float))
        pts = self.coords / float(self.resolution)
        pts.setflags(write=False)
        object.__setattr__(self, "_points", pts)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def points(self) -> npt.NDArray[np.float64]:
        return self._points  # type: ignore[attr-defined]

    def point(self, i: int) -> Belief:
        return Belief(self.points[i])

    def id_of(self, coords: Sequence[int]) -> int:
        return self.index[tuple(int(c) for c in coords)]

    def embedding(self) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Planar embedding of the trine simplex, x = b2 + b3/2, y = sqrt(3)/2 b3"""
        if self.dim != 3:
            raise DimMismatch(3, self.dim)
        return embed(self.points)

    def neighbours(self, i: int) -> Iterator[int]:
        """Lattice points reached by moving one unit of mass between two coordinates"""
        k = self.coords[i]
        for src in range(self.dim):
            if k[src] == 0:
                continue
            for dst in range(self.dim):
                if dst == src:
                    continue
                nk = list(k)
                nk[src] -= 1
                nk[dst] += 1
                yield self.index[tuple(int(c) for c in nk)]

    def project(self, b: Belief, counters: Optional[CostCounters] = None) -> ProjectionResult:
        return project(b, self, counters)

    def project_batch(
        self, weights: npt.NDArray[np.float64], counters: Optional[CostCounters] = None
    ) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
        return project_batch(weights, self, counters)


def embed(weights: npt.NDArray[np.float64]) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    w = np.atleast_2d(weights)
    return w[:, 1] + 0.5 * w[:, 2], (sqrt(3) / 2) * w[:, 2]


def build_grid(N: int, M: int, cap: int = GRID_CAP) -> BeliefGrid:
    if N < 1:
        raise ValueError(f"grid resolution N must be >= 1, got {N}")
    if M < 2:
        raise ValueError(f"number of hypotheses M must be >= 2, got {M}")
    size = grid_size(N, M)
    if size > cap:
        raise SizeOverflow(size, cap)
    if M == 2:
        k = np.arange(N + 1, dtype=np.int64)
        coords = np.column_stack([k, N - k])
    else:
        coords = np.array(list(_compositions(N, M)), dtype=np.int64)
    index = {tuple(int(c) for c in row): i for i, row in enumerate(coords)}
    logger.debug("built grid N=%d M=%d with %d points", N, M, size)
    return BeliefGrid(N, M, coords, index)


def rank(coords: npt.NDArray[np.int64], N: int) -> npt.NDArray[np.int64]:
    """Position of each integer coordinate row in the lexicographic order of
    the lattice, counted with the hockey-stick identity"""
    k = np.atleast_2d(coords).astype(np.int64)
    M = k.shape[1]
    ids = np.zeros(k.shape[0])
    rem = np.full(k.shape[0], N, dtype=np.int64)
    for j in range(M - 1):
        m = M - j - 2
        ids += comb(rem + m + 1, m + 1) - comb(rem - k[:, j] + m + 1, m + 1)
        rem = rem - k[:, j]
    return np.rint(ids).astype(np.int64)


def _scaled(weights: npt.NDArray[np.float64], N: int) -> npt.NDArray[np.float64]:
    x = np.atleast_2d(np.asarray(weights, dtype=float)) * N
    r = np.rint(x)
    return np.where(np.abs(x - r) < SNAP_TOL, r, x)


def _sq_dist(diff: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    # fixed summation order so that both search paths agree bit for bit
    d2 = np.square(diff[..., 0])
    for j in range(1, diff.shape[-1]):
        d2 = d2 + np.square(diff[..., j])
    return d2


def _choose(
    dinf: npt.NDArray[np.float64], diff: npt.NDArray[np.float64], ids: npt.NDArray[np.int64], width: int
) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    """Tie sets per row, ascending grid ids padded with -1 to `width`, and
    the smallest infinity-norm distance. Candidates within SNAP_TOL of the
    smallest infinity-norm distance are narrowed to those within SNAP_TOL of
    the smallest Euclidean distance; the first id is the lexicographically
    smallest integer coordinate."""
    best = dinf.min(axis=1)
    tied = dinf <= (best + SNAP_TOL)[:, None]
    d2 = _sq_dist(diff)
    d2[~tied] = np.inf
    near = d2 <= (d2.min(axis=1) + SNAP_TOL)[:, None]
    big = np.iinfo(np.int64).max
    key = np.where(near, ids, big)
    if key.shape[1] > width:
        key = np.partition(key, width - 1, axis=1)[:, :width]
    key = np.sort(key, axis=1)
    if key.shape[1] < width:
        key = np.pad(key, ((0, 0), (0, width - key.shape[1])), constant_values=big)
    key[key == big] = -1
    return key, best


def _scan_block(
    x: npt.NDArray[np.float64], K: npt.NDArray[np.float64], width: int
) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    diff = x[:, None, :] - K[None, :, :]
    dinf = np.abs(diff).max(axis=2)
    ids = np.broadcast_to(np.arange(K.shape[0], dtype=np.int64), dinf.shape)
    return _choose(dinf, diff, ids, width)


def _offsets(M: int) -> npt.NDArray[np.float64]:
    return np.array(list(product((0.0, 1.0), repeat=M)))


def _local_block(x: npt.NDArray[np.float64], N: int) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    # every lattice point closer than 1 in infinity-norm rounds each
    # coordinate down or up, and the covering radius is below 1
    M = x.shape[1]
    cand = np.floor(x)[:, None, :] + _offsets(M)[None, :, :]
    ok = (cand.sum(axis=2) == N) & np.all((cand >= 0) & (cand <= N), axis=2)
    diff = x[:, None, :] - cand
    dinf = np.where(ok, np.abs(diff).max(axis=2), np.inf)
    flat = np.where(ok[..., None], cand, 0).reshape(-1, M).astype(np.int64)
    ids = rank(flat, N).reshape(ok.shape)
    return _choose(dinf, diff, ids, 2**M)


def project_ties(
    weights: npt.NDArray[np.float64],
    grid: BeliefGrid,
    counters: Optional[CostCounters] = None,
    method: str = "scan",
) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    """Nearest grid points of each row of weights, with exact ties kept.
    Returns (n, 2^M) ids, ascending and padded with -1, and the
    infinity-norm distances. Tied points always lie in the 2^M box around
    N*b, so both methods return the same sets.

    method "scan" compares against every grid point (the linear scan whose
    cost the planner analysis assumes); "local" examines only the 2^M lattice
    points around N*b."""
    x = _scaled(weights, grid.resolution)
    n = x.shape[0]
    if x.shape[1] != grid.dim:
        raise DimMismatch(grid.dim, x.shape[1])
    width = 2**grid.dim
    ties = np.empty((n, width), dtype=np.int64)
    dist = np.empty(n)
    if method == "scan":
        K = grid._coords_f  # type: ignore[attr-defined]
        rows = max(1, CHUNK_ELEMS // (grid.size * grid.dim))
        candidates = grid.size
    elif method == "local":
        rows = max(1, CHUNK_ELEMS // (width * grid.dim))
        candidates = width
    else:
        raise ValueError(f"unknown projection method {method!r}")
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        if method == "scan":
            ties[start:stop], dist[start:stop] = _scan_block(x[start:stop], K, width)
        else:
            ties[start:stop], dist[start:stop] = _local_block(x[start:stop], grid.resolution)
    if counters is not None:
        counters.add(projections=n, proj_candidates=n * candidates, proj_comparisons=n * candidates * grid.dim)
    return ties, dist / grid.resolution


def project_batch(
    weights: npt.NDArray[np.float64],
    grid: BeliefGrid,
    counters: Optional[CostCounters] = None,
    method: str = "scan",
) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    """Project each row of weights onto the grid. Returns point ids and
    infinity-norm distances; ties go to the smallest id."""
    ties, dist = project_ties(weights, grid, counters, method)
    return ties[:, 0], dist


def project(b: Belief, grid: BeliefGrid, counters: Optional[CostCounters] = None) -> ProjectionResult:
    if b.M != grid.dim:
        raise DimMismatch(grid.dim, b.M)
    ids, dist = project_batch(b.weights[None, :], grid, counters)
    return ProjectionResult(int(ids[0]), float(dist[0]))


def sample_delta_B(grid: BeliefGrid, samples: int, seed: int = 0) -> float:
    """Largest projection distance over uniform (Dirichlet(1,...,1)) samples"""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.dirichlet(np.ones(grid.dim), size=samples)
    _, dist = project_batch(pts, grid, method="local")
    return float(dist.max())


def estimate_delta_B(grid: BeliefGrid, samples: int, seed: int = 0) -> float:
    """Projection radius delta_B. Exact 1/(2N) for two hypotheses, otherwise a
    Monte Carlo estimate, which is a lower bound on the true radius."""
    estimate = sample_delta_B(grid, samples, seed)
    if grid.dim == 2:
        exact = 1.0 / (2 * grid.resolution)
        logger.info("delta_B exact %.6g (sampled %.6g over %d points)", exact, estimate, samples)
        return exact
    logger.info("delta_B sampled %.6g over %d points (lower bound)", estimate, samples)
    return estimate
