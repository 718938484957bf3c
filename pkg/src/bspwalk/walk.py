"""Second-order (node2vec) walk model: search bias, transition weights,
alias sampling, approximation bounds and a precomputing reference walker."""
from __future__ import annotations

import csv
import enum
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from bspwalk import _kernels
from bspwalk.graph import Graph, estimate_transprob_memory


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    l: int = 80
    r: int = 10
    k: int = 1
    popular_threshold: int = 1000
    epsilon: float = 1e-3
    seed: int = 0
    cache_bytes: int | None = None

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be > 0")
        if self.l < 1 or self.r < 1 or self.k < 1:
            raise ValueError("l, r and k must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


class DistCase(enum.Enum):
    IS_PREV = 0
    COMMON_NEIGHBOR = 1
    OTHER = 2


def alpha(p: float, q: float, case: DistCase) -> float:
    if case is DistCase.IS_PREV:
        return 1.0 / p
    if case is DistCase.COMMON_NEIGHBOR:
        return 1.0
    return 1.0 / q


def transition_weights(v_neighbors: Sequence[tuple[int, float]], u: int, u_neighbor_set, p: float,
                       q: float) -> list[float]:
    """Unnormalised weights ``w_vx * alpha`` for each neighbour ``x`` of the
    current vertex, in the order given, when the walk arrived from ``u``."""
    if not v_neighbors:
        raise ValueError("current vertex has no neighbours")
    out = []
    for x, w in v_neighbors:
        if x == u:
            case = DistCase.IS_PREV
        elif x in u_neighbor_set:
            case = DistCase.COMMON_NEIGHBOR
        else:
            case = DistCase.OTHER
        out.append(w * alpha(p, q, case))
    return out


# -- alias sampling ----------------------------------------------------------

@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    def __len__(self):
        return len(self.prob)

    def probabilities(self) -> np.ndarray:
        """Exact per-index sampling probability implied by the table."""
        n = len(self.prob)
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / n

    def draw(self, u1: float, u2: float) -> int:
        return int(_kernels.alias_draw(self.prob, self.alias, u1, u2))


def build_alias(weights) -> AliasTable:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError("need at least one weight")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    prob, alias = _kernels.build_alias(w)
    return AliasTable(prob, alias)


def sample(table: AliasTable, rng: np.random.Generator) -> int:
    u1, u2 = rng.random(2)
    return table.draw(u1, u2)


def sample_many(table: AliasTable, rng: np.random.Generator, size: int) -> np.ndarray:
    n = len(table.prob)
    slots = np.minimum((rng.random(size) * n).astype(np.int64), n - 1)
    keep = rng.random(size) < table.prob[slots]
    return np.where(keep, slots, table.alias[slots])


# -- approximation bounds ------------------------------------------------------

@dataclass(frozen=True)
class ApproxBounds:
    lower: float
    upper: float
    d_u: int
    d_v: int
    w_min: float
    w_max: float

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def approx_bounds(d_u: int, d_v: int, p: float, q: float, w_min: float, w_max: float) -> ApproxBounds:
    """Bounds on the normalised probability of moving from ``v`` to any
    neighbour other than the previous vertex ``u``.

    ``u`` and ``v`` may share between 0 and ``d_u`` neighbours (the upper
    end is one looser than reality, which keeps the bounds valid).  Every
    non-return neighbour gets bias 1 or ``1/q``, the return edge ``1/p``;
    the normaliser is linear in the number of shared neighbours so its
    extremes sit at the ends of that range.  For ``1/p <= 1 <= 1/q`` this
    reduces to::

        lower = w_min / ((1/p + (d_v - 1)/q) * w_max)
        upper = (w_max/q) / ((1/p + d_u + (d_v - d_u - 1)/q) * w_min)
    """
    if d_u < 1 or d_v <= d_u:
        raise ValueError(f"need 1 <= d_u < d_v, got d_u={d_u}, d_v={d_v}")
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be > 0")
    if not (0 < w_min <= w_max):
        raise ValueError("need 0 < w_min <= w_max")
    inv_p, inv_q = 1.0 / p, 1.0 / q
    a_min, a_max = min(1.0, inv_q), max(1.0, inv_q)
    none_shared = inv_p + (d_v - 1) * inv_q
    all_shared = inv_p + d_u + (d_v - d_u - 1) * inv_q
    denom_lo, denom_hi = min(none_shared, all_shared), max(none_shared, all_shared)
    lower = (w_min * a_min) / (denom_hi * w_max)
    upper = min(1.0, (w_max * a_max) / (denom_lo * w_min))
    return ApproxBounds(lower, upper, d_u, d_v, w_min, w_max)


# -- keyed randomness ----------------------------------------------------------

class WalkRandom:
    """Uniform pairs keyed by ``(seed, pass, step, start vertex)``.

    Each ``(seed, pass, step)`` selects a Philox key; the pair for a walk is
    row ``start`` of that stream, so it does not depend on which vertex does
    the sampling, on superstep timing, or on how starts are split into rounds.
    """

    def __init__(self, seed: int, pass_index: int, n: int, keep: int = 8):
        self.seed = int(seed)
        self.pass_index = int(pass_index)
        self.n = int(n)
        self._keep = keep
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def uniforms(self, step: int) -> np.ndarray:
        u = self._cache.get(step)
        if u is None:
            key = np.random.SeedSequence([self.seed, self.pass_index, step]).generate_state(2, np.uint64)
            gen = np.random.Generator(np.random.Philox(key=key))
            u = gen.random((self.n, 2))
            self._cache[step] = u
            if len(self._cache) > self._keep:
                self._cache.popitem(last=False)
        return u

    def pair(self, step: int, start: int) -> tuple[float, float]:
        row = self.uniforms(step)[start]
        return float(row[0]), float(row[1])


# -- walks ------------------------------------------------------------------------

def new_walk_block(starts: np.ndarray, l: int) -> np.ndarray:
    """``(len(starts), l + 1)`` array: start id then ``l`` steps, ``-1`` = unset."""
    block = np.full((len(starts), l + 1), -1, dtype=np.int64)
    block[:, 0] = starts
    return block


class OracleCapacityError(MemoryError):
    pass


def oracle_walks(graph: Graph, config: WalkConfig, cap_bytes: int = 1 << 30,
                 starts: np.ndarray | None = None) -> np.ndarray:
    """Walks from precomputed per-edge alias tables (the classic approach).

    Uses the same keyed randomness as the distributed variants, so on any
    graph small enough to precompute it reproduces their output.
    """
    need = estimate_transprob_memory(graph)
    if need > cap_bytes:
        raise OracleCapacityError(
            f"precomputing transition probabilities needs {need} bytes (8 * sum d^2), cap is {cap_bytes}")
    indptr, indices, weights = graph.indptr, graph.indices, graph.weights
    inv_p, inv_q = 1.0 / config.p, 1.0 / config.q
    tables: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for u in range(graph.n):
        nbrs_u = indices[indptr[u]:indptr[u + 1]]
        for v in nbrs_u.tolist():
            a, b = indptr[v], indptr[v + 1]
            pi = _kernels.second_order_weights(indices[a:b], weights[a:b], u, nbrs_u, inv_p, inv_q)
            tables[(u, v)] = _kernels.build_alias(pi)
    sprob, salias = graph.static_alias()

    if starts is None:
        starts = np.arange(graph.n, dtype=np.int64)
    blocks = []
    for pass_index in range(config.r):
        rnd = WalkRandom(config.seed, pass_index, graph.n)
        block = new_walk_block(starts, config.l)
        for row, start in enumerate(starts.tolist()):
            if graph.degrees[start] == 0:
                continue
            u1, u2 = rnd.pair(0, start)
            prev, cur = start, int(_kernels.static_draw(indptr, indices, sprob, salias, start, u1, u2))
            block[row, 1] = cur
            for step in range(1, config.l):
                prob, al = tables[(prev, cur)]
                u1, u2 = rnd.pair(step, start)
                nxt = int(indices[indptr[cur] + _kernels.alias_draw(prob, al, u1, u2)])
                block[row, step + 1] = nxt
                prev, cur = cur, nxt
        blocks.append(block)
    return np.concatenate(blocks) if blocks else np.zeros((0, config.l + 1), dtype=np.int64)


def exact_next_distribution(graph: Graph, u: int, v: int, p: float, q: float) -> dict[int, float]:
    """Normalised next-step probabilities at ``v`` having arrived from ``u``."""
    nbrs = graph.neighbors(v)
    pi = transition_weights(nbrs, u, set(graph.adj(u)[0].tolist()), p, q)
    total = math.fsum(pi)
    return {x: w / total for (x, _), w in zip(nbrs, pi)}


# -- walk files and statistics -----------------------------------------------------

def walk_rows(walks) -> Iterable[list[int]]:
    for row in walks:
        row = np.asarray(row)
        yield row[row >= 0].tolist()


def write_walks(walks, path) -> None:
    """One walk per line, space-separated dense ids, start vertex first."""
    with open(path, "w") as fh:
        for ids in walk_rows(walks):
            fh.write(" ".join(map(str, ids)))
            fh.write("\n")


def read_walks(path) -> list[list[int]]:
    with open(path) as fh:
        return [[int(t) for t in line.split()] for line in fh if line.strip()]


@dataclass(frozen=True)
class DegreeBucket:
    upper: int
    vertices: int
    mean_frequency: float


def visit_counts(walks, n: int) -> np.ndarray:
    counts = np.zeros(n, dtype=np.int64)
    if isinstance(walks, np.ndarray):
        flat = walks[walks >= 0]
        if len(flat) and flat.max() >= n:
            raise IndexError(f"walk mentions vertex {int(flat.max())} but graph has {n}")
        return np.bincount(flat, minlength=n).astype(np.int64)
    for ids in walks:
        for x in ids:
            if not 0 <= x < n:
                raise IndexError(f"walk mentions vertex {x} but graph has {n}")
            counts[x] += 1
    return counts


def degree_frequency_histogram(walks, graph: Graph, bucket_width: int = 200) -> list[DegreeBucket]:
    """Mean number of walk appearances per vertex, by equi-width degree bucket.

    A bucket labelled ``B`` holds degrees in ``(B - width, B]``; empty
    buckets are omitted, and no walks at all gives no buckets.
    """
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    if len(walks) == 0:
        return []
    counts = visit_counts(walks, graph.n)
    uppers = -(-graph.degrees // bucket_width) * bucket_width
    out = []
    for b in np.unique(uppers).tolist():
        mask = uppers == b
        out.append(DegreeBucket(int(b), int(mask.sum()), float(counts[mask].mean())))
    return out


def write_histogram_csv(buckets: Sequence[DegreeBucket], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket_upper", "mean_frequency", "vertices"])
        for b in buckets:
            w.writerow([b.upper, repr(b.mean_frequency), b.vertices])
