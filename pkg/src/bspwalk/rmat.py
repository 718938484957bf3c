"""Recursive-matrix (RMAT) synthetic graphs: ER-K, WeC-K and Skew-S workloads."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass

import numpy as np

from bspwalk.graph import Graph, write_edge_list

MAX_K = 34
SHARD_SIZE = 1 << 20

# average degree (counting both directions of an undirected edge)
_AVG_DEGREE = {"er": 10, "wec": 100, "skew": 100}
SKEW_DEFAULT_K = 22


class RmatCapacityError(ValueError):
    pass


@dataclass(frozen=True)
class RmatParams:
    K: int
    target_edges: int
    a: float
    b: float
    c: float
    d: float
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        probs = (self.a, self.b, self.c, self.d)
        if any(not 0.0 <= x <= 1.0 for x in probs):
            raise ValueError(f"quadrant probabilities must lie in [0, 1]: {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"quadrant probabilities must sum to 1, got {sum(probs)!r}")
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.target_edges < 0:
            raise ValueError("target_edges must be >= 0")

    @property
    def n(self) -> int:
        return 1 << self.K


def preset(name: str, size_param: float | None = None, K: int | None = None, seed: int = 0) -> RmatParams:
    """Parameters for the named workload.

    ``ER`` and ``WeC`` take ``K`` (log2 vertex count) as ``size_param``;
    ``Skew`` takes the skew factor ``S`` and uses ``K`` (default 22).  A
    combined form such as ``"ER-20"`` or ``"Skew-1.78"`` is also accepted.
    """
    m = re.fullmatch(r"([A-Za-z]+)-([0-9.]+)", name)
    if m and size_param is None:
        name, size_param = m.group(1), float(m.group(2))
    kind = name.lower()
    if kind not in _AVG_DEGREE:
        raise ValueError(f"unknown preset {name!r} (expected ER, WeC or Skew)")
    if size_param is None:
        raise ValueError(f"preset {name!r} needs a size parameter")

    if kind == "skew":
        S = float(size_param)
        if S < 1:
            raise ValueError("Skew factor S must be >= 1")
        K = SKEW_DEFAULT_K if K is None else int(K)
        a = 0.5 / (1.0 + S)
        abcd = (a, 0.25, 0.25, S * a)
        label = f"Skew-{S:g}"
    else:
        if K is None:
            if float(size_param) != int(size_param):
                raise ValueError("K must be an integer")
            K = int(size_param)
        abcd = (0.25, 0.25, 0.25, 0.25) if kind == "er" else (0.18, 0.25, 0.25, 0.32)
        label = f"{'ER' if kind == 'er' else 'WeC'}-{K}"
    if not 0 <= K <= MAX_K:
        raise RmatCapacityError(f"K={K} outside supported range [0, {MAX_K}]")
    target = (_AVG_DEGREE[kind] << K) // 2
    return RmatParams(K, target, *abcd, seed=seed, name=label)


def _shard_placements(params: RmatParams, shard: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([params.seed, shard])
    src = np.zeros(count, dtype=np.int64)
    dst = np.zeros(count, dtype=np.int64)
    t1 = params.a
    t2 = params.a + params.b
    t3 = params.a + params.b + params.c
    for _ in range(params.K):
        u = rng.random(count)
        quad = (u >= t1).astype(np.int64) + (u >= t2) + (u >= t3)
        src = (src << 1) | (quad >> 1)
        dst = (dst << 1) | (quad & 1)
    return src, dst


def iter_placements(params: RmatParams):
    """Yield ``(src, dst)`` chunks; chunk ``i`` uses an RNG seeded by ``(seed, i)``."""
    if params.K > MAX_K:
        raise RmatCapacityError(f"K={params.K} exceeds {MAX_K}")
    done = 0
    shard = 0
    while done < params.target_edges:
        count = min(SHARD_SIZE, params.target_edges - done)
        yield _shard_placements(params, shard, count)
        done += count
        shard += 1


def generate(params: RmatParams) -> Graph:
    """Draw ``target_edges`` placements by recursive quadrant descent.

    Self-loops and duplicate pairs are removed after symmetrisation, so the
    final undirected edge count is at most ``target_edges``.  All weights are
    1.0.
    """
    if params.K > MAX_K:
        raise RmatCapacityError(f"K={params.K} exceeds {MAX_K}")
    chunks = list(iter_placements(params))
    if chunks:
        src = np.concatenate([c[0] for c in chunks])
        dst = np.concatenate([c[1] for c in chunks])
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    return Graph.from_edges(params.n, src, dst)


def metadata(params: RmatParams, graph: Graph) -> dict:
    return {
        "preset": params.name,
        "params": asdict(params),
        "vertices": graph.n,
        "edges": graph.num_edges,
        "directed_entries": int(len(graph.indices)),
        "placements": params.target_edges,
        "max_degree": graph.max_degree,
        "avg_degree": float(graph.degrees.mean()) if graph.n else 0.0,
    }


def write_dataset(params: RmatParams, graph: Graph, out_path) -> dict:
    """Write the edge list to ``out_path`` and a ``.meta.json`` sidecar next to it."""
    write_edge_list(graph, out_path)
    meta = metadata(params, graph)
    with open(f"{out_path}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return meta
