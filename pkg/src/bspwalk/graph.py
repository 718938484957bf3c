"""Immutable undirected weighted graphs in CSR form, plus ingestion and partitioning."""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, TextIO

import numpy as np

from bspwalk import _kernels

CACHE_MAGIC = "bspwalk-csr"
CACHE_VERSION = 1


class GraphFormatError(ValueError):
    """Raised for malformed edge-list input."""

    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class GraphValidationError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Graph:
    """Undirected graph stored as CSR arrays.

    ``indices[indptr[v]:indptr[v+1]]`` are the neighbours of ``v`` sorted
    ascending, with matching positive ``weights``.  Every edge is stored in
    both directions.  Instances are read-only.
    """

    __slots__ = ("n", "indptr", "indices", "weights", "degrees", "labels", "_static")

    def __init__(self, indptr, indices, weights, labels=None):
        self.indptr = _frozen(np.asarray(indptr, dtype=np.int64))
        self.indices = _frozen(np.asarray(indices, dtype=np.int64))
        self.weights = _frozen(np.asarray(weights, dtype=np.float64))
        self.n = len(self.indptr) - 1
        self.degrees = _frozen(np.diff(self.indptr))
        self.labels = None if labels is None else _frozen(np.asarray(labels, dtype=np.int64))
        self._static = None

    @classmethod
    def from_edges(cls, n: int, src, dst, weights=None, labels=None) -> "Graph":
        """Build from (possibly duplicated, one-directional) edge arrays.

        Self-loops are dropped, each unordered pair keeps the weight of its
        first occurrence, and the result is symmetrised.
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if weights is None:
            w = np.ones(len(src), dtype=np.float64)
        else:
            w = np.asarray(weights, dtype=np.float64)
        if len(src) and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n):
            raise GraphValidationError("edge endpoint outside [0, n)")
        if np.any(w <= 0) or np.any(~np.isfinite(w)):
            raise GraphValidationError("edge weights must be finite and > 0")

        keep = src != dst
        src, dst, w = src[keep], dst[keep], w[keep]
        lo = np.minimum(src, dst)
        hi = np.maximum(src, dst)
        # lexsort is stable, so the first row of each run is the first occurrence
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        first = np.ones(len(lo), dtype=bool)
        first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        lo, hi, w = lo[first], hi[first], w[first]

        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        ws = np.concatenate([w, w])
        order = np.lexsort((cols, rows))
        rows, cols, ws = rows[order], cols[order], ws[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(indptr, cols, ws, labels=labels)

    # -- access -----------------------------------------------------------
    def _check(self, v: int) -> None:
        if not 0 <= v < self.n:
            raise IndexError(f"vertex {v} out of range [0, {self.n})")

    def neighbors(self, v: int) -> list[tuple[int, float]]:
        self._check(v)
        a, b = self.indptr[v], self.indptr[v + 1]
        return list(zip(self.indices[a:b].tolist(), self.weights[a:b].tolist()))

    def adj(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Zero-copy (neighbour ids, weights) views for ``v``."""
        a, b = self.indptr[v], self.indptr[v + 1]
        return self.indices[a:b], self.weights[a:b]

    def degree(self, v: int) -> int:
        self._check(v)
        return int(self.degrees[v])

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return len(self.indices) // 2

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    @property
    def nbytes(self) -> int:
        return self.indptr.nbytes + self.indices.nbytes + self.weights.nbytes

    def static_alias(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-vertex alias tables over edge weights, CSR-aligned (built lazily)."""
        if self._static is None:
            prob, alias = _kernels.build_static_tables(self.indptr, self.weights)
            self._static = (_frozen(prob), _frozen(alias))
        return self._static

    def structurally_equal(self, other: "Graph") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.num_edges}, max_degree={self.max_degree})"


@dataclass(frozen=True)
class PartitionedGraph:
    graph: Graph
    num_workers: int
    owner: np.ndarray = field(repr=False)

    def worker_of(self, v: int) -> int:
        if not 0 <= v < self.graph.n:
            raise IndexError(f"vertex {v} out of range [0, {self.graph.n})")
        return v % self.num_workers

    def members(self, worker: int) -> np.ndarray:
        return np.arange(worker, self.graph.n, self.num_workers, dtype=np.int64)

    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.num_workers)


def partition(graph: Graph, num_workers: int) -> PartitionedGraph:
    """Assign vertex ``v`` to worker ``v mod num_workers``."""
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    owner = _frozen(np.arange(graph.n, dtype=np.int64) % num_workers)
    return PartitionedGraph(graph, int(num_workers), owner)


def _parse_lines(lines: Iterable[str], weighted: bool):
    src, dst, wts = [], [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphFormatError(lineno, line, "expected 'src dst [weight]'")
        try:
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(lineno, line, "vertex labels must be integers") from None
        w = 1.0
        if weighted and len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise GraphFormatError(lineno, line, "bad weight") from None
            if not w > 0 or not np.isfinite(w):
                raise GraphValidationError(f"line {lineno}: weight must be > 0, got {parts[2]}")
        src.append(s)
        dst.append(d)
        wts.append(w)
    return src, dst, wts


def load_edge_list(source: BinaryIO | TextIO | str | os.PathLike, weighted: bool = True) -> Graph:
    """Read a whitespace-separated ``src dst [weight]`` edge list.

    Labels may be arbitrary integers; they are remapped to dense ids in
    ascending label order and kept in ``graph.labels``.  A missing weight
    defaults to 1.0 (as does every weight when ``weighted`` is false).
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return load_edge_list(fh, weighted)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    src, dst, wts = _parse_lines(io.StringIO(data), weighted)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    labels, inverse = np.unique(np.concatenate([src, dst]), return_inverse=True)
    m = len(src)
    return Graph.from_edges(len(labels), inverse[:m], inverse[m:], wts, labels=labels)


def write_edge_list(graph: Graph, path, weighted: bool = False) -> None:
    """Write each undirected edge once (``u < v``) using dense ids."""
    rows = np.repeat(np.arange(graph.n, dtype=np.int64), graph.degrees)
    mask = rows < graph.indices
    with open(path, "w") as fh:
        if weighted:
            for u, v, w in zip(rows[mask].tolist(), graph.indices[mask].tolist(), graph.weights[mask].tolist()):
                fh.write(f"{u} {v} {w!r}\n")
        else:
            fh.write("".join(f"{u} {v}\n" for u, v in zip(rows[mask].tolist(), graph.indices[mask].tolist())))


def write_label_map(graph: Graph, path) -> None:
    labels = graph.labels if graph.labels is not None else np.arange(graph.n)
    with open(path, "w") as fh:
        fh.write("".join(f"{lab} {i}\n" for i, lab in enumerate(labels.tolist())))


def save_cache(graph: Graph, path) -> None:
    """Binary adjacency cache (``.npz`` with a versioned header)."""
    extra = {} if graph.labels is None else {"labels": graph.labels}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.array([CACHE_MAGIC, str(CACHE_VERSION)]),
            indptr=graph.indptr,
            indices=graph.indices,
            weights=graph.weights,
            **extra,
        )


def load_cache(path) -> Graph:
    with np.load(path, allow_pickle=False) as z:
        header = z["header"].tolist()
        if header[0] != CACHE_MAGIC:
            raise GraphFormatError(0, str(header), "not a bspwalk cache file")
        if int(header[1]) != CACHE_VERSION:
            raise GraphFormatError(0, str(header), f"unsupported cache version {header[1]}")
        labels = z["labels"] if "labels" in z.files else None
        return Graph(z["indptr"], z["indices"], z["weights"], labels=labels)


def load_graph(path) -> Graph:
    """Load either a binary cache (``.npz``) or a text edge list."""
    if str(path).endswith(".npz"):
        return load_cache(path)
    return load_edge_list(path)


def estimate_transprob_memory(graph_or_degrees) -> int:
    """Bytes needed to precompute every second-order transition probability.

    Eight bytes per probability and ``d_i ** 2`` probabilities at vertex
    ``i``.  Accepts a :class:`Graph`, an iterable of degrees, or a
    ``{degree: vertex_count}`` histogram (handy for billion-vertex what-ifs).
    Arithmetic is exact Python ``int``.
    """
    if isinstance(graph_or_degrees, dict):
        hist = graph_or_degrees.items()
    else:
        degrees = graph_or_degrees.degrees if isinstance(graph_or_degrees, Graph) else graph_or_degrees
        counts = np.bincount(np.asarray(list(degrees) if not isinstance(degrees, np.ndarray) else degrees,
                                        dtype=np.int64))
        hist = ((d, c) for d, c in enumerate(counts.tolist()) if c)
    return 8 * sum(int(c) * int(d) * int(d) for d, c in hist)


def uniform_transprob_memory(n: int, d: int) -> int:
    """Closed form of :func:`estimate_transprob_memory` for ``n`` vertices of degree ``d``."""
    return 8 * int(n) * int(d) * int(d)
