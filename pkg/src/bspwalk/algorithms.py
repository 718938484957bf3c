"""Fast-Node2Vec vertex programs and the multi-round walk driver.

Every walk keeps its recorded steps at its starting vertex.  A walk that
moves ``u -> v`` ships ``u``'s neighbour ids to ``v`` (a NEIG message) so
that ``v`` can tell common neighbours apart when it samples the next step,
and each sampled step is reported back to the start vertex (a STEP
message).  The variants differ only in how the neighbour list reaches
``v``:

* ``base``   - always a full NEIG message.
* ``local``  - co-located vertices read each other's adjacency directly.
* ``switch`` - a popular vertex moving to an unpopular one asks the latter
  for *its* neighbours and samples on its behalf (one extra superstep).
* ``cache``  - a popular vertex sends its list to each remote worker once;
  later sends carry a sentinel and the receiver reads its worker cache.
* ``approx`` - ``cache`` plus first-order sampling at popular vertices
  whenever the second-order correction is provably below ``epsilon``.

All randomness is keyed by (seed, pass, step, start), so every exact
variant, and any number of rounds, yields the same walks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from bspwalk import _kernels
from bspwalk.engine import Engine, Message, MsgKind, SuperstepMetrics, summarize
from bspwalk.graph import Graph, PartitionedGraph, partition
from bspwalk.walk import WalkConfig, WalkRandom, approx_bounds, new_walk_block

STEP = int(MsgKind.STEP)
NEIG = int(MsgKind.NEIG)
NEIG_CACHED = int(MsgKind.NEIG_CACHED)
REQ = int(MsgKind.REQ)
HOP = int(MsgKind.HOP)

_walk_step = _kernels.walk_step
_walk_step_hashed = _kernels.walk_step_hashed
_walk_step_static = _kernels.walk_step_static
_build_hash = _kernels.build_hash


class ProtocolError(RuntimeError):
    """A message arrived that the walk protocol cannot explain."""


class _WalkValues:
    """Row view so that ``values[v]`` is the step array of start vertex ``v``."""

    def __init__(self, block: np.ndarray, lo: int):
        self.block = block
        self.lo = lo
        self.nbytes = block.nbytes

    def __getitem__(self, v):
        return self.block[v - self.lo, 1:]

    def __setitem__(self, v, steps):
        self.block[v - self.lo, 1:] = steps


class FNBase:
    """The plain algorithm: full NEIG messages for every move."""

    name = "base"

    def __init__(self, graph: Graph, config: WalkConfig, num_workers: int):
        self.graph = graph
        self.config = config
        self.W = num_workers
        self.l = config.l
        self.inv_p = 1.0 / config.p
        self.inv_q = 1.0 / config.q
        self.T = config.popular_threshold
        self.indptr = graph.indptr
        self.indices = graph.indices
        self.weights = graph.weights
        self.deg = graph.degrees.tolist()
        self.sprob, self.salias = graph.static_alias()
        # per-vertex views into the adjacency, reused as NEIG payloads
        self._nbrs = np.split(graph.indices, graph.indptr[1:-1]) if graph.n else []
        self.rnd: WalkRandom | None = None
        self.block: np.ndarray | None = None
        self.lo = 0
        self.hi = 0

    def begin(self, rnd: WalkRandom, block: np.ndarray, lo: int, hi: int) -> None:
        self.rnd, self.block, self.lo, self.hi = rnd, block, lo, hi

    def adj(self, v):
        a, b = self.indptr[v], self.indptr[v + 1]
        return self.indices[a:b], self.weights[a:b]

    def nbrs(self, v):
        return self._nbrs[v]

    # -- protocol --------------------------------------------------------------
    def compute(self, ctx) -> None:
        s = ctx.superstep
        v = ctx.vid
        if s == 0:
            self._first_step(ctx, v)
            ctx.halted = True
            return
        groups = None
        for msg in ctx.messages:
            if msg.kind == STEP:
                self.block[v - self.lo, s] = msg.value
            else:
                if groups is None:
                    groups = {}
                g = groups.get(msg.start)
                if g is None:
                    groups[msg.start] = [msg]
                else:
                    g.append(msg)
        if groups is not None:
            if s >= self.l:
                raise ProtocolError(f"neighbour message at vertex {v} after the last step")
            for start, msgs in groups.items():
                if len(msgs) != 1:
                    raise ProtocolError(f"{len(msgs)} neighbour messages for walk {start} at vertex {v}")
                self._advance(ctx, v, start, msgs[0], s)
        ctx.halted = True

    def _first_step(self, ctx, v) -> None:
        if not self.lo <= v < self.hi or self.deg[v] == 0:
            return
        x = _walk_step_static(self.indptr, self.indices, self.sprob, self.salias, v,
                              self.rnd.uniforms(0), v)
        self.block[v - self.lo, 1] = x
        if self.l > 1:
            self._forward(ctx, v, x, v, 1)

    def _advance(self, ctx, v, start, msg, s) -> None:
        prev, prev_nbrs, table = self._resolve(ctx, msg)
        x = self._choose(ctx, v, prev, prev_nbrs, table, start, s)
        ctx.send(start, Message(STEP, start, x))
        if s + 1 < self.l:
            self._forward(ctx, v, x, start, s + 1)

    def _resolve(self, ctx, msg):
        """``(prev, prev's neighbour ids, membership table or None)``."""
        if msg.kind == NEIG:
            return msg.src, msg.value, None
        raise ProtocolError(f"unexpected {MsgKind(msg.kind).name} message for walk {msg.start}")

    def _choose(self, ctx, v, prev, prev_nbrs, table, start, step) -> int:
        if table is None:
            return _walk_step(self.indptr, self.indices, self.weights, v, prev, prev_nbrs,
                              self.inv_p, self.inv_q, self.rnd.uniforms(step), start)
        return _walk_step_hashed(self.indptr, self.indices, self.weights, v, prev, table,
                                 self.inv_p, self.inv_q, self.rnd.uniforms(step), start)

    def _forward(self, ctx, v, x, start, next_step) -> None:
        ctx.send(x, Message(NEIG, start, self.nbrs(v)))


class FNLocal(FNBase):
    """Skip neighbour lists between co-located vertices."""

    name = "local"

    def _forward(self, ctx, v, x, start, next_step) -> None:
        if x % self.W == v % self.W:
            ctx.send(x, Message(HOP, start))
        else:
            ctx.send(x, Message(NEIG, start, self.nbrs(v)))

    def _resolve(self, ctx, msg):
        if msg.kind == HOP:
            nb = ctx.read_local_neighbors(msg.src)
            if nb is None:
                raise ProtocolError(f"hop from non-local vertex {msg.src}")
            return msg.src, nb, None
        return super()._resolve(ctx, msg)


class FNCache(FNBase):
    """Send each popular vertex's list to a remote worker at most once."""

    name = "cache"

    def __init__(self, graph, config, num_workers):
        super().__init__(graph, config, num_workers)
        self.cacheable = self._admissible(graph, config)
        self._cacheable = frozenset(np.flatnonzero(self.cacheable).tolist())

    @staticmethod
    def _admissible(graph: Graph, config: WalkConfig) -> np.ndarray:
        popular = graph.degrees >= config.popular_threshold
        if config.cache_bytes is None:
            return popular
        # admit the largest lists first until a worker's cache budget is spent
        cand = np.flatnonzero(popular)
        cand = cand[np.argsort(-graph.degrees[cand], kind="stable")]
        fits = np.cumsum(8 * graph.degrees[cand]) <= config.cache_bytes
        out = np.zeros(graph.n, dtype=bool)
        out[cand[fits]] = True
        return out

    def _forward(self, ctx, v, x, start, next_step) -> None:
        wx = x % self.W
        if v in self._cacheable and wx != v % self.W:
            sent = ctx.worker_state.setdefault("worker_sent", {})
            seen = sent.get(v)
            if seen is None:
                seen = sent[v] = set()
            if wx in seen:
                ctx.send(x, Message(NEIG_CACHED, start, -1))
                return
            seen.add(wx)
        ctx.send(x, Message(NEIG, start, self.nbrs(v)))

    def on_deliver(self, ctx, inbox) -> None:
        """Populate this worker's cache before any compute runs.

        Entries keep the received ids together with their membership table,
        so later walks from the same vertex skip rebuilding it.
        """
        if not self._cacheable:
            return
        cache = ctx.worker_state.setdefault("neighbor_cache", {})
        cacheable = self._cacheable
        W, me = self.W, ctx.worker
        for msgs in inbox.values():
            for msg in msgs:
                src = msg.src
                if src in cacheable and msg.kind == NEIG and src % W != me and src not in cache:
                    cache[src] = (msg.value, _build_hash(msg.value))

    def _resolve(self, ctx, msg):
        kind = msg.kind
        src = msg.src
        if kind == NEIG:
            if src in self._cacheable:
                entry = ctx.worker_state.get("neighbor_cache", {}).get(src)
                if entry is not None:
                    return src, entry[0], entry[1]
            return src, msg.value, None
        if kind == NEIG_CACHED:
            entry = ctx.worker_state.get("neighbor_cache", {}).get(src)
            if entry is None:
                raise ProtocolError(f"worker {ctx.worker} has no cached neighbours for {src}")
            return src, entry[0], entry[1]
        return super()._resolve(ctx, msg)


class FNApprox(FNCache):
    """FN-Cache plus first-order sampling at popular vertices when safe."""

    name = "approx"

    def __init__(self, graph, config, num_workers):
        super().__init__(graph, config, num_workers)
        self.epsilon = config.epsilon
        self.triggers: list[tuple[int, int, float]] = []
        self.checked = 0
        # per-vertex weight extremes; the gap depends on nothing else besides degrees
        nz = graph.degrees > 0
        lo = np.zeros(graph.n)
        hi = np.zeros(graph.n)
        if nz.any():
            starts = graph.indptr[:-1][nz]
            lo[nz] = np.minimum.reduceat(graph.weights, starts)
            hi[nz] = np.maximum.reduceat(graph.weights, starts)
        self._wmin = lo.tolist()
        self._wmax = hi.tolist()
        self._gap: dict[tuple, float] = {}

    def _choose(self, ctx, v, prev, prev_nbrs, table, start, step) -> int:
        d_v = self.deg[v]
        if d_v >= self.T and self.epsilon > 0:
            d_u = self.deg[prev]
            if d_u < self.T:
                self.checked += 1
                key = (d_u, d_v, self._wmin[v], self._wmax[v])
                gap = self._gap.get(key)
                if gap is None:
                    b = approx_bounds(d_u, d_v, self.config.p, self.config.q, key[2], key[3])
                    gap = self._gap[key] = b.gap
                if gap < self.epsilon:
                    self.triggers.append((ctx.superstep, v, gap))
                    return _walk_step_static(self.indptr, self.indices, self.sprob, self.salias, v,
                                             self.rnd.uniforms(step), start)
        return FNCache._choose(self, ctx, v, prev, prev_nbrs, table, start, step)


class FNSwitch(FNBase):
    """Reverse the neighbour transfer for popular -> unpopular moves.

    Messages carry the step index explicitly because switched walks fall
    behind the superstep counter.
    """

    name = "switch"

    def __init__(self, graph, config, num_workers):
        super().__init__(graph, config, num_workers)
        self.switched = 0
        self._own: dict[int, np.ndarray] = {}

    def _own_table(self, v):
        # a popular vertex keeps a membership table of its own neighbours
        t = self._own.get(v)
        if t is None:
            t = self._own[v] = _build_hash(self.nbrs(v))
        return t

    def compute(self, ctx) -> None:
        v = ctx.vid
        if ctx.superstep == 0:
            self._first_step(ctx, v)
            ctx.halted = True
            return
        pending = ctx.worker_state.setdefault("pending", {})
        groups = None
        for msg in ctx.messages:
            kind = msg.kind
            if kind == STEP:
                self.block[v - self.lo, msg.step + 1] = msg.value
            elif kind == REQ:
                nb, w = self.adj(v)
                ctx.send(msg.value, Message(NEIG, msg.start, nb, step=msg.step, weights=w))
            else:
                if groups is None:
                    groups = {}
                groups.setdefault(msg.start, []).append(msg)
        if groups is not None:
            for start, msgs in groups.items():
                if len(msgs) != 1:
                    raise ProtocolError(f"{len(msgs)} neighbour messages for walk {start} at vertex {v}")
                msg = msgs[0]
                step = msg.step
                if step >= self.l:
                    raise ProtocolError(f"walk {start} asked for step {step} >= {self.l}")
                if pending.pop((v, start), None) is not None:
                    self._on_behalf(ctx, v, start, msg, step)
                else:
                    prev = msg.prev if msg.prev >= 0 else msg.src
                    x = self._choose(ctx, v, prev, msg.value, None, start, step)
                    self._emit(ctx, v, x, start, step)
        ctx.halted = True

    def _on_behalf(self, ctx, v, start, msg, step) -> None:
        # msg is x's reply; sample x's next step here, v being the previous vertex
        x = msg.src
        y = _kernels.walk_step_on_list(msg.value, msg.weights, v, self._own_table(v), self.inv_p,
                                       self.inv_q, self.rnd.uniforms(step), start)
        ctx.send(start, Message(STEP, start, y, step=step))
        if step + 1 < self.l:
            ctx.send(y, Message(NEIG, start, msg.value, step=step + 1, prev=x))

    def _emit(self, ctx, v, x, start, step) -> None:
        ctx.send(start, Message(STEP, start, x, step=step))
        if step + 1 < self.l:
            self._forward(ctx, v, x, start, step + 1)

    def _forward(self, ctx, v, x, start, next_step) -> None:
        if self.deg[v] >= self.T > self.deg[x]:
            self.switched += 1
            ctx.worker_state.setdefault("pending", {})[(v, start)] = next_step
            ctx.send(x, Message(REQ, start, v, step=next_step))
        else:
            ctx.send(x, Message(NEIG, start, self.nbrs(v), step=next_step))


VARIANTS = {cls.name: cls for cls in (FNBase, FNLocal, FNSwitch, FNCache, FNApprox)}
EXACT_VARIANTS = ("base", "local", "switch", "cache")


@dataclass
class WalkRun:
    variant: str
    config: WalkConfig
    walks: np.ndarray
    # one metrics list per (pass, round) engine run, in execution order
    runs: list[list[SuperstepMetrics]] = field(default_factory=list)
    triggers: list[tuple[int, int, float]] = field(default_factory=list)
    approx_checked: int = 0
    switched_moves: int = 0
    wall_time: float = 0.0

    @property
    def metrics(self) -> list[SuperstepMetrics]:
        return [m for run in self.runs for m in run]

    @property
    def sampled_steps(self) -> int:
        return int((self.walks[:, 1:] >= 0).sum())

    def summary(self) -> dict:
        s = summarize(self.metrics)
        s.update(
            variant=self.variant,
            wall_time=self.wall_time,
            supersteps=sum(len(r) for r in self.runs),
            max_run_supersteps=max((len(r) for r in self.runs), default=0),
            engine_runs=len(self.runs),
            walks=int(len(self.walks)),
            sampled_steps=self.sampled_steps,
            approx_steps=len(self.triggers),
            approx_fraction=len(self.triggers) / max(1, self.sampled_steps),
            switched_moves=self.switched_moves,
            p=self.config.p, q=self.config.q, l=self.config.l, r=self.config.r, k=self.config.k,
            seed=self.config.seed, popular_threshold=self.config.popular_threshold,
            epsilon=self.config.epsilon,
        )
        return s


def round_ranges(n: int, k: int) -> list[tuple[int, int]]:
    """``k`` contiguous, near-equal start-vertex ranges covering ``[0, n)``."""
    if not 1 <= k <= max(n, 1):
        raise ValueError(f"rounds k must satisfy 1 <= k <= n (n={n}, k={k})")
    bounds = np.linspace(0, n, k + 1).round().astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(k)]


def run_rounds(graph_or_pg: Graph | PartitionedGraph, config: WalkConfig, variant: str = "base",
               num_workers: int | None = None, executors: int = 1, on_superstep=None) -> WalkRun:
    """Run ``config.r`` passes of walks from every vertex in ``config.k`` rounds.

    Walks come back pass-major, then by start vertex, as a
    ``(r * n, l + 1)`` array whose first column is the start vertex;
    steps that were never taken (isolated starts) are ``-1``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    if isinstance(graph_or_pg, PartitionedGraph):
        pg = graph_or_pg
    else:
        pg = partition(graph_or_pg, num_workers or 1)
    graph = pg.graph
    n = graph.n
    ranges = round_ranges(n, config.k) if n else []
    program = VARIANTS[variant](graph, config, pg.num_workers)
    engine = Engine(pg, executors=executors)
    result = WalkRun(variant, config, np.zeros((0, config.l + 1), dtype=np.int64))
    max_ss = config.l + 1 if variant != "switch" else 2 * config.l + 2
    blocks = []
    t0 = time.perf_counter()
    for pass_index in range(config.r):
        rnd = WalkRandom(config.seed, pass_index, n)
        for lo, hi in ranges:
            block = new_walk_block(np.arange(lo, hi, dtype=np.int64), config.l)
            program.begin(rnd, block, lo, hi)
            _, metrics = engine.run(program, _WalkValues(block, lo), max_ss,
                                    active=np.arange(lo, hi), on_superstep=on_superstep,
                                    base_bytes=graph.nbytes + block.nbytes)
            result.runs.append(metrics)
            blocks.append(block)
    result.wall_time = time.perf_counter() - t0
    if blocks:
        result.walks = np.concatenate(blocks)
    result.triggers = list(getattr(program, "triggers", []))
    result.approx_checked = getattr(program, "checked", 0)
    result.switched_moves = getattr(program, "switched", 0)
    return result


def run_walks(graph: Graph, config: WalkConfig, variant: str = "base", num_workers: int = 1,
              executors: int = 1) -> WalkRun:
    return run_rounds(partition(graph, num_workers), config, variant, executors=executors)
