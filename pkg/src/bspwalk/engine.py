"""A Pregel-style bulk-synchronous runtime over logical in-process workers.

Vertices are owned by workers (``v mod W``).  In every superstep each
active vertex runs the program's ``compute`` once; messages sent during
superstep ``s`` are delivered at ``s + 1``.  A vertex that votes to halt is
skipped until a message reactivates it, and the run ends when every vertex
is halted with nothing in flight.

Messages are accounted with a fixed size model (one tag byte, eight bytes
for the walk-start id, eight bytes per payload id) and tallied as local or
remote depending on whether sender and receiver share an owner.  Remote
array payloads are copied at the barrier, as a network transfer would.
"""
from __future__ import annotations

import csv
import enum
import gc
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from operator import attrgetter
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from bspwalk.graph import PartitionedGraph


class MsgKind(enum.IntEnum):
    STEP = 0
    NEIG = 1
    NEIG_CACHED = 2
    REQ = 3
    # walk hand-off between co-located vertices; carries no neighbour list
    HOP = 4


_NKINDS = len(MsgKind)
_STEP, _NEIG, _NEIG_CACHED, _REQ, _HOP = (int(k) for k in MsgKind)


class Message:
    """One message.  ``src`` and ``seq`` are filled in by the engine on send.

    ``step`` and ``prev`` are optional explicit fields (``-1`` when implied by
    the superstep or the sender) and cost eight bytes each when present.
    """

    __slots__ = ("kind", "start", "value", "step", "prev", "weights", "src")

    def __init__(self, kind, start, value=None, step=-1, prev=-1, weights=None):
        self.kind = kind
        self.start = start
        self.value = value
        self.step = step
        self.prev = prev
        self.weights = weights
        self.src = -1

    @property
    def nbytes(self) -> int:
        kind = self.kind
        if kind == _NEIG:
            ids = len(self.value)
        elif kind == _HOP:
            ids = 0
        else:
            ids = 1
        if self.weights is not None:
            ids += len(self.weights)
        if self.step >= 0:
            ids += 1
        if self.prev >= 0:
            ids += 1
        return 9 + 8 * ids

    def __repr__(self):
        return (f"Message({MsgKind(self.kind).name}, start={self.start}, value={self.value!r}, "
                f"step={self.step}, prev={self.prev}, src={self.src})")


NOT_LOCAL = None


class VertexProgramError(RuntimeError):
    def __init__(self, vid: int, superstep: int, cause: BaseException):
        super().__init__(f"vertex {vid} failed in superstep {superstep}: {cause!r}")
        self.vid = vid
        self.superstep = superstep


class VertexProgram(Protocol):
    def compute(self, ctx: "VertexContext") -> None: ...


@dataclass
class SuperstepMetrics:
    superstep: int
    step_msgs: int = 0
    neig_msgs: int = 0
    req_msgs: int = 0
    hop_msgs: int = 0
    step_bytes: int = 0
    neig_bytes: int = 0
    local_neig_bytes: int = 0
    remote_neig_bytes: int = 0
    local_bytes: int = 0
    remote_bytes: int = 0
    received_msgs: int = 0
    active_vertices: int = 0
    halted_vertices: int = 0
    base_bytes: int = 0
    wall_time: float = 0.0

    @property
    def sent_msgs(self) -> int:
        return self.step_msgs + self.neig_msgs + self.req_msgs + self.hop_msgs

    @property
    def message_bytes(self) -> int:
        return self.local_bytes + self.remote_bytes


class VertexContext:
    """What ``compute`` sees: one reusable object per worker."""

    __slots__ = ("vid", "superstep", "worker", "messages", "halted", "worker_state",
                 "_engine", "_outbox", "_counts", "_bytes", "_n", "_W", "_values")

    def __init__(self, engine: "Engine", worker: int):
        self._engine = engine
        self.worker = worker
        self.worker_state: dict[str, Any] = {}
        self._n = engine.graph.n
        self._W = engine.num_workers
        self._outbox: list = []
        self._counts = [0] * _NKINDS
        self._bytes = [0] * (2 * _NKINDS)
        self._values = None
        self.vid = -1
        self.superstep = 0
        self.messages: Sequence[Message] = ()
        self.halted = False

    # -- vertex state ------------------------------------------------------
    @property
    def value(self):
        return self._values[self.vid]

    @value.setter
    def value(self, v):
        self._values[self.vid] = v

    def out_edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self._engine.graph.adj(self.vid)

    @property
    def degree(self) -> int:
        return int(self._engine.degrees[self.vid])

    # -- messaging ---------------------------------------------------------
    def send(self, dest: int, msg: Message) -> None:
        if not 0 <= dest < self._n:
            raise IndexError(f"message destination {dest} out of range [0, {self._n})")
        msg.src = self.vid
        kind = msg.kind
        # size model inlined from Message.nbytes; this is the hottest call
        if kind == _NEIG:
            ids = len(msg.value)
        elif kind == _HOP:
            ids = 0
        else:
            ids = 1
        if msg.weights is not None:
            ids += len(msg.weights)
        if msg.step >= 0:
            ids += 1
        if msg.prev >= 0:
            ids += 1
        self._counts[kind] += 1
        self._bytes[2 * kind + (dest % self._W != self.worker)] += 9 + 8 * ids
        self._outbox.append((dest, msg))

    def vote_to_halt(self) -> None:
        self.halted = True

    def read_local_neighbors(self, v: int):
        """Neighbour ids of ``v`` if it lives on this worker, else ``NOT_LOCAL``."""
        if v % self._W != self.worker:
            return NOT_LOCAL
        g = self._engine.graph
        return g.indices[g.indptr[v]:g.indptr[v + 1]]

    def worker_of(self, v: int) -> int:
        if not 0 <= v < self._n:
            raise IndexError(f"vertex {v} out of range [0, {self._n})")
        return v % self._W


# functional spellings of the context API
def send(ctx: VertexContext, dest: int, msg: Message) -> None:
    ctx.send(dest, msg)


def vote_to_halt(ctx: VertexContext) -> None:
    ctx.vote_to_halt()


def read_local_neighbors(ctx: VertexContext, v: int):
    return ctx.read_local_neighbors(v)


_by_src = attrgetter("src")


class Engine:
    def __init__(self, pg: PartitionedGraph, executors: int = 1, pause_gc: bool = True):
        self.pg = pg
        # messages never form reference cycles, so the cyclic collector only
        # adds pauses proportional to the live heap
        self.pause_gc = pause_gc
        self.graph = pg.graph
        self.num_workers = pg.num_workers
        self.degrees = pg.graph.degrees
        self.executors = max(1, int(executors))

    def worker_of(self, v: int) -> int:
        return self.pg.worker_of(v)

    def _run_worker(self, program, ctx: VertexContext, vids, inbox: dict, awake: set, superstep: int):
        compute = program.compute
        ctx.superstep = superstep
        empty = ()
        for vid in vids:
            ctx.vid = vid
            ctx.messages = inbox.get(vid, empty)
            ctx.halted = False
            try:
                compute(ctx)
            except Exception as exc:  # noqa: BLE001 - re-raised with location
                raise VertexProgramError(vid, superstep, exc) from exc
            if ctx.halted:
                awake.discard(vid)
            else:
                awake.add(vid)

    def run(
        self,
        program: VertexProgram,
        values,
        max_supersteps: int,
        active: Sequence[int] | np.ndarray | None = None,
        base_bytes: int | None = None,
        on_superstep: Callable[[SuperstepMetrics], None] | None = None,
    ):
        """Execute ``program`` until quiescence or ``max_supersteps``.

        ``active`` restricts which vertices run in superstep 0 (default: all).
        Returns ``(values, metrics)`` with one :class:`SuperstepMetrics` per
        executed superstep.
        """
        if max_supersteps < 1:
            raise ValueError("max_supersteps must be >= 1")
        W = self.num_workers
        n = self.graph.n
        ctxs = [VertexContext(self, w) for w in range(W)]
        for c in ctxs:
            c._values = values
        if base_bytes is None:
            base_bytes = self.graph.nbytes + int(getattr(values, "nbytes", 0))

        if active is None:
            first = [np.arange(w, n, W, dtype=np.int64).tolist() for w in range(W)]
        else:
            act = np.unique(np.asarray(active, dtype=np.int64))
            first = [act[act % W == w].tolist() for w in range(W)]
        awake_sets = [set() for _ in range(W)]
        inboxes: list[dict[int, list[Message]]] = [{} for _ in range(W)]
        on_deliver = getattr(program, "on_deliver", None)
        pool = ThreadPoolExecutor(self.executors) if self.executors > 1 and W > 1 else None
        metrics: list[SuperstepMetrics] = []
        received = 0
        gc_was_enabled = gc.isenabled()
        if self.pause_gc:
            gc.disable()
        try:
            for s in range(max_supersteps):
                t0 = time.perf_counter()
                if on_deliver is not None:
                    for w in range(W):
                        if inboxes[w]:
                            on_deliver(ctxs[w], inboxes[w])
                if s == 0:
                    runlists = first
                else:
                    runlists = []
                    for w in range(W):
                        ib = inboxes[w]
                        aw = awake_sets[w]
                        if aw:
                            runlists.append(list(ib.keys() | aw))
                        else:
                            runlists.append(list(ib))
                nactive = sum(len(r) for r in runlists)
                if pool is None:
                    for w in range(W):
                        self._run_worker(program, ctxs[w], runlists[w], inboxes[w], awake_sets[w], s)
                else:
                    futs = [pool.submit(self._run_worker, program, ctxs[w], runlists[w], inboxes[w],
                                        awake_sets[w], s) for w in range(W)]
                    for f in futs:
                        f.result()

                # barrier: tally, then route outboxes into next inboxes
                m = SuperstepMetrics(superstep=s, received_msgs=received, active_vertices=nactive,
                                     base_bytes=base_bytes)
                counts = [0] * _NKINDS
                nbytes = [0] * (2 * _NKINDS)
                for c in ctxs:
                    for i, x in enumerate(c._counts):
                        counts[i] += x
                    for i, x in enumerate(c._bytes):
                        nbytes[i] += x
                    c._counts = [0] * _NKINDS
                    c._bytes = [0] * (2 * _NKINDS)
                m.step_msgs = counts[_STEP]
                m.neig_msgs = counts[_NEIG] + counts[_NEIG_CACHED]
                m.req_msgs = counts[_REQ]
                m.hop_msgs = counts[_HOP]
                m.step_bytes = nbytes[2 * _STEP] + nbytes[2 * _STEP + 1]
                m.local_neig_bytes = nbytes[2 * _NEIG] + nbytes[2 * _NEIG_CACHED]
                m.remote_neig_bytes = nbytes[2 * _NEIG + 1] + nbytes[2 * _NEIG_CACHED + 1]
                m.neig_bytes = m.local_neig_bytes + m.remote_neig_bytes
                m.local_bytes = sum(nbytes[0::2])
                m.remote_bytes = sum(nbytes[1::2])

                new_inboxes: list[dict[int, list[Message]]] = [{} for _ in range(W)]
                sent = 0
                for c in ctxs:
                    out = c._outbox
                    sent += len(out)
                    sw = c.worker
                    for dest, msg in out:
                        dw = dest % W
                        if dw != sw and isinstance(msg.value, np.ndarray):
                            msg.value = msg.value.copy()
                            if msg.weights is not None:
                                msg.weights = msg.weights.copy()
                        box = new_inboxes[dw]
                        lst = box.get(dest)
                        if lst is None:
                            box[dest] = [msg]
                        else:
                            lst.append(msg)
                    c._outbox = []
                for box in new_inboxes:
                    for lst in box.values():
                        if len(lst) > 1:
                            lst.sort(key=_by_src)
                inboxes = new_inboxes
                received = sent
                m.halted_vertices = n - sum(len(a) for a in awake_sets)
                m.wall_time = time.perf_counter() - t0
                metrics.append(m)
                if on_superstep is not None:
                    on_superstep(m)
                if sent == 0 and not any(awake_sets):
                    break
        finally:
            if pool is not None:
                pool.shutdown()
            if gc_was_enabled:
                gc.enable()
        return values, metrics


def run(program: VertexProgram, pg: PartitionedGraph, values, max_supersteps: int, **kw):
    return Engine(pg, executors=kw.pop("executors", 1)).run(program, values, max_supersteps, **kw)


METRIC_FIELDS = [f.name for f in fields(SuperstepMetrics)]


def write_metrics_csv(metrics: Sequence[SuperstepMetrics], path, extra: dict | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(extra) + METRIC_FIELDS)
        w.writeheader()
        for m in metrics:
            w.writerow({**extra, **asdict(m)})


def read_metrics_csv(path) -> list[SuperstepMetrics]:
    out = []
    types = {f.name: f.type for f in fields(SuperstepMetrics)}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k in METRIC_FIELDS:
                kw[k] = float(row[k]) if types[k] in ("float", float) else int(row[k])
            out.append(SuperstepMetrics(**kw))
    return out


def summarize(metrics: Sequence[SuperstepMetrics]) -> dict:
    """Run summary: superstep count, peak and total message bytes, wall time."""
    if not metrics:
        return {"supersteps": 0, "peak_message_bytes": 0, "total_message_bytes": 0,
                "remote_neig_bytes": 0, "wall_time": 0.0, "base_bytes": 0}
    return {
        "supersteps": len(metrics),
        "peak_message_bytes": max(m.message_bytes for m in metrics),
        "total_message_bytes": sum(m.message_bytes for m in metrics),
        "remote_neig_bytes": sum(m.remote_neig_bytes for m in metrics),
        "neig_bytes": sum(m.neig_bytes for m in metrics),
        "wall_time": sum(m.wall_time for m in metrics),
        "base_bytes": metrics[0].base_bytes,
    }


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
