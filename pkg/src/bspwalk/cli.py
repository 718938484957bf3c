"""Command-line entry point: ``bspwalk generate | walk | stats | bench``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
Relative input paths that do not exist are looked up under
``$BSPWALK_DATA_DIR``, which is also the default output location.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import psutil

from bspwalk import rmat
from bspwalk.algorithms import VARIANTS, run_rounds
from bspwalk.engine import summarize, write_metrics_csv, write_summary_json
from bspwalk.graph import Graph, load_graph, partition, save_cache, estimate_transprob_memory
from bspwalk.walk import (WalkConfig, degree_frequency_histogram, read_walks, write_histogram_csv,
                          write_walks)

log = logging.getLogger("bspwalk")

DATA_DIR_ENV = "BSPWALK_DATA_DIR"
_PRESET_RE = re.compile(r"(?i)(er|wec|skew)-[0-9.]+")

BENCH_FIELDS = ["variant", "graph", "p", "q", "wall_time", "supersteps", "peak_bytes",
                "remote_neig_bytes", "status", "error"]


class UsageError(Exception):
    pass


class MemoryGuardError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV) or ".")


def default_workers() -> int:
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def _resolve_input(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    alt = data_dir() / p
    return alt if alt.exists() else p


@dataclass
class RunSpec:
    """Everything a walk run needs, checked before any work starts."""
    graph_source: str
    config: WalkConfig
    variant: str
    workers: int
    out_dir: Path
    graph_k: int | None = None

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if not _PRESET_RE.fullmatch(self.graph_source) and not _resolve_input(self.graph_source).exists():
            raise UsageError(f"graph {self.graph_source!r} is neither a file nor a preset such as ER-14")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out_dir, os.W_OK):
            raise UsageError(f"output directory {self.out_dir} is not writable")

    def load_graph(self) -> Graph:
        return resolve_graph(self.graph_source, self.graph_k, self.config.seed)


def resolve_graph(source: str, K: int | None = None, seed: int = 0) -> Graph:
    """A file path (edge list or ``.npz`` cache) or a preset like ``Skew-3``."""
    path = _resolve_input(source)
    if path.exists():
        return load_graph(path)
    if _PRESET_RE.fullmatch(source):
        return rmat.generate(rmat.preset(source, K=K, seed=seed))
    raise FileNotFoundError(source)


# -- memory guard ------------------------------------------------------------------

def estimate_round_bytes(graph: Graph, walks_in_round: int) -> int:
    """Rough peak message bytes for one round of concurrent walks.

    Each in-flight walk carries one STEP (17 bytes) and one NEIG holding the
    neighbour list of the vertex it sits on; a walker's position is
    degree-biased, so the expected list length is ``sum d^2 / sum d``.
    """
    total = int(graph.degrees.sum())
    if total == 0 or walks_in_round == 0:
        return 0
    mean_list = float((graph.degrees.astype(np.float64) ** 2).sum()) / total
    return int(walks_in_round * (17 + 9 + 8 * mean_list))


def check_memory(graph: Graph, config: WalkConfig, limit: int) -> None:
    per_round = -(-graph.n // config.k)
    need = estimate_round_bytes(graph, per_round) + graph.nbytes
    if need <= limit:
        return
    budget = max(1, limit - graph.nbytes)
    k = config.k
    while k < graph.n and estimate_round_bytes(graph, -(-graph.n // k)) > budget:
        k *= 2
    raise MemoryGuardError(
        f"estimated peak {need / 2**20:.1f} MiB exceeds the {limit / 2**20:.1f} MiB limit; "
        f"split the starts into rounds (FN-Multi), e.g. --k-rounds {min(k, graph.n)}")


# -- subcommands ---------------------------------------------------------------------

def cmd_generate(args) -> int:
    name = args.preset
    size = float(args.size)
    if name.lower() != "skew" and size != int(size):
        raise UsageError("ER and WeC take an integer K")
    params = rmat.preset(name, size, K=args.k, seed=args.seed)
    out = Path(args.out) if args.out else data_dir() / f"{params.name}.edges"
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    graph = rmat.generate(params)
    meta = rmat.write_dataset(params, graph, out)
    # the edge list cannot represent isolated vertices; keep an exact copy too
    save_cache(graph, f"{out}.npz")
    meta["seconds"] = round(time.perf_counter() - t0, 3)
    print(json.dumps(meta, indent=2))
    return 0


def _walk_config(args) -> WalkConfig:
    try:
        return WalkConfig(p=args.p, q=args.q, l=args.l, r=args.r, k=args.k_rounds,
                          popular_threshold=args.popular_threshold, epsilon=args.epsilon,
                          seed=args.seed, cache_bytes=args.cache_bytes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def write_triggers_csv(triggers, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["superstep", "vertex", "gap"])
        for s, v, gap in triggers:
            w.writerow([s, v, repr(gap)])


def cmd_walk(args) -> int:
    spec = RunSpec(args.graph, _walk_config(args), args.variant, args.workers or default_workers(),
                   Path(args.out) if args.out else data_dir() / "walk-out", graph_k=args.graph_k)
    spec.validate()
    graph = spec.load_graph()
    if spec.config.k > max(graph.n, 1):
        raise UsageError(f"--k-rounds {spec.config.k} exceeds the {graph.n} start vertices")
    limit = args.memory_limit if args.memory_limit is not None else int(psutil.virtual_memory().available * 0.8)
    check_memory(graph, spec.config, limit)

    log.info("walking %s: %d vertices, %d edges, variant %s, %d workers", spec.graph_source, graph.n,
             graph.num_edges, spec.variant, spec.workers)
    run = run_rounds(partition(graph, spec.workers), spec.config, spec.variant)
    out = spec.out_dir
    write_walks(run.walks, out / "walks.txt")
    write_metrics_csv(run.metrics, out / "metrics.csv")
    summary = run.summary()
    summary.update(graph=spec.graph_source, vertices=graph.n, edges=graph.num_edges, workers=spec.workers)
    write_summary_json(summary, out / "summary.json")
    if spec.variant == "approx":
        write_triggers_csv(run.triggers, out / "approx_triggers.csv")
    print(json.dumps({k: summary[k] for k in ("variant", "wall_time", "supersteps", "peak_message_bytes",
                                              "remote_neig_bytes", "walks")}, indent=2))
    return 0


def cmd_stats(args) -> int:
    graph = resolve_graph(args.graph, args.graph_k, args.seed)
    walks = read_walks(_resolve_input(args.walks))
    buckets = degree_frequency_histogram(walks, graph, bucket_width=args.bucket_width)
    out = Path(args.out) if args.out else data_dir() / "stats-out"
    out.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(buckets, out / "degree_frequency.csv")
    report = {
        "vertices": graph.n,
        "edges": graph.num_edges,
        "walks": len(walks),
        # 8 bytes per precomputed transition probability, d_i^2 of them at vertex i
        "transprob_estimate_bytes": estimate_transprob_memory(graph),
        "peak_message_bytes": None,
    }
    if args.summary:
        with open(_resolve_input(args.summary)) as fh:
            s = json.load(fh)
        report["peak_message_bytes"] = s.get("peak_message_bytes")
        report["base_bytes"] = s.get("base_bytes")
    with open(out / "memory_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))
    return 0


def _parse_pq(text: str) -> tuple[float, float]:
    try:
        p, q = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected P,Q such as 0.5,2; got {text!r}") from None
    if p <= 0 or q <= 0:
        raise argparse.ArgumentTypeError("p and q must be > 0")
    return p, q


def bench_rows(variants, graphs, pqs, args):
    """Yield one result dict per (graph, p/q, variant) cell; failures become rows too."""
    for gname in graphs:
        try:
            graph = resolve_graph(gname, args.graph_k, args.seed)
            pg = partition(graph, args.workers or default_workers())
            gerr = None
        except Exception as exc:  # noqa: BLE001 - recorded in the row
            gerr = f"{type(exc).__name__}: {exc}"
        for p, q in pqs:
            for variant in variants:
                row = dict(variant=variant, graph=gname, p=p, q=q, wall_time="", supersteps="",
                           peak_bytes="", remote_neig_bytes="", status="ok", error="")
                if gerr is not None:
                    row.update(status="failed", error=gerr)
                    yield row
                    continue
                try:
                    cfg = WalkConfig(p=p, q=q, l=args.l, r=args.r, k=args.k_rounds,
                                     popular_threshold=args.popular_threshold, epsilon=args.epsilon,
                                     seed=args.seed)
                    t0 = time.perf_counter()
                    run = run_rounds(pg, cfg, variant)
                    wall = time.perf_counter() - t0
                    s = summarize(run.metrics)
                    row.update(wall_time=round(wall, 4), supersteps=s["supersteps"],
                               peak_bytes=s["peak_message_bytes"], remote_neig_bytes=s["remote_neig_bytes"])
                except Exception as exc:  # noqa: BLE001
                    row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
                yield row


def cmd_bench(args) -> int:
    variants = args.variants.split(",")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}")
    graphs = args.graphs.split(",")
    pqs = args.pq or [(0.5, 2.0), (2.0, 0.5)]
    out = Path(args.out) if args.out else data_dir() / "bench.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    failures = 0
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for row in bench_rows(variants, graphs, pqs, args):
            w.writerow(row)
            fh.flush()
            failures += row["status"] != "ok"
            log.info("%s %s p=%g q=%g: %s %s", row["variant"], row["graph"], row["p"], row["q"],
                     row["status"], row["wall_time"] or row["error"])
    print(f"wrote {out} ({failures} failed cell(s))")
    return 0


# -- parser ------------------------------------------------------------------------------

def _add_walk_flags(p, *, pq=True):
    if pq:
        p.add_argument("--p", type=float, default=1.0, help="return parameter (default 1)")
        p.add_argument("--q", type=float, default=1.0, help="in-out parameter (default 1)")
    p.add_argument("--l", type=int, default=80, help="walk length (default 80)")
    p.add_argument("--r", type=int, default=10, help="walks per vertex (default 10)")
    p.add_argument("--k-rounds", type=int, default=1, help="FN-Multi rounds per pass (default 1)")
    p.add_argument("--workers", type=int, default=None, help="logical workers (default: physical cores)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--popular-threshold", type=int, default=1000,
                   help="degree at which a vertex counts as popular (default 1000)")
    p.add_argument("--epsilon", type=float, default=1e-3, help="FN-Approx bound-gap tolerance")
    p.add_argument("--graph-k", type=int, default=None, help="log2 vertex count for Skew presets (default 22)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bspwalk", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write an RMAT workload as an edge list")
    g.add_argument("preset", choices=["ER", "WeC", "Skew", "er", "wec", "skew"])
    g.add_argument("size", help="K for ER/WeC, skew factor S for Skew")
    g.add_argument("--k", type=int, default=None, help="log2 vertex count for Skew (default 22)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_generate)

    w = sub.add_parser("walk", help="run one variant and write walks, metrics and a summary")
    w.add_argument("graph", help="edge-list file, .npz cache, or preset such as ER-14 / Skew-3")
    w.add_argument("--variant", default="base", choices=list(VARIANTS))
    _add_walk_flags(w)
    w.add_argument("--cache-bytes", type=int, default=None, help="per-worker FN-Cache budget")
    w.add_argument("--memory-limit", type=int, default=None,
                   help="abort above this estimated peak (bytes; default 80%% of available RAM)")
    w.add_argument("--out", default=None, help="output directory")
    w.set_defaults(func=cmd_walk)

    s = sub.add_parser("stats", help="degree-frequency histogram and transition-memory report")
    s.add_argument("walks")
    s.add_argument("graph")
    s.add_argument("--summary", default=None, help="summary.json of the run, for its peak bytes")
    s.add_argument("--bucket-width", type=int, default=200)
    s.add_argument("--graph-k", type=int, default=None)
    s.add_argument("--seed", type=int, default=0, help="seed used if the graph is a preset")
    s.add_argument("--out", default=None, help="output directory")
    s.set_defaults(func=cmd_stats)

    b = sub.add_parser("bench", help="variants x graphs x (p,q) matrix into one CSV")
    b.add_argument("--variants", default="base,cache,approx")
    b.add_argument("--graphs", default="Skew-2,Skew-3,Skew-4,Skew-5")
    b.add_argument("--pq", type=_parse_pq, action="append", default=None,
                   help="P,Q pair; repeatable (default 0.5,2 and 2,0.5)")
    _add_walk_flags(b, pq=False)
    b.add_argument("--out", default=None, help="CSV path")
    b.set_defaults(func=cmd_bench, r=1)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bspwalk: error: {exc}", file=sys.stderr)
        return 1
    except (MemoryGuardError, rmat.RmatCapacityError) as exc:
        print(f"bspwalk: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, IndexError) as exc:
        print(f"bspwalk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
