"""Acceptance suite.

Each test settles one acceptance criterion and records a single
``[PASS]`` or ``[FAIL]`` line, which is echoed in the terminal summary.
Run parameters are fixed here up front; nothing is retried or tuned
after the fact.  The whole module takes tens of minutes, so it is marked
``slow`` (deselect with ``-m "not slow"``).
"""
import dataclasses
import functools
import hashlib
import itertools
import math
import time

import networkx as nx
import numpy as np
import pytest
from scipy.stats import chisquare

from bspwalk import rmat
from bspwalk.algorithms import run_walks
from bspwalk.graph import Graph, estimate_transprob_memory, uniform_transprob_memory
from bspwalk.walk import (WalkConfig, approx_bounds, degree_frequency_histogram, exact_next_distribution,
                          transition_weights, write_walks)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

WORKERS = 4


@pytest.fixture
def verdict(request):
    said = []

    def record(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        said.append(tag)
        assert ok, line

    yield record
    if not said:
        ACCEPTANCE_LINES.append(f"[FAIL] {request.node.name}: raised before reaching a verdict")


@functools.lru_cache(maxsize=None)
def preset_graph(name, size, K):
    return rmat.generate(rmat.preset(name, size, K=K))


# -- transition-probability memory --------------------------------------------------------

def test_transprob_memory_arithmetic(verdict):
    n = 10**9
    d100 = estimate_transprob_memory({100: n})
    d1000 = estimate_transprob_memory({1000: n})
    ok = (d100 == uniform_transprob_memory(n, 100) == 80 * 10**12
          and d1000 == uniform_transprob_memory(n, 1000) == 8 * 10**15)
    verdict("transprob-memory", ok, f"1G vertices: degree 100 -> {d100:.3e} B (80 TB), "
                                    f"degree 1000 -> {d1000:.3e} B (8 PB)")


# -- second-order transition model on small graphs -----------------------------------------

PQ_PAIRS = [(0.5, 2.0), (2.0, 0.5), (1.0, 1.0), (0.25, 4.0), (3.0, 0.7), (0.9, 1.3)]


def _distance_model(A, p, q):
    """Normalised next-step probabilities from hop distances alone.

    ``P[g, u, v, x]`` is the chance of moving ``v -> x`` having come from
    ``u``: weight ``1/p`` when ``x`` is ``u`` (distance 0), ``1`` at
    distance 1 from ``u`` and ``1/q`` at distance 2.
    """
    A = A.astype(bool)
    n = A.shape[1]
    two_hops = np.matmul(A.astype(np.int32), A.astype(np.int32)) > 0
    dist = np.where(np.eye(n, dtype=bool), 0, np.where(A, 1, np.where(two_hops, 2, 3)))
    inv_p = (1.0 / p)[:, None, None]
    inv_q = (1.0 / q)[:, None, None]
    bias = np.where(dist == 0, inv_p, np.where(dist == 1, 1.0, np.where(dist == 2, inv_q, 0.0)))
    W = A[:, None, :, :] * bias[:, :, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        return W / W.sum(axis=-1, keepdims=True)


def _worst_model_error(A, p, q, chunk=2048):
    worst, contexts = 0.0, 0
    for lo in range(0, len(A), chunk):
        a, pp, qq = A[lo:lo + chunk], p[lo:lo + chunk], q[lo:lo + chunk]
        P = _distance_model(a, pp, qq)
        got = np.zeros_like(P)
        for g in range(len(a)):
            nbrs = [np.flatnonzero(row).tolist() for row in a[g]]
            sets = [set(x) for x in nbrs]
            pg, qg = float(pp[g]), float(qq[g])
            for v, nv in enumerate(nbrs):
                unit = [(x, 1.0) for x in nv]
                for u in nv:
                    w = transition_weights(unit, u, sets[u], pg, qg)
                    total = math.fsum(w)
                    got[g, u, v, nv] = [x / total for x in w]
                    contexts += 1
        mask = a.astype(bool)[:, :, :, None] & a.astype(bool)[:, None, :, :]
        worst = max(worst, float(np.abs(got - P)[mask].max(initial=0.0)))
    return worst, contexts


def _with_all_pairs(mats):
    A = np.repeat(np.stack(mats), len(PQ_PAIRS), axis=0)
    pq = np.array(PQ_PAIRS * len(mats))
    return A, pq[:, 0], pq[:, 1]


def test_transition_model_on_small_graphs(verdict):
    t0 = time.perf_counter()
    atlas = [G for G in nx.graph_atlas_g() if G.number_of_nodes() >= 2 and nx.is_connected(G)]
    by_size = {}
    for G in atlas:
        by_size.setdefault(G.number_of_nodes(), []).append(nx.to_numpy_array(G, nodelist=range(len(G)), dtype=bool))
    worst, contexts, graphs = 0.0, 0, 0
    for n, mats in sorted(by_size.items()):
        err, c = _worst_model_error(*_with_all_pairs(mats))
        worst, contexts, graphs = max(worst, err), contexts + c, graphs + len(mats)

    # every connected 8-vertex graph is a connected 7-vertex graph plus one
    # vertex joined to a non-empty subset (drop a non-cut vertex to see it)
    seven = np.stack(by_size[7])
    masks = np.array(list(itertools.product([False, True], repeat=7))[1:])
    eight = np.zeros((len(seven), len(masks), 8, 8), dtype=bool)
    eight[:, :, :7, :7] = seven[:, None]
    eight[:, :, 7, :7] = masks[None]
    eight[:, :, :7, 7] = masks[None]
    eight = eight.reshape(-1, 8, 8)
    pq = np.array(PQ_PAIRS)[np.arange(len(eight)) % len(PQ_PAIRS)]
    err, c = _worst_model_error(eight, pq[:, 0], pq[:, 1])
    worst, contexts, graphs = max(worst, err), contexts + c, graphs + len(eight)

    rng = np.random.default_rng(12)
    twelve = []
    while len(twelve) < 500:
        G = nx.gnp_random_graph(12, rng.uniform(0.15, 0.6), seed=int(rng.integers(2**31)))
        if nx.is_connected(G):
            twelve.append(nx.to_numpy_array(G, nodelist=range(12), dtype=bool))
    err, c = _worst_model_error(*_with_all_pairs(twelve))
    worst, contexts, graphs = max(worst, err), contexts + c, graphs + len(twelve)

    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 60
    verdict("transition-model", ok, f"{graphs} graphs, {contexts} (u, v, p, q) contexts, "
                                    f"max |error| {worst:.2e} (<= 1e-12), {elapsed:.1f}s (< 60s)")


# -- sampling frequencies ------------------------------------------------------------------

def test_sampling_frequencies_chi_square(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(21)
    slots = list(itertools.combinations(range(7), 2))
    while True:
        edges = [slots[i] for i in rng.choice(len(slots), 10, replace=False)]
        G = nx.Graph(edges)
        if len(G) == 7 and nx.is_connected(G) and min(d for _, d in G.degree) >= 2:
            break
    src, dst = np.array(edges).T
    w = rng.uniform(0.5, 2.5, len(edges))
    small = Graph.from_edges(7, src, dst, w)

    # disjoint copies: one engine run yields many independent walks per context
    copies = 2000
    off = 7 * np.repeat(np.arange(copies), len(edges))
    g = Graph.from_edges(7 * copies, np.tile(src, copies) + off, np.tile(dst, copies) + off, np.tile(w, copies))
    cfg = WalkConfig(p=0.5, q=2, l=40, r=12, seed=5)
    walks = run_walks(g, cfg, "base", num_workers=WORKERS).walks % 7
    key = (walks[:, :-2] * 7 + walks[:, 1:-1]) * 7 + walks[:, 2:]
    counts = np.bincount(key.ravel(), minlength=343).reshape(7, 7, 7)

    pvals, sizes = [], []
    for u, v in [(a, b) for a, b in edges] + [(b, a) for a, b in edges]:
        dist = exact_next_distribution(small, u, v, cfg.p, cfg.q)
        xs = list(dist)
        obs = counts[u, v, xs]
        sizes.append(int(obs.sum()))
        pvals.append(chisquare(obs, obs.sum() * np.array([dist[x] for x in xs])).pvalue)
    elapsed = time.perf_counter() - t0
    ok = len(pvals) == 20 and min(sizes) >= 100_000 and min(pvals) > 1e-3 and elapsed < 300
    verdict("sampling-chi2", ok, f"20 contexts, min {min(sizes)} draws each (>= 1e5), "
                                 f"min p-value {min(pvals):.4f} (> 0.001), {elapsed:.0f}s (< 300s)")


# -- exact variants agree bit for bit ------------------------------------------------------

def blogcatalog_like(seed=0, n=10_312, m=333_983):
    """An R-MAT graph at the scale of BlogCatalog (10,312 vertices, 333,983 edges).

    Placements come from a 2^14 grid with the dense corner at low ids and
    are kept when both ends fall below ``n``; the first ``m`` distinct
    undirected edges in draw order form the graph.
    """
    target = 2 * m
    while True:
        params = rmat.RmatParams(14, target, 0.32, 0.25, 0.25, 0.18, seed=seed)
        src, dst = map(np.concatenate, zip(*rmat.iter_placements(params)))
        keep = (src < n) & (dst < n) & (src != dst)
        a, b = np.minimum(src[keep], dst[keep]), np.maximum(src[keep], dst[keep])
        _, first = np.unique(a * n + b, return_index=True)
        if len(first) >= m:
            order = np.sort(first)[:m]
            return Graph.from_edges(n, a[order], b[order])
        target = int(target * 1.5)


def _sha(walks, path):
    write_walks(walks, path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_exact_variants_identical(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = WalkConfig(p=0.5, q=2, l=80, r=1, popular_threshold=300, seed=3)
    graphs = {"BlogCatalog-scale": blogcatalog_like(), "Skew-2 K=14": preset_graph("Skew", 2, 14)}
    runs = [("base", 1), ("base", 4), ("local", 1), ("switch", 1), ("cache", 1)]
    notes, ok = [], True
    for gname, g in graphs.items():
        digests, out = {}, {}
        for variant, k in runs:
            run = run_walks(g, dataclasses.replace(cfg, k=k), variant, num_workers=WORKERS)
            label = f"{variant}/k={k}"
            out[label] = run
            digests[label] = _sha(run.walks, tmp_path / f"{gname}-{variant}-{k}.txt")
        same = len(set(digests.values())) == 1
        # the optimisations must actually engage for the comparison to mean anything
        engaged = (out["switch/k=1"].switched_moves > 0 and
                   out["cache/k=1"].summary()["remote_neig_bytes"] < out["base/k=1"].summary()["remote_neig_bytes"])
        ok &= same and engaged
        notes.append(f"{gname} (n={g.n}, m={g.num_edges}, max deg {g.max_degree}): "
                     f"{'identical' if same else 'DIFFERENT'} sha {next(iter(digests.values()))[:12]}, "
                     f"{out['switch/k=1'].switched_moves} switched moves")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    verdict("exact-variants", ok, "base, multi k=4, local, switch, cache; " + "; ".join(notes)
            + f"; {elapsed:.0f}s (< 600s)")


# -- approximation bounds ------------------------------------------------------------------

def _bounded_context(rng):
    d_u = int(rng.integers(1, 40))
    d_v = d_u + int(rng.integers(1, 300))
    shared = int(rng.integers(0, min(d_u - 1, d_v - 1) + 1))
    p, q = np.exp(rng.uniform(np.log(0.25), np.log(4.0), 2))
    # u = 0, v = 1, then shared neighbours, v-only and u-only vertices
    common = list(range(2, 2 + shared))
    v_only = list(range(2 + shared, 1 + d_v))
    u_only = list(range(1 + d_v, d_v + d_u - shared))
    v_side = [0] + common + v_only
    if rng.random() < 0.25:
        wv = np.ones(d_v)
    else:
        lo = rng.uniform(0.2, 2.0)
        wv = rng.uniform(lo, lo * rng.uniform(1.0, 4.0), d_v)
    src = [1] * d_v + [0] * (len(common) + len(u_only))
    dst = v_side + common + u_only
    w = list(wv) + [1.0] * (len(common) + len(u_only))
    g = Graph.from_edges(d_v + d_u - shared, src, dst, w)
    assert g.degree(0) == d_u and g.degree(1) == d_v
    return g, d_u, d_v, p, q


def test_approx_bounds_sandwich(verdict):
    rng = np.random.default_rng(5)
    rel = 1e-12  # float rounding only; bounds can be tight (unit weights, p = q)
    violations = 0
    tightest = math.inf
    for _ in range(1000):
        g, d_u, d_v, p, q = _bounded_context(rng)
        wv = g.adj(1)[1]
        b = approx_bounds(d_u, d_v, p, q, float(wv.min()), float(wv.max()))
        for x, prob in exact_next_distribution(g, 0, 1, p, q).items():
            if x == 0:
                continue
            if not b.lower * (1 - rel) <= prob <= b.upper * (1 + rel):
                violations += 1
            tightest = min(tightest, prob - b.lower, b.upper - prob)
    ex = approx_bounds(2, 100, p=2, q=0.5, w_min=1, w_max=1)
    example_ok = abs(ex.lower - 0.005038) <= 1e-6 and abs(ex.upper - 0.010178) <= 1e-6
    verdict("approx-bounds", violations == 0 and example_ok,
            f"1000 random contexts, {violations} violations (closest approach {tightest:.1e}); "
            f"d_u=2, d_v=100, p=2, q=0.5 gives [{ex.lower:.6f}, {ex.upper:.6f}]")


# -- FN-Switch superstep overhead ----------------------------------------------------------

def test_switch_superstep_overhead(verdict):
    # two popular hubs joined to 1200 unpopular leaves: every walk alternates
    hubs, leaves = 2, 1200
    src = np.repeat(np.arange(hubs), leaves)
    dst = hubs + np.tile(np.arange(leaves), hubs)
    g = Graph.from_edges(hubs + leaves, src, dst)
    cfg = WalkConfig(l=80, r=1, popular_threshold=1000, seed=1)
    switch = run_walks(g, cfg, "switch", num_workers=WORKERS)
    base = run_walks(g, cfg, "base", num_workers=WORKERS)
    ss = len(switch.metrics)
    expect = 1.5 * (cfg.l + 1)
    ok = abs(ss - expect) <= 1 and np.array_equal(switch.walks, base.walks)
    verdict("switch-supersteps", ok, f"l={cfg.l}: {ss} supersteps vs 1.5*(l+1) = {expect} (+-1); "
                                     f"base {len(base.metrics)}; walks identical to base")


# -- wall time against skew ----------------------------------------------------------------

def test_speedup_grows_with_skew(verdict):
    cfg = WalkConfig(p=0.5, q=2, l=20, r=1, popular_threshold=500, epsilon=1e-3, seed=0)
    skews, variants, reps = [2, 3, 4, 5], ["base", "cache", "approx"], 5
    graphs = {s: preset_graph("Skew", s, 14) for s in skews}
    best = {(s, v): math.inf for s in skews for v in variants}
    remote = {}
    for _ in range(reps):  # interleaved so drift hits every cell alike
        for s in skews:
            for v in variants:
                run = run_walks(graphs[s], cfg, v, num_workers=WORKERS)
                best[s, v] = min(best[s, v], run.wall_time)
                remote[s, v] = run.summary()["remote_neig_bytes"]
    speed = {v: [best[s, "base"] / best[s, v] for s in skews] for v in ("cache", "approx")}

    def rising(xs):
        return all(b >= a for a, b in zip(xs, xs[1:]))

    fewer_bytes = all(remote[s, "cache"] < remote[s, "base"] for s in skews)
    ok = rising(speed["cache"]) and rising(speed["approx"]) and fewer_bytes
    fmt = lambda xs: " ".join(f"{x:.3f}" for x in xs)  # noqa: E731
    byte_ratio = " ".join(f"{remote[s, 'cache'] / remote[s, 'base']:.3f}" for s in skews)
    verdict("skew-speedup", ok, f"S=2..5 min-of-{reps} speedup over base: cache [{fmt(speed['cache'])}], "
                                f"approx [{fmt(speed['approx'])}]; remote NEIG bytes cache/base [{byte_ratio}]")


# -- degree / frequency --------------------------------------------------------------------

def test_frequency_rises_with_degree(verdict):
    g = preset_graph("Skew", 4, 14)
    run = run_walks(g, WalkConfig(l=80, r=1, seed=2), "base", num_workers=WORKERS)
    hist = [b for b in degree_frequency_histogram(run.walks, g, 200) if b.vertices >= 10]
    means = [b.mean_frequency for b in hist]
    ok = len(means) >= 3 and all(b > a for a, b in zip(means, means[1:]))
    verdict("degree-frequency", ok, "buckets with >= 10 vertices: " +
            ", ".join(f"<={b.upper}:{b.mean_frequency:.1f}" for b in hist))


# -- message volume over supersteps --------------------------------------------------------

def test_message_volume_flattens(verdict):
    g = preset_graph("Skew", 3, 14)
    run = run_walks(g, WalkConfig(l=80, r=1, seed=4), "base", num_workers=WORKERS)
    vol = [m.message_bytes for m in run.runs[0]]
    at10, peak = vol[10], max(vol[10:81])
    ok = peak <= 1.25 * at10
    verdict("message-volume", ok, f"bytes at superstep 0 {vol[0]}, at 10 {at10}, "
                                  f"max over 10..80 {peak} ({peak / at10:.3f}x, <= 1.25x)")


# -- scaling in vertex count ---------------------------------------------------------------

def test_scaling_with_vertex_count(verdict):
    t0 = time.perf_counter()
    cfg = WalkConfig(p=0.5, q=2, l=80, r=1, seed=6)
    times = {}
    for K in (14, 16, 18, 20):
        g = rmat.generate(rmat.preset("ER", K))
        times[K] = run_walks(g, cfg, "base", num_workers=WORKERS).wall_time
        del g
    ratios = {K: (times[K] / times[14]) / 2 ** (K - 14) for K in times}
    elapsed = time.perf_counter() - t0
    ok = all(0.5 <= r <= 2.0 for r in ratios.values()) and elapsed < 1800
    verdict("er-scaling", ok, ", ".join(f"ER-{K} {times[K]:.1f}s (x{ratios[K]:.2f} of linear)" for K in times)
            + f"; {elapsed:.0f}s total (< 1800s)")


# -- FN-Approx fidelity --------------------------------------------------------------------

def test_approx_fidelity(verdict):
    g = preset_graph("Skew", 3, 14)
    cfg = WalkConfig(p=0.5, q=2, l=80, r=4, popular_threshold=1000, epsilon=1e-3, seed=8)
    approx = run_walks(g, cfg, "approx", num_workers=WORKERS)
    cache = run_walks(g, cfg, "cache", num_workers=WORKERS)
    frac = approx.summary()["approx_fraction"]
    gaps_ok = all(gap < cfg.epsilon for _, _, gap in approx.triggers)
    ha = degree_frequency_histogram(approx.walks, g, 200)
    hc = degree_frequency_histogram(cache.walks, g, 200)
    same_buckets = [a.upper for a in ha] == [c.upper for c in hc]
    dev = max(abs(a.mean_frequency - c.mean_frequency) / c.mean_frequency for a, c in zip(ha, hc))
    ok = gaps_ok and same_buckets and dev < 0.05 and len(approx.triggers) > 0
    verdict("approx-fidelity", ok, f"{len(approx.triggers)} approximated steps ({frac:.2%} of steps), "
                                   f"all gaps < {cfg.epsilon:g}: {gaps_ok}; max per-bucket deviation "
                                   f"from FN-Cache {dev:.2%} over {len(hc)} buckets (< 5%)")
