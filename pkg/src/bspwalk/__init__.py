"""Second-order random walks (Fast-Node2Vec family) on a bulk-synchronous vertex engine."""
from bspwalk.algorithms import VARIANTS, WalkRun, run_rounds, run_walks
from bspwalk.engine import Engine, Message, MsgKind, SuperstepMetrics
from bspwalk.graph import Graph, PartitionedGraph, estimate_transprob_memory, load_edge_list, partition
from bspwalk.rmat import RmatParams, generate, preset
from bspwalk.walk import WalkConfig, approx_bounds, build_alias, oracle_walks

__all__ = [
    "VARIANTS", "WalkRun", "run_rounds", "run_walks",
    "Engine", "Message", "MsgKind", "SuperstepMetrics",
    "Graph", "PartitionedGraph", "estimate_transprob_memory", "load_edge_list", "partition",
    "RmatParams", "generate", "preset",
    "WalkConfig", "approx_bounds", "build_alias", "oracle_walks",
]
