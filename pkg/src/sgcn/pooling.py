"""Cluster-based graph coarsening on a regular coordinate grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import SgcnError
from .graphs import BatchedGraph


@dataclass
class ClusterAssignment:
    """Dense per-node cluster ids, assigned in first-occurrence order."""

    cluster_id: np.ndarray
    num_clusters: int
    cell_size: float


def grid_cluster(coords: Tensor, batch_id: np.ndarray | None, cell_size: float) -> ClusterAssignment:
    """Group nodes sharing a (graph, grid cell) pair.

    Cell index is floor(coord / cell_size) per axis; nodes from different
    graphs of a batch never share a cluster.
    """
    if cell_size <= 0:
        raise SgcnError(f"cell_size must be positive, got {cell_size}")
    p = coords.data
    n = len(p)
    if batch_id is None:
        batch_id = np.zeros(n, dtype=np.int64)
    cells = np.floor(p / cell_size).astype(np.int64)
    cells -= cells.min(axis=0) if n else 0
    spans = cells.max(axis=0) + 1 if n else np.array([1, 1])
    keys = (batch_id * spans[0] + cells[:, 0]) * spans[1] + cells[:, 1]
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    ids = rank[inverse]
    return ClusterAssignment(cluster_id=ids.astype(np.int64),
                             num_clusters=len(first), cell_size=cell_size)


def pool_graph(graph, feats: Tensor, assignment: ClusterAssignment,
               feature_mode: str = "max"):
    """Collapse clusters into coarse nodes.

    Coarse coordinates are member means; features are member max (default)
    or mean; inter-cluster edges are deduplicated and one self-loop is added
    per cluster. Both reductions stay on the tape.
    """
    if feature_mode not in ("max", "mean"):
        raise SgcnError(f"unknown feature_mode {feature_mode!r}")
    ids = assignment.cluster_id
    nc = assignment.num_clusters
    if len(ids) != graph.num_nodes:
        raise SgcnError("cluster assignment does not match the graph")

    coarse_coords = ad.segment_reduce(graph.coords, ids, nc, mode="mean")
    coarse_feats = ad.segment_reduce(feats, ids, nc, mode=feature_mode)

    mapped = ids[graph.edges]
    cross = mapped[mapped[:, 0] != mapped[:, 1]]
    if len(cross):
        keys = cross[:, 0] * nc + cross[:, 1]
        _, first = np.unique(keys, return_index=True)
        cross = cross[np.sort(first)]
    loops = np.stack([np.arange(nc)] * 2, axis=1)
    edges = np.concatenate([cross, loops], axis=0).astype(np.int64)

    batch_id = getattr(graph, "batch_id", None)
    if batch_id is None:
        batch_id = np.zeros(graph.num_nodes, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    firsts = order[np.searchsorted(ids[order], np.arange(nc))]
    coarse_batch = batch_id[firsts]
    sizes = np.bincount(coarse_batch, minlength=int(coarse_batch.max()) + 1 if nc else 1)

    coarse = BatchedGraph(coords=coarse_coords, edges=edges,
                          stroke_start=None, pred=None,
                          batch_id=coarse_batch, graph_sizes=[int(s) for s in sizes],
                          directed=False)
    return coarse, coarse_feats
