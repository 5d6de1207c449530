"""Geometric character graphs: construction, node features, batching, cost model.

A trajectory becomes a directed graph with one node per resampled point and
edges following writing order. Node features are computed on the autodiff
tape so gradients reach the coordinates (and through them, any upstream
coordinate transform).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, ShapeError, SgcnError
from .ink import Trajectory


@dataclass
class CharGraph:
    """Graph of one character: coordinates, edges (src, dst), stroke structure.

    ``pred`` maps each node to its trajectory predecessor (itself at stroke
    starts); it survives the undirected conversion so features can still be
    computed afterwards.
    """

    coords: Tensor                # [N, 2]
    edges: np.ndarray             # [E, 2] int64 rows (src, dst): src -> dst
    stroke_start: np.ndarray      # [N] bool
    pred: np.ndarray              # [N] int64
    directed: bool

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.edges)


@dataclass
class BatchedGraph:
    """Disjoint union of graphs with node-index offsets applied."""

    coords: Tensor
    edges: np.ndarray
    stroke_start: np.ndarray
    pred: np.ndarray
    batch_id: np.ndarray          # [N] graph index per node, non-decreasing
    graph_sizes: list[int]
    directed: bool = False

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.graph_sizes)


def build_graph(traj: Trajectory, penup_edges: bool = True, dtype=ad.DEFAULT_DTYPE) -> CharGraph:
    """Directed graph over resampled points in writing order.

    With ``penup_edges`` each stroke's last point also connects to the next
    stroke's first point, leaving a single chain (and a single stroke start).
    """
    if not traj.strokes:
        raise DataError("empty trajectory")
    coords = np.concatenate(traj.strokes, axis=0).astype(dtype)
    n = len(coords)
    starts = np.zeros(n, dtype=bool)
    pred = np.arange(n, dtype=np.int64)
    src, dst = [], []
    offset = 0
    for k, stroke in enumerate(traj.strokes):
        m = len(stroke)
        if m > 1:
            s = np.arange(offset, offset + m - 1)
            src.append(s)
            dst.append(s + 1)
            pred[offset + 1: offset + m] = np.arange(offset, offset + m - 1)
        if penup_edges and k > 0:
            src.append(np.array([offset - 1]))
            dst.append(np.array([offset]))
            pred[offset] = offset - 1
        else:
            starts[offset] = True
        offset += m
    edges = (np.stack([np.concatenate(src), np.concatenate(dst)], axis=1)
             if src else np.zeros((0, 2), dtype=np.int64))
    return CharGraph(coords=Tensor(coords), edges=edges.astype(np.int64),
                     stroke_start=starts, pred=pred, directed=True)


def to_undirected_self_loops(graph: CharGraph) -> CharGraph:
    """Close the edge set under reversal, add one self-loop per node, dedup."""
    n = graph.num_nodes
    fwd = graph.edges
    rev = fwd[:, ::-1]
    loops = np.stack([np.arange(n)] * 2, axis=1)
    combined = np.concatenate([fwd, rev, loops], axis=0)
    keys = combined[:, 0] * n + combined[:, 1]
    _, first = np.unique(keys, return_index=True)
    edges = combined[np.sort(first)]
    if len(edges) > 4 * n:
        raise SgcnError(f"graph too dense: {len(edges)} edges for {n} nodes")
    return CharGraph(coords=graph.coords, edges=edges, stroke_start=graph.stroke_start,
                     pred=graph.pred, directed=False)


def node_features(graph, coords: Tensor | None = None) -> Tensor:
    """Per-node features [x, y, dx, dy, sin, cos] from the predecessor structure.

    Stroke starts and zero-length offsets get zero temporal features. The
    offsets and angles are recorded on the tape, so gradients flow back into
    the coordinates.
    """
    if graph.pred is None:
        raise SgcnError("node_features needs the predecessor structure")
    P = coords if coords is not None else graph.coords
    pred = graph.pred
    p = P.data
    delta = p - p[pred]
    length = np.sqrt((delta * delta).sum(axis=1))
    live = length > 1e-12           # stroke starts have pred == self, length 0
    safe = np.maximum(length, 1e-12)
    sincos = np.zeros_like(delta)
    sincos[live, 0] = delta[live, 1] / safe[live]
    sincos[live, 1] = delta[live, 0] / safe[live]
    delta = np.where(live[:, None], delta, 0.0)
    out = np.concatenate([p, delta, sincos[:, 0:1], sincos[:, 1:2]], axis=1)

    def backward_fn(g):
        gp = g[:, 0:2].copy()
        gdelta = np.where(live[:, None], g[:, 2:4], 0.0)
        # sin = dy/l, cos = dx/l with l = |delta|
        gsin = np.where(live, g[:, 4], 0.0)
        gcos = np.where(live, g[:, 5], 0.0)
        dx, dy = delta[:, 0], delta[:, 1]
        l3 = safe ** 3
        gdelta[:, 0] += gsin * (-dx * dy / l3) + gcos * (dy * dy / l3)
        gdelta[:, 1] += gsin * (dx * dx / l3) + gcos * (-dx * dy / l3)
        gp += gdelta
        np.add.at(gp, pred, -gdelta)
        return (gp,)

    return ad.record(out.astype(p.dtype), [P], backward_fn)


def batch_graphs(graphs: list[CharGraph], features: list[Tensor] | None = None):
    """Disjoint union with index offsets; inputs must agree on directedness."""
    if not graphs:
        raise DataError("cannot batch zero graphs")
    directed = {g.directed for g in graphs}
    if len(directed) > 1:
        raise SgcnError("cannot batch a mix of directed and undirected graphs")
    sizes = [g.num_nodes for g in graphs]
    offsets = np.cumsum([0] + sizes[:-1])
    coords = np.concatenate([g.coords.data for g in graphs], axis=0)
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)], axis=0)
    starts = np.concatenate([g.stroke_start for g in graphs])
    pred = np.concatenate([g.pred + off for g, off in zip(graphs, offsets)])
    batch_id = np.repeat(np.arange(len(graphs)), sizes)
    batch = BatchedGraph(coords=Tensor(coords), edges=edges, stroke_start=starts,
                         pred=pred, batch_id=batch_id, graph_sizes=sizes,
                         directed=directed.pop())
    if features is None:
        return batch
    width = {f.shape[1] for f in features}
    if len(width) > 1:
        raise ShapeError(f"feature widths differ across graphs: {sorted(width)}")
    feats = Tensor(np.concatenate([f.data for f in features], axis=0))
    return batch, feats


@dataclass
class CostReport:
    """Operation-count comparison of image vs graph convolution."""

    image_cost: float
    graph_cost: float
    ratio: float
    height: int
    width: int
    num_nodes: int
    avg_edges: float

    def to_dict(self) -> dict:
        return {
            "image_cost": self.image_cost,
            "graph_cost": self.graph_cost,
            "ratio": self.ratio,
            "H": self.height,
            "W": self.width,
            "num_nodes": self.num_nodes,
            "avg_edges": self.avg_edges,
        }


def conv_cost_ratio(height: int, width: int, num_nodes: int, avg_edges: float) -> CostReport:
    """Single-channel convolution cost: H*W*9 on an image vs N*|avg edges| on a graph."""
    if height <= 0 or width <= 0 or num_nodes <= 0 or avg_edges <= 0:
        raise SgcnError("all cost arguments must be positive")
    image_cost = float(height * width * 9)
    graph_cost = float(num_nodes * avg_edges)
    return CostReport(image_cost=image_cost, graph_cost=graph_cost,
                      ratio=image_cost / graph_cost, height=height, width=width,
                      num_nodes=num_nodes, avg_edges=avg_edges)
