"""Finite-difference gradient suites over every differentiable primitive.

All probes run in float64 and avoid non-differentiable points by
construction: pseudo-coordinates are nudged off the spline knots, PReLU
inputs away from zero, and max reductions use continuous random values.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor, gradcheck
from .graphs import batch_graphs, build_graph, node_features, to_undirected_self_loops
from .ink import Trajectory
from .network import (ModelConfig, RsGcbBlock, SgcnModel, cos_loss, margin_ce)
from .splineconv import PseudoCoords, SplineKernel, pseudo_coords, spline_conv
from .stn import StnParams, feature_stn, input_stn


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=np.float64)


def _interior_u(rng, n, k=3, m=1, margin=0.03):
    """Points in the unit square at least ``margin`` away from every knot line."""
    knots = np.linspace(0.0, 1.0, k - m + 1)
    u = rng.uniform(margin, 1.0 - margin, size=(n, 2))
    for kn in knots:
        near = np.abs(u - kn) < margin
        u = np.where(near, u + 2 * margin, u)
    return np.clip(u, margin, 1.0 - margin)


def _toy_graph(rng, n=9, dtype=np.float64):
    pts = np.cumsum(rng.uniform(0.05, 0.12, size=(n, 2)), axis=0)
    traj = Trajectory([pts[: n // 2], pts[n // 2:]])
    return to_undirected_self_loops(build_graph(traj, dtype=dtype))


def check_linear_affine(rng, eps):
    x, w, b = _t(rng, 4, 3), _t(rng, 3, 2), _t(rng, 2)
    return gradcheck(lambda x, w, b: ad.reduce_sum(ad.linear_affine(x, w, b)), [x, w, b], eps)


def check_segment_reduce(rng, eps, mode):
    values = _t(rng, 12, 3)
    ids = rng.integers(0, 4, size=12)
    weights = Tensor(rng.normal(size=(5, 3)), dtype=np.float64)

    def fn(v):
        seg = ad.segment_reduce(v, ids, 5, mode=mode)
        return ad.reduce_sum(ad.mul(seg, weights))

    return gradcheck(fn, [values], eps)


def check_batch_norm(rng, eps):
    x, gamma, beta = _t(rng, 6, 3), _t(rng, 3), _t(rng, 3)
    gamma.data += 1.0
    state = BatchNormState(3, dtype=np.float64)
    mix = Tensor(rng.normal(size=(6, 3)), dtype=np.float64)

    def fn(x, g, b):
        return ad.reduce_sum(ad.mul(ad.batch_norm(x, g, b, state, mode="train"), mix))

    return gradcheck(fn, [x, gamma, beta], eps)


def check_prelu(rng, eps):
    x = Tensor(rng.choice([-1.0, 1.0], size=(5, 3)) * rng.uniform(0.2, 1.5, size=(5, 3)),
               requires_grad=True, dtype=np.float64)
    a = Tensor(rng.uniform(0.1, 0.5, size=3), requires_grad=True, dtype=np.float64)
    return gradcheck(lambda x, a: ad.reduce_sum(ad.prelu(x, a)), [x, a], eps)


def check_node_features(rng, eps):
    graph = _toy_graph(rng)
    coords = Tensor(graph.coords.data.copy(), requires_grad=True, dtype=np.float64)
    mix = Tensor(rng.normal(size=(graph.num_nodes, 6)), dtype=np.float64)

    def fn(c):
        return ad.reduce_sum(ad.mul(node_features(graph, coords=c), mix))

    return gradcheck(fn, [coords], eps)


def check_pseudo_coords(rng, eps):
    graph = _toy_graph(rng)
    coords = Tensor(graph.coords.data.copy(), requires_grad=True, dtype=np.float64)
    mix = Tensor(rng.normal(size=(graph.num_edges, 2)), dtype=np.float64)

    def fn(c):
        shadow = BatchedLike(graph, c)
        return ad.reduce_sum(ad.mul(pseudo_coords(shadow).u, mix))

    return gradcheck(fn, [coords], eps)


class BatchedLike:
    """Graph view with substituted coordinates (for leaf-coordinate probes)."""

    def __init__(self, graph, coords):
        self.coords = coords
        self.edges = graph.edges
        self.pred = graph.pred
        self.stroke_start = graph.stroke_start
        self.directed = graph.directed

    @property
    def num_nodes(self):
        return self.coords.shape[0]


def check_spline_conv(rng, eps, k=3, m=1):
    graph = _toy_graph(rng)
    n, e = graph.num_nodes, graph.num_edges
    feats = _t(rng, n, 3)
    weights = _t(rng, k * k, 3, 2, scale=0.5)
    kernel = SplineKernel(weights=weights, kernel_size=k, degree=m)
    u = Tensor(_interior_u(rng, e, k, m), requires_grad=True, dtype=np.float64)
    pseudo = PseudoCoords(u=u, rho=np.ones(1))
    mix = Tensor(rng.normal(size=(n, 2)), dtype=np.float64)

    def fn(f, w, uu):
        p = PseudoCoords(u=uu, rho=pseudo.rho)
        ker = SplineKernel(weights=w, kernel_size=k, degree=m)
        return ad.reduce_sum(ad.mul(spline_conv(f, graph, p, ker), mix))

    return gradcheck(fn, [feats, weights, u], eps)


def _encoder_margin(x: Tensor, params: StnParams, batch_id, num_graphs: int) -> float:
    """Distance of the probe point from the encoder's kinks and max ties."""
    margin = np.inf
    h = x
    for w, b in params.mlp:
        pre = ad.linear_affine(h, w, b)
        margin = min(margin, float(np.abs(pre.data).min()))
        h = ad.relu(pre)
        top = ad.segment_reduce(h, batch_id, num_graphs, mode="max").data
        gaps = np.abs(h.data[:, None, :] - top[None, :, :])
        gaps = np.where(gaps == 0.0, np.inf, gaps)
        margin = min(margin, float(gaps.min()))
    return margin


def _randomize(params: StnParams, rng) -> None:
    for p in params.parameters().values():
        p.data = rng.normal(0.0, 0.3, size=p.data.shape)


def check_input_stn(rng, eps):
    params = StnParams(2, 4, rng, dtype=np.float64, hidden=(6, 8, 8))
    for _ in range(50):  # probe must sit clear of relu kinks and max ties
        graph = _toy_graph(rng)
        _randomize(params, rng)
        batch_id = np.zeros(graph.num_nodes, dtype=np.int64)
        if _encoder_margin(graph.coords, params, batch_id, 1) > 50 * eps:
            break
    coords = Tensor(graph.coords.data.copy(), requires_grad=True, dtype=np.float64)
    mix = Tensor(rng.normal(size=(graph.num_nodes, 2)), dtype=np.float64)
    tensors = [coords] + list(params.parameters().values())

    def fn(c, *ps):
        return ad.reduce_sum(ad.mul(input_stn(c, params, batch_id, 1), mix))

    return gradcheck(fn, tensors, eps)


def check_feature_stn(rng, eps):
    n, d = 7, 3
    params = StnParams(d, d * d, rng, dtype=np.float64, hidden=(6, 8, 8))
    batch_id = np.r_[np.zeros(4, dtype=np.int64), np.ones(3, dtype=np.int64)]
    for _ in range(50):
        feats = _t(rng, n, d)
        _randomize(params, rng)
        if _encoder_margin(feats, params, batch_id, 2) > 50 * eps:
            break
    mix = Tensor(rng.normal(size=(n, d)), dtype=np.float64)
    tensors = [feats] + list(params.parameters().values())

    def fn(f, *ps):
        return ad.reduce_sum(ad.mul(feature_stn(f, params, batch_id, 2), mix))

    return gradcheck(fn, tensors, eps)


def check_rs_gcb(rng, eps):
    graph = _toy_graph(rng)
    n = graph.num_nodes
    config = ModelConfig(blocks=[{"type": "feat_layer"}, {"type": "head"}],
                         num_classes=2, dropout=0.0)
    block = RsGcbBlock(3, 4, config, rng, dtype=np.float64)
    feats = _t(rng, n, 3)
    pseudo = PseudoCoords(u=Tensor(_interior_u(rng, graph.num_edges), dtype=np.float64),
                          rho=np.ones(1))
    mix = Tensor(rng.normal(size=(n, 4)), dtype=np.float64)
    from .network import rs_gcb_forward

    tensors = [feats] + list(block.parameters().values())

    def fn(f, *ps):
        return ad.reduce_sum(ad.mul(rs_gcb_forward(f, graph, pseudo, block, mode="train"), mix))

    return gradcheck(fn, tensors, eps)


def check_cos_loss(rng, eps):
    emb = _t(rng, 4, 5)
    weights = _t(rng, 3, 5)
    labels = rng.integers(0, 3, size=4)
    return gradcheck(lambda e, w: cos_loss(e, w, labels, sigma=8.0, margin=0.1),
                     [emb, weights], eps)


def check_toy_model(rng, eps):
    """End-to-end loss gradient for a pool-free micro model."""
    config = ModelConfig(
        blocks=[{"type": "input_stn"}, {"type": "feat_layer"},
                {"type": "rs_gcb", "channels": 4}, {"type": "global_avg"},
                {"type": "fc", "channels": 6}, {"type": "head"}],
        num_classes=3, dropout=0.0, stn_hidden=[6, 8, 8], sigma=8.0)
    model = SgcnModel(config, rng=rng, dtype=np.float64)
    for name, p in model.named_parameters().items():
        if name.endswith("head.w") or name.endswith("head.b"):
            p.data = rng.normal(0.0, 0.2, size=p.data.shape)
    g1 = _toy_graph(rng, n=8)
    g2 = _toy_graph(rng, n=10)
    batch = batch_graphs([g1, g2])
    labels = np.array([0, 2])
    params = model.parameters()

    def fn(*ps):
        result = model.forward(batch)
        return margin_ce(result.cosine, labels, config.sigma, config.margin)

    return gradcheck(fn, params, eps)


_CHECKS = [
    ("linear_affine", check_linear_affine),
    ("segment_sum", lambda rng, eps: check_segment_reduce(rng, eps, "sum")),
    ("segment_mean", lambda rng, eps: check_segment_reduce(rng, eps, "mean")),
    ("segment_max", lambda rng, eps: check_segment_reduce(rng, eps, "max")),
    ("batch_norm", check_batch_norm),
    ("prelu", check_prelu),
    ("node_features", check_node_features),
    ("pseudo_coords", check_pseudo_coords),
    ("spline_conv", check_spline_conv),
    ("input_stn", check_input_stn),
    ("feature_stn", check_feature_stn),
    ("rs_gcb", check_rs_gcb),
    ("cos_loss", check_cos_loss),
    ("toy_model", check_toy_model),
]


def run_gradient_suite(eps: float = 1e-4, seed: int = 0) -> dict[str, float]:
    """Max relative FD error per op; values below 1e-4 (1e-3 composed) pass.

    Each check draws from its own seeded stream so they stay independent.
    """
    report = {}
    for i, (name, fn) in enumerate(_CHECKS):
        report[name] = fn(np.random.default_rng(np.random.SeedSequence([seed, i])), eps)
    return report
