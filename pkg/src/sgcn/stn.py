"""Spatial transformer networks for coordinates and for intermediate features.

Both variants encode their input with a shared-weight MLP, max-pool over the
nodes of each graph (making the predicted transform permutation-invariant),
and regress transform parameters from a zero-initialized head, so each STN
is exactly the identity at initialization.

The input STN is constrained to a similarity transform (rotation, scale,
translation); the feature STN predicts an unconstrained d x d matrix that is
added to the identity.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, unsorted_segment_sum
from .errors import ShapeError


def linear_init(fan_in: int, fan_out: int, rng: np.random.Generator,
                dtype=ad.DEFAULT_DTYPE, zero: bool = False):
    if zero:
        w = np.zeros((fan_in, fan_out), dtype=dtype)
        b = np.zeros(fan_out, dtype=dtype)
    else:
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = rng.uniform(-bound, bound, size=fan_out).astype(dtype)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


class StnParams:
    """Three-layer encoder MLP plus a zero-initialized transform head."""

    HIDDEN = (64, 128, 128)

    def __init__(self, in_dim: int, head_dim: int, rng: np.random.Generator,
                 dtype=ad.DEFAULT_DTYPE, hidden=None):
        self.in_dim = in_dim
        self.head_dim = head_dim
        sizes = (in_dim,) + tuple(hidden if hidden is not None else self.HIDDEN)
        self.mlp = [linear_init(sizes[i], sizes[i + 1], rng, dtype)
                    for i in range(len(sizes) - 1)]
        self.head = linear_init(sizes[-1], head_dim, rng, dtype, zero=True)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.mlp):
            out[f"mlp{i}.w"] = w
            out[f"mlp{i}.b"] = b
        out["head.w"], out["head.b"] = self.head
        return out

    def encode(self, x: Tensor, batch_id: np.ndarray, num_graphs: int) -> Tensor:
        h = x
        for w, b in self.mlp:
            h = ad.relu(ad.linear_affine(h, w, b))
        pooled = ad.segment_reduce(h, batch_id, num_graphs, mode="max")
        return ad.linear_affine(pooled, *self.head)


def apply_similarity(coords: Tensor, theta: Tensor, s: Tensor, t: Tensor,
                     batch_id: np.ndarray) -> Tensor:
    """Rotate by theta, scale by s, translate by t, per graph."""
    if coords.shape[1] != 2 or t.shape[1] != 2:
        raise ShapeError("apply_similarity expects [N,2] coords and [B,2] translations")
    th = theta.data.reshape(-1)[batch_id]
    sc = s.data.reshape(-1)[batch_id]
    ct, st = np.cos(th), np.sin(th)
    x, y = coords.data[:, 0], coords.data[:, 1]
    out = np.stack([sc * (ct * x - st * y) + t.data[batch_id, 0],
                    sc * (st * x + ct * y) + t.data[batch_id, 1]], axis=1)
    num_graphs = theta.data.size

    def backward_fn(g):
        gx, gy = g[:, 0], g[:, 1]
        gp = np.stack([sc * (ct * gx + st * gy),
                       sc * (-st * gx + ct * gy)], axis=1)
        per_node_th = sc * (gx * (-st * x - ct * y) + gy * (ct * x - st * y))
        per_node_s = gx * (ct * x - st * y) + gy * (st * x + ct * y)
        gtheta = unsorted_segment_sum(per_node_th, batch_id, num_graphs).reshape(theta.shape)
        gs = unsorted_segment_sum(per_node_s, batch_id, num_graphs).reshape(s.shape)
        gt = unsorted_segment_sum(g, batch_id, num_graphs)
        return (gp, gtheta, gs, gt)

    return ad.record(out.astype(coords.dtype), [coords, theta, s, t], backward_fn)


def rowwise_matmul(feats: Tensor, mats: Tensor, batch_id: np.ndarray) -> Tensor:
    """out[n] = feats[n] @ mats[batch_id[n]] for [N,d] features, [B,d,d] matrices."""
    d = feats.shape[1]
    if mats.shape[1:] != (d, d):
        raise ShapeError(f"transform matrices {mats.shape} do not match feature width {d}")
    per_node = mats.data[batch_id]
    out = np.einsum("nd,ndc->nc", feats.data, per_node, optimize=True)
    num_graphs = mats.shape[0]

    def backward_fn(g):
        gf = np.einsum("nc,ndc->nd", g, per_node, optimize=True)
        outer = (feats.data[:, :, None] * g[:, None, :]).reshape(len(g), d * d)
        gm = unsorted_segment_sum(outer, batch_id, num_graphs).reshape(mats.shape)
        return (gf, gm)

    return ad.record(out, [feats, mats], backward_fn)


def add_identity(mats: Tensor) -> Tensor:
    d = mats.shape[-1]
    eye = np.eye(d, dtype=mats.dtype)
    return ad.record(mats.data + eye, [mats], lambda g: (g,))


def input_stn(coords: Tensor, params: StnParams, batch_id: np.ndarray,
              num_graphs: int) -> Tensor:
    """Align coordinates with a predicted similarity transform.

    The head output (raw angle, raw scale, tx, ty) is squashed so the angle
    stays in (-pi, pi) and the scale in [1/e, e]; zeros give the identity.
    """
    head = params.encode(coords, batch_id, num_graphs)
    theta = ad.scale(ad.tanh(ad.slice_cols(head, 0, 1)), math.pi)
    s = ad.exp(ad.tanh(ad.slice_cols(head, 1, 2)))
    t = ad.slice_cols(head, 2, 4)
    return apply_similarity(coords, theta, s, t, batch_id)


def feature_stn(feats: Tensor, params: StnParams, batch_id: np.ndarray,
                num_graphs: int) -> Tensor:
    """Transform features by a predicted unconstrained matrix plus identity."""
    d = feats.shape[1]
    if params.head_dim != d * d:
        raise ShapeError(f"feature_stn head width {params.head_dim} != d^2 = {d * d}")
    head = params.encode(feats, batch_id, num_graphs)
    mats = add_identity(ad.reshape(head, (num_graphs, d, d)))
    return rowwise_matmul(feats, mats, batch_id)


def similarity_matrix(theta: float, s: float, tx: float, ty: float) -> np.ndarray:
    """The 2x3 matrix of the constrained transform (reporting/tests)."""
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([[s * ct, -s * st, tx], [s * st, s * ct, ty]])
