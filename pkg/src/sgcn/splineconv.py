"""B-spline kernel spatial graph convolution.

Each edge carries a pseudo-coordinate (its normalized geometric offset) in
the unit square; the convolution kernel is a continuous surface spanned by a
Cartesian product of B-spline bases with trainable control-point weights.
A node's output is the mean of per-edge messages ``f(src) @ g(u)`` over its
incoming edges (self-loop included).

``naive_conv_oracle`` is a deliberately literal double-loop transcription
used by the tests to verify the fast path; it shares no code with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, unsorted_segment_sum
from .errors import ShapeError, SgcnError


def _knot_vector(k: int, m: int, dtype=np.float64) -> np.ndarray:
    """Clamped uniform knots: m+1 zeros, k-m-1 uniform interior, m+1 ones."""
    interior = np.arange(1, k - m) / (k - m)
    return np.concatenate([np.zeros(m + 1), interior, np.ones(m + 1)]).astype(dtype)


def _basis_1d(u: np.ndarray, k: int, m: int):
    """Nonzero B-spline bases at each u: (first control index, values, d/du).

    Cox-de Boor on the clamped uniform knot vector; every u in [0, 1]
    activates exactly m+1 consecutive controls starting at span-m.
    """
    knots = _knot_vector(k, m, dtype=u.dtype)
    nspans = k - m
    span = np.minimum((u * nspans).astype(np.int64), nspans - 1) + m

    def triangle(degree):
        n = np.ones((len(u), 1), dtype=u.dtype)
        for d in range(1, degree + 1):
            nxt = np.zeros((len(u), d + 1), dtype=u.dtype)
            saved = np.zeros(len(u), dtype=u.dtype)
            for r in range(d):
                left = u - knots[span + r - d + 1]
                right = knots[span + r + 1] - u
                denom = right + left
                temp = np.where(denom != 0, n[:, r] / np.where(denom == 0, 1.0, denom), 0.0)
                nxt[:, r] = saved + right * temp
                saved = left * temp
            nxt[:, d] = saved
            n = nxt
        return n

    values = triangle(m)
    lower = triangle(m - 1) if m >= 1 else None
    deriv = np.zeros_like(values)
    for r in range(m + 1):
        c = span - m + r
        acc = np.zeros(len(u), dtype=u.dtype)
        if r >= 1:
            d1 = knots[c + m] - knots[c]
            acc += np.where(d1 > 0, lower[:, r - 1] / np.where(d1 > 0, d1, 1.0), 0.0)
        if r <= m - 1:
            d2 = knots[c + m + 1] - knots[c + 1]
            acc -= np.where(d2 > 0, lower[:, r] / np.where(d2 > 0, d2, 1.0), 0.0)
        deriv[:, r] = m * acc
    return span - m, values, deriv


def spline_basis(u, k: int = 3, m: int = 1):
    """2D basis products: (flat control indices, weights), <= (m+1)^2 nonzeros.

    ``u`` is an array of points in the unit square; weights at each point sum
    to one. Flat index of control (i, j) is ``i*k + j``.
    """
    pts = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"spline_basis expects points [n, 2], got {pts.shape}")
    if pts.min() < 0.0 or pts.max() > 1.0:
        raise SgcnError("spline_basis input must lie in the unit square")
    idx, w, _ = _basis_2d(pts, k, m)
    return idx, w


def _basis_2d(pts: np.ndarray, k: int, m: int):
    """Products of per-dimension bases: indices [n,S], weights [n,S], d/du [n,S,2]."""
    fx, bx, dx = _basis_1d(pts[:, 0], k, m)
    fy, by, dy = _basis_1d(pts[:, 1], k, m)
    s = m + 1
    ox = np.arange(s)
    cx = fx[:, None] + ox                      # [n, s]
    cy = fy[:, None] + ox
    idx = (cx[:, :, None] * k + cy[:, None, :]).reshape(len(pts), s * s)
    w = (bx[:, :, None] * by[:, None, :]).reshape(len(pts), s * s)
    du = np.stack([
        (dx[:, :, None] * by[:, None, :]).reshape(len(pts), s * s),
        (bx[:, :, None] * dy[:, None, :]).reshape(len(pts), s * s),
    ], axis=2)
    return idx, w, du


@dataclass
class SplineKernel:
    """Trainable control-point weight slabs for one convolution."""

    weights: Tensor               # [k*k, Cin, Cout]
    kernel_size: int = 3
    degree: int = 1

    def __post_init__(self):
        k, m = self.kernel_size, self.degree
        if m not in (1, 2):
            raise SgcnError(f"spline degree must be 1 or 2, got {m}")
        if k < m + 1:
            raise SgcnError(f"kernel size {k} too small for degree {m}")
        if self.weights.ndim != 3 or self.weights.shape[0] != k * k:
            raise ShapeError(
                f"kernel weights must be [k^2, Cin, Cout] with k={k}, got {self.weights.shape}"
            )

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[2]


def init_kernel(cin: int, cout: int, rng: np.random.Generator,
                k: int = 3, m: int = 1, dtype=ad.DEFAULT_DTYPE) -> SplineKernel:
    bound = float(np.sqrt(1.0 / cin))
    w = rng.uniform(-bound, bound, size=(k * k, cin, cout)).astype(dtype)
    return SplineKernel(weights=Tensor(w, requires_grad=True), kernel_size=k, degree=m)


@dataclass
class PseudoCoords:
    """Per-edge offsets normalized into the unit square."""

    u: Tensor                     # [E, 2]
    rho: np.ndarray               # per-graph max-norm used as the normalizer


def pseudo_coords(graph, grad_coords: bool = True) -> PseudoCoords:
    """Normalized edge offsets u = clamp(offset / (2 rho) + 0.5).

    ``rho`` is the per-graph maximum offset max-norm, so the largest offset
    component touches 0 or 1 and self-loops sit at the center. With
    ``grad_coords`` the backward rule reaches the node coordinates, including
    the max path through rho (argmax edge, first on ties).
    """
    P = graph.coords
    edges = graph.edges
    src, dst = edges[:, 0], edges[:, 1]
    batch_id = getattr(graph, "batch_id", None)
    if batch_id is None:
        edge_graph = np.zeros(len(edges), dtype=np.int64)
        num_graphs = 1
    else:
        edge_graph = batch_id[dst]
        num_graphs = int(batch_id.max()) + 1 if len(batch_id) else 1

    p = P.data
    o = p[src] - p[dst]
    mag = np.abs(o).max(axis=1)
    rho = np.full(num_graphs, 1e-12, dtype=p.dtype)
    argmax_edge = np.full(num_graphs, -1, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    bounds = np.searchsorted(edge_graph[order], np.arange(num_graphs + 1))
    for g in range(num_graphs):
        block = order[bounds[g]:bounds[g + 1]]
        if len(block) == 0:
            continue
        local = int(np.argmax(mag[block]))
        if mag[block[local]] > 1e-12:
            rho[g] = mag[block[local]]
            argmax_edge[g] = block[local]
    argmax_axis = np.zeros(num_graphs, dtype=np.int64)
    valid = argmax_edge >= 0
    argmax_axis[valid] = np.argmax(np.abs(o[argmax_edge[valid]]), axis=1)

    denom = 2.0 * rho[edge_graph]
    raw = o / denom[:, None] + 0.5
    u = np.clip(raw, 0.0, 1.0)

    def backward_fn(gu):
        if not grad_coords:
            return (None,)
        go = gu / denom[:, None]
        # rho path: every edge's u depends on its graph's max offset component
        grho_e = (gu * (-o) / (denom * denom)[:, None] * 2.0).sum(axis=1)
        grho = unsorted_segment_sum(grho_e, edge_graph, num_graphs)
        for g in np.flatnonzero(valid):
            e, a = argmax_edge[g], argmax_axis[g]
            go[e, a] += grho[g] * np.sign(o[e, a])
        gp = unsorted_segment_sum(go, src, len(p)) - unsorted_segment_sum(go, dst, len(p))
        return (gp,)

    return PseudoCoords(u=ad.record(u, [P], backward_fn), rho=rho)


def spline_conv(feats: Tensor, graph, pseudo: PseudoCoords, kernel: SplineKernel) -> Tensor:
    """Mean-aggregated spline-kernel convolution over incoming edges.

    Factorizes through per-control transformed features (one dense matmul per
    control point), then gathers the few nonzero basis terms per edge.
    Gradients reach the features, the kernel weights, and the
    pseudo-coordinates.
    """
    edges = graph.edges
    if feats.shape[0] != graph.num_nodes:
        raise ShapeError(f"features rows {feats.shape[0]} != nodes {graph.num_nodes}")
    if feats.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"feature width {feats.shape[1]} != kernel in_channels {kernel.in_channels}"
        )
    if pseudo.u.shape[0] != len(edges):
        raise ShapeError(f"pseudo coords rows {pseudo.u.shape[0]} != edges {len(edges)}")
    src, dst = edges[:, 0], edges[:, 1]
    n = graph.num_nodes
    deg = np.bincount(dst, minlength=n)
    if (deg == 0).any():
        raise SgcnError("every node needs at least one incoming edge (add self-loops)")

    k, m = kernel.kernel_size, kernel.degree
    idx, basis, dbasis = _basis_2d(pseudo.u.data.astype(np.float64), k, m)
    basis = basis.astype(feats.dtype)
    dbasis = dbasis.astype(feats.dtype)
    W = kernel.weights.data
    F = feats.data

    per_control = np.tensordot(F, W, axes=([1], [1]))      # [N, k^2, Cout]
    gathered = per_control[src[:, None], idx]              # [E, S, Cout]
    msg = (gathered * basis[:, :, None]).sum(axis=1)       # [E, Cout]
    inv_deg = (1.0 / deg).astype(feats.dtype)
    out = unsorted_segment_sum(msg, dst, n) * inv_deg[:, None]

    def backward_fn(g):
        gmsg = (g * inv_deg[:, None])[dst]                  # [E, Cout]
        contrib = gmsg[:, None, :] * basis[:, :, None]      # [E, S, Cout]
        keys = (src[:, None] * (k * k) + idx).reshape(-1)
        flat = unsorted_segment_sum(contrib.reshape(-1, g.shape[1]), keys, n * k * k)
        g_per_control = flat.reshape(n, k * k, g.shape[1])
        gF = np.einsum("nqc,qdc->nd", g_per_control, W, optimize=True)
        gW = np.einsum("nd,nqc->qdc", F, g_per_control, optimize=True)
        gb = (gmsg[:, None, :] * gathered).sum(axis=2)      # [E, S]
        gU = (gb[:, :, None] * dbasis).sum(axis=1)          # [E, 2]
        return (gF, gW, gU)

    return ad.record(out, [feats, kernel.weights, pseudo.u], backward_fn)


# ---------------------------------------------------------------------------
# exhaustive oracle (test reference, small instances only)


def _bspline_scalar(c: int, u: float, k: int, m: int) -> float:
    """Cox-de Boor recursion for one control; independent of the fast path."""
    t = _knot_vector(k, m)

    def basis(i, d):
        if d == 0:
            if t[i] <= u < t[i + 1]:
                return 1.0
            if u == t[-1] and t[i] < t[i + 1] == t[-1]:
                return 1.0
            return 0.0
        left = 0.0
        if t[i + d] > t[i]:
            left = (u - t[i]) / (t[i + d] - t[i]) * basis(i, d - 1)
        right = 0.0
        if t[i + d + 1] > t[i + 1]:
            right = (t[i + d + 1] - u) / (t[i + d + 1] - t[i + 1]) * basis(i + 1, d - 1)
        return left + right

    return basis(c, m)


def naive_conv_oracle(feats: Tensor, graph, pseudo: PseudoCoords, kernel: SplineKernel) -> np.ndarray:
    """Literal transcription: dense kernel matrix per edge, double loop."""
    k, m = kernel.kernel_size, kernel.degree
    W = kernel.weights.data.astype(np.float64)
    F = feats.data.astype(np.float64)
    U = pseudo.u.data.astype(np.float64)
    n = graph.num_nodes
    out = np.zeros((n, kernel.out_channels), dtype=np.float64)
    for i in range(n):
        incoming = [e for e in range(len(graph.edges)) if graph.edges[e, 1] == i]
        acc = np.zeros(kernel.out_channels, dtype=np.float64)
        for e in incoming:
            j = graph.edges[e, 0]
            g_u = np.zeros((kernel.in_channels, kernel.out_channels), dtype=np.float64)
            for cx in range(k):
                for cy in range(k):
                    b = _bspline_scalar(cx, U[e, 0], k, m) * _bspline_scalar(cy, U[e, 1], k, m)
                    g_u += W[cx * k + cy] * b
            acc += F[j] @ g_u
        out[i] = acc / max(len(incoming), 1)
    return out
