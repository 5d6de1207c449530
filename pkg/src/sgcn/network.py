"""Model assembly: residual graph-conv blocks, STN placement, pooling, head.

A model is an ordered list of blocks described by a JSON-serializable
config. Forward execution threads a flow state (coordinates, edge list,
features, batch indices) through the blocks; pooling blocks coarsen the
state, the global average collapses it to one embedding per graph, and the
head scores embeddings against L2-normalized class weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import ShapeError, SgcnError
from .graphs import BatchedGraph, node_features
from .pooling import grid_cluster, pool_graph
from .splineconv import PseudoCoords, SplineKernel, init_kernel, pseudo_coords, spline_conv
from .stn import StnParams, feature_stn, input_stn, linear_init

FEATURE_DIM = 6


@dataclass
class ModelConfig:
    """Block list plus the data-prep choices a checkpoint must remember."""

    blocks: list[dict]
    num_classes: int
    sigma: float = 16.0
    margin: float = 0.0
    width_mult: float = 1.0
    kernel_size: int = 3
    degree: int = 1
    dropout: float = 0.2
    feat_mode: str = "full"          # "constant" disables node features
    interval: float = 0.02
    penup_edges: bool = True
    grad_pseudo: bool = True         # backprop through pseudo-coordinates
    stn_hidden: list[int] = field(default_factory=lambda: [64, 128, 128])

    def __post_init__(self):
        if self.num_classes < 2:
            raise SgcnError("num_classes must be at least 2")
        if self.feat_mode not in ("full", "constant"):
            raise SgcnError(f"unknown feat_mode {self.feat_mode!r}")
        kinds = [b.get("type") for b in self.blocks]
        if kinds.count("feat_layer") != 1:
            raise SgcnError("config needs exactly one feat_layer block")
        if not kinds or kinds[-1] != "head":
            raise SgcnError("the final block must be the classifier head")
        for b in self.blocks:
            if b["type"] in ("rs_gcb", "fc") and b.get("channels", 0) <= 0:
                raise SgcnError(f"block {b} needs a positive channel count")
            if b["type"] == "pool" and b.get("cell", 0) <= 0:
                raise SgcnError(f"block {b} needs a positive cell size")

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_mult)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def small_config(num_classes: int, **overrides) -> ModelConfig:
    """Compact digit-scale stack: one STN pair, two residual blocks."""
    blocks = [
        {"type": "input_stn"},
        {"type": "feat_layer"},
        {"type": "rs_gcb", "channels": 32},
        {"type": "pool", "cell": 0.05},
        {"type": "feature_stn"},
        {"type": "rs_gcb", "channels": 64},
        {"type": "pool", "cell": 0.1},
        {"type": "global_avg"},
        {"type": "fc", "channels": 128},
        {"type": "head"},
    ]
    return ModelConfig(blocks=blocks, num_classes=num_classes, **overrides)


def large_config(num_classes: int, **overrides) -> ModelConfig:
    """Deeper stack with a third residual block and a wider embedding."""
    blocks = [
        {"type": "input_stn"},
        {"type": "feat_layer"},
        {"type": "rs_gcb", "channels": 32},
        {"type": "pool", "cell": 0.05},
        {"type": "feature_stn"},
        {"type": "rs_gcb", "channels": 64},
        {"type": "pool", "cell": 0.1},
        {"type": "rs_gcb", "channels": 96},
        {"type": "pool", "cell": 0.2},
        {"type": "global_avg"},
        {"type": "fc", "channels": 160},
        {"type": "head"},
    ]
    return ModelConfig(blocks=blocks, num_classes=num_classes, **overrides)


CONFIG_PRESETS = {"small": small_config, "large": large_config}


# ---------------------------------------------------------------------------
# loss


def cosine_logits(embedding: Tensor, class_weights: Tensor) -> Tensor:
    """Cosine similarity between row-normalized embeddings and class weights."""
    if embedding.shape[1] != class_weights.shape[1]:
        raise ShapeError(
            f"embedding width {embedding.shape[1]} != class weight width {class_weights.shape[1]}"
        )
    e, w = embedding.data, class_weights.data
    ne = np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
    nw = np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-12)
    eh = e / ne
    wh = w / nw
    out = eh @ wh.T

    def backward_fn(g):
        geh = g @ wh
        gwh = g.T @ eh
        ge = (geh - (geh * eh).sum(axis=1, keepdims=True) * eh) / ne
        gw = (gwh - (gwh * wh).sum(axis=1, keepdims=True) * wh) / nw
        return (ge, gw)

    return ad.record(out, [embedding, class_weights], backward_fn)


def margin_ce(cosine: Tensor, labels, sigma: float, margin: float) -> Tensor:
    """Mean cross-entropy over sigma-scaled cosines, margin on the label class."""
    y = np.asarray(labels, dtype=np.int64)
    b, k = cosine.shape
    if len(y) != b:
        raise ShapeError(f"{len(y)} labels for {b} rows")
    if len(y) and (y.min() < 0 or y.max() >= k):
        raise SgcnError(f"label out of range [0, {k})")
    z = sigma * cosine.data.astype(np.float64)
    z[np.arange(b), y] -= sigma * margin
    z -= z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    nll = -np.log(np.maximum(p[np.arange(b), y], 1e-300))
    loss = np.asarray(nll.mean(), dtype=cosine.dtype)

    def backward_fn(g):
        grad = p.copy()
        grad[np.arange(b), y] -= 1.0
        return ((float(g.reshape(-1)[0]) * sigma / b * grad).astype(cosine.dtype),)

    return ad.record(loss, [cosine], backward_fn)


def cos_loss(embedding: Tensor, class_weights: Tensor, labels,
             sigma: float = 16.0, margin: float = 0.0) -> Tensor:
    """L2-normalized cosine cross-entropy (margin on the target class)."""
    return margin_ce(cosine_logits(embedding, class_weights), labels, sigma, margin)


# ---------------------------------------------------------------------------
# flow state and blocks


@dataclass
class _Flow:
    """What a block sees: the current graph level plus features/embedding."""

    coords: Tensor
    edges: np.ndarray
    batch_id: np.ndarray
    num_graphs: int
    pred: np.ndarray | None = None
    feats: Tensor | None = None
    pooled: Tensor | None = None
    pseudo: PseudoCoords | None = None
    cosine: Tensor | None = None

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    def edge_pseudo(self, grad_coords: bool) -> PseudoCoords:
        if self.pseudo is None:
            self.pseudo = pseudo_coords(self, grad_coords=grad_coords)
        return self.pseudo


class _Block:
    name = "block"

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def bn_states(self) -> dict[str, BatchNormState]:
        return {}

    def __call__(self, flow: _Flow, mode: str, rng) -> _Flow:
        raise NotImplementedError


class InputStnBlock(_Block):
    name = "input_stn"

    def __init__(self, rng, dtype, hidden=None):
        self.stn = StnParams(2, 4, rng, dtype, hidden=hidden)

    def parameters(self):
        return self.stn.parameters()

    def __call__(self, flow, mode, rng):
        flow.coords = input_stn(flow.coords, self.stn, flow.batch_id, flow.num_graphs)
        flow.pseudo = None
        return flow


class FeatLayerBlock(_Block):
    name = "feat_layer"

    def __init__(self, feat_mode: str, dtype):
        self.feat_mode = feat_mode
        self.dtype = dtype
        self.width = FEATURE_DIM

    def __call__(self, flow, mode, rng):
        if self.feat_mode == "constant":
            flow.feats = Tensor(np.ones((flow.num_nodes, self.width), dtype=self.dtype))
        else:
            flow.feats = node_features(flow, coords=flow.coords)
        return flow


class RsGcbBlock(_Block):
    """Residual pair of spline convolutions with BN, PReLU, and dropout."""

    name = "rs_gcb"

    def __init__(self, cin: int, cout: int, config: ModelConfig, rng, dtype):
        k, m = config.kernel_size, config.degree
        self.cin, self.cout = cin, cout
        self.p = config.dropout
        self.grad_pseudo = config.grad_pseudo
        self.conv1 = init_kernel(cin, cout, rng, k=k, m=m, dtype=dtype)
        self.conv2 = init_kernel(cout, cout, rng, k=k, m=m, dtype=dtype)
        self.bn1_gamma = Tensor(np.ones(cout, dtype=dtype), requires_grad=True)
        self.bn1_beta = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.bn2_gamma = Tensor(np.ones(cout, dtype=dtype), requires_grad=True)
        self.bn2_beta = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.bn1 = BatchNormState(cout, dtype=dtype)
        self.bn2 = BatchNormState(cout, dtype=dtype)
        self.prelu1 = Tensor(np.full(cout, 0.25, dtype=dtype), requires_grad=True)
        self.prelu2 = Tensor(np.full(cout, 0.25, dtype=dtype), requires_grad=True)
        if cin != cout:
            bound = 1.0 / math.sqrt(cin)
            self.proj = Tensor(rng.uniform(-bound, bound, size=(cin, cout)).astype(dtype),
                               requires_grad=True)
        else:
            self.proj = None

    def parameters(self):
        out = {
            "conv1.w": self.conv1.weights, "conv2.w": self.conv2.weights,
            "bn1.gamma": self.bn1_gamma, "bn1.beta": self.bn1_beta,
            "bn2.gamma": self.bn2_gamma, "bn2.beta": self.bn2_beta,
            "prelu1.a": self.prelu1, "prelu2.a": self.prelu2,
        }
        if self.proj is not None:
            out["proj.w"] = self.proj
        return out

    def bn_states(self):
        return {"bn1": self.bn1, "bn2": self.bn2}

    def __call__(self, flow, mode, rng):
        if flow.feats is None or flow.feats.shape[1] != self.cin:
            got = None if flow.feats is None else flow.feats.shape[1]
            raise ShapeError(f"rs_gcb expects {self.cin} input channels, got {got}")
        pseudo = flow.edge_pseudo(grad_coords=self.grad_pseudo)
        drop_mode = "train" if mode == "train" else "eval"
        h = spline_conv(flow.feats, flow, pseudo, self.conv1)
        h = ad.batch_norm(h, self.bn1_gamma, self.bn1_beta, self.bn1, mode=mode)
        h = ad.prelu(h, self.prelu1)
        h = ad.dropout(h, self.p, mode=drop_mode, rng=rng)
        h = spline_conv(h, flow, pseudo, self.conv2)
        h = ad.batch_norm(h, self.bn2_gamma, self.bn2_beta, self.bn2, mode=mode)
        shortcut = flow.feats if self.proj is None else ad.matmul(flow.feats, self.proj)
        flow.feats = ad.prelu(ad.add(h, shortcut), self.prelu2)
        return flow


class PoolBlock(_Block):
    name = "pool"

    def __init__(self, cell: float, feature_mode: str = "max"):
        self.cell = cell
        self.feature_mode = feature_mode

    def __call__(self, flow, mode, rng):
        assignment = grid_cluster(flow.coords, flow.batch_id, self.cell)
        coarse, feats = pool_graph(flow, flow.feats, assignment, self.feature_mode)
        return _Flow(coords=coarse.coords, edges=coarse.edges, batch_id=coarse.batch_id,
                     num_graphs=flow.num_graphs, pred=None, feats=feats)


class FeatureStnBlock(_Block):
    name = "feature_stn"

    def __init__(self, width: int, rng, dtype, hidden=None):
        self.width = width
        self.stn = StnParams(width, width * width, rng, dtype, hidden=hidden)

    def parameters(self):
        return self.stn.parameters()

    def __call__(self, flow, mode, rng):
        flow.feats = feature_stn(flow.feats, self.stn, flow.batch_id, flow.num_graphs)
        return flow


class GlobalAvgBlock(_Block):
    name = "global_avg"

    def __call__(self, flow, mode, rng):
        flow.pooled = ad.segment_reduce(flow.feats, flow.batch_id, flow.num_graphs, mode="mean")
        return flow


class FcBlock(_Block):
    name = "fc"

    def __init__(self, cin: int, cout: int, rng, dtype):
        self.w, self.b = linear_init(cin, cout, rng, dtype)

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def __call__(self, flow, mode, rng):
        if flow.pooled is None:
            raise SgcnError("fc block requires a global_avg block before it")
        flow.pooled = ad.linear_affine(flow.pooled, self.w, self.b)
        return flow


class HeadBlock(_Block):
    name = "head"

    def __init__(self, emb_dim: int, num_classes: int, rng, dtype):
        w = rng.normal(0.0, 0.1, size=(num_classes, emb_dim)).astype(dtype)
        self.class_weights = Tensor(w, requires_grad=True)

    def parameters(self):
        return {"class_weights": self.class_weights}

    def __call__(self, flow, mode, rng):
        flow.cosine = cosine_logits(flow.pooled, self.class_weights)
        return flow


@dataclass
class ForwardResult:
    logits: Tensor        # [B, num_classes] = sigma * cosine
    embedding: Tensor     # [B, emb_dim]
    cosine: Tensor        # [B, num_classes], on tape


class SgcnModel:
    """Config-driven block stack with named parameters and train/eval modes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=ad.DEFAULT_DTYPE):
        self.config = config
        self.dtype = dtype
        self.mode = "train"
        self.blocks: list[_Block] = []
        width = None
        emb = None
        for spec in config.blocks:
            kind = spec["type"]
            if kind == "input_stn":
                block = InputStnBlock(rng, dtype, hidden=config.stn_hidden)
            elif kind == "feat_layer":
                block = FeatLayerBlock(config.feat_mode, dtype)
                width = block.width
            elif kind == "rs_gcb":
                if width is None:
                    raise SgcnError("rs_gcb before feat_layer in config")
                cout = config.scaled(spec["channels"])
                block = RsGcbBlock(width, cout, config, rng, dtype)
                width = cout
            elif kind == "pool":
                block = PoolBlock(spec["cell"], spec.get("feature_mode", "max"))
            elif kind == "feature_stn":
                if width is None:
                    raise SgcnError("feature_stn before feat_layer in config")
                block = FeatureStnBlock(width, rng, dtype, hidden=config.stn_hidden)
            elif kind == "global_avg":
                block = GlobalAvgBlock()
                emb = width
            elif kind == "fc":
                if emb is None:
                    raise SgcnError("fc before global_avg in config")
                cout = config.scaled(spec["channels"])
                block = FcBlock(emb, cout, rng, dtype)
                emb = cout
            elif kind == "head":
                if emb is None:
                    raise SgcnError("head before global_avg in config")
                block = HeadBlock(emb, config.num_classes, rng, dtype)
            else:
                raise SgcnError(f"unknown block type {kind!r}")
            self.blocks.append(block)
        self.emb_dim = emb

    def train(self) -> "SgcnModel":
        self.mode = "train"
        return self

    def eval(self) -> "SgcnModel":
        self.mode = "eval"
        return self

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            for name, p in block.parameters().items():
                out[f"b{i:02d}.{block.name}.{name}"] = p
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_bn_states(self) -> dict[str, BatchNormState]:
        out = {}
        for i, block in enumerate(self.blocks):
            for name, st in block.bn_states().items():
                out[f"b{i:02d}.{block.name}.{name}"] = st
        return out

    def forward(self, batch: BatchedGraph, rng: np.random.Generator | None = None) -> ForwardResult:
        """Run all blocks; deterministic in eval mode."""
        coords = batch.coords
        if coords.dtype != self.dtype:
            coords = Tensor(coords.data.astype(self.dtype))
        flow = _Flow(coords=coords, edges=batch.edges, batch_id=batch.batch_id,
                     num_graphs=batch.num_graphs, pred=batch.pred)
        for block in self.blocks:
            flow = block(flow, self.mode, rng)
        logits = ad.scale(flow.cosine, self.config.sigma)
        return ForwardResult(logits=logits, embedding=flow.pooled, cosine=flow.cosine)


def rs_gcb_forward(feats: Tensor, graph, pseudo: PseudoCoords, block: RsGcbBlock,
                   mode: str = "eval", rng=None) -> Tensor:
    """Run one residual block on an explicit graph (test/inspection hook)."""
    flow = _Flow(coords=graph.coords, edges=graph.edges,
                 batch_id=getattr(graph, "batch_id", np.zeros(graph.num_nodes, dtype=np.int64)),
                 num_graphs=1, feats=feats, pseudo=pseudo)
    return block(flow, mode, rng).feats


def model_forward(model: SgcnModel, batch: BatchedGraph,
                  rng: np.random.Generator | None = None):
    """(logits, embedding) for a prepared batch."""
    result = model.forward(batch, rng=rng)
    return result.logits, result.embedding


def param_count(model: SgcnModel) -> dict:
    """Trainable parameter count; storage adds BN running stats at 4 bytes each."""
    num = sum(p.size for p in model.parameters())
    stats = sum(len(st.running_mean) + len(st.running_var)
                for st in model.named_bn_states().values())
    return {"num_params": int(num), "storage_bytes": int(4 * (num + stats))}
