"""Training loop: minibatch ADAM, plateau LR decay, checkpoints, metrics CSV."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .checkpoint import CheckpointData, json_array, read_checkpoint, write_checkpoint
from .errors import CheckpointError, DataError, SgcnError
from .graphs import BatchedGraph, CharGraph, batch_graphs, build_graph, to_undirected_self_loops
from .ink import Dataset, normalize, resample
from .network import ModelConfig, SgcnModel, margin_ce
from .optim import AdamState, adam_step, zero_gradients


def worker_count() -> int:
    """Parallel worker budget, capped by the SGCN_NUM_WORKERS env var."""
    cap = os.environ.get("SGCN_NUM_WORKERS")
    n = os.cpu_count() or 1
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise SgcnError(f"SGCN_NUM_WORKERS must be an integer, got {cap!r}")
    return n


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.002
    decay: float = 0.1
    patience: int = 3
    min_lr: float = 1e-5
    max_epochs: int = 30
    seed: int = 0
    eval_fraction: float = 0.2
    improve_tol: float = 1e-4
    state_path: str | None = None      # rolling checkpoint for resumption
    topk: int = 5
    refresh_samples: int = 512         # per-epoch BN stat re-estimation budget

    def __post_init__(self):
        if self.batch_size < 1:
            raise SgcnError("batch_size must be at least 1")
        if not 0.0 < self.decay < 1.0:
            raise SgcnError("decay factor must lie in (0, 1)")


@dataclass
class Metrics:
    top1: float
    topk: float
    loss: float
    seconds: float

    def to_dict(self) -> dict:
        return {"top1": self.top1, "topk": self.topk, "loss": self.loss,
                "seconds": self.seconds}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    top1: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    model: SgcnModel
    history: list[EpochRecord]
    best_accuracy: float


def metrics_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,loss,top1,lr,seconds"]
    for r in history:
        lines.append(f"{r.epoch},{r.loss!r},{r.top1!r},{r.lr!r},{r.seconds!r}")
    return "\n".join(lines) + "\n"


def lr_schedule_step(accuracies: list[float], lr: float, patience: int = 3,
                     factor: float = 0.1, min_lr: float = 1e-5,
                     tol: float = 1e-4) -> float:
    """Decay lr when the last ``patience`` evals failed to improve on the best before them."""
    if not accuracies:
        raise SgcnError("lr_schedule_step needs a non-empty history")
    if len(accuracies) <= patience:
        return lr
    best_before = max(accuracies[:-patience])
    if max(accuracies[-patience:]) > best_before + tol:
        return lr
    return max(lr * factor, min_lr)


# ---------------------------------------------------------------------------
# data preparation


def prepare_graph(trajectory, config: ModelConfig, dtype=ad.DEFAULT_DTYPE) -> CharGraph:
    """normalize -> resample -> directed graph -> undirected with self-loops."""
    traj = resample(normalize(trajectory), config.interval)
    return to_undirected_self_loops(build_graph(traj, penup_edges=config.penup_edges, dtype=dtype))


def prepare_dataset(dataset: Dataset, config: ModelConfig, dtype=ad.DEFAULT_DTYPE):
    """Preprocess every sample once; returns (graphs, labels array)."""
    labels = np.array([s.label for s in dataset.samples], dtype=np.int64)
    workers = worker_count()
    if workers > 1 and len(dataset.samples) > 64:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            graphs = list(pool.map(lambda s: prepare_graph(s.trajectory, config, dtype),
                                   dataset.samples))
    else:
        graphs = [prepare_graph(s.trajectory, config, dtype) for s in dataset.samples]
    return graphs, labels


def split_dataset(dataset: Dataset, eval_fraction: float, seed: int):
    """Deterministic shuffled split into (train, eval) datasets.

    A positive fraction always yields at least one eval sample while leaving
    at least one training sample.
    """
    if not dataset.samples:
        raise DataError("empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5917]))
    order = rng.permutation(len(dataset.samples))
    n_eval = int(round(len(order) * eval_fraction))
    if eval_fraction > 0 and len(order) > 1:
        n_eval = min(max(1, n_eval), len(order) - 1)
    eval_idx = set(order[:n_eval].tolist())
    train = [s for i, s in enumerate(dataset.samples) if i not in eval_idx]
    held = [s for i, s in enumerate(dataset.samples) if i in eval_idx]
    mk = lambda samples: Dataset(samples=samples, num_classes=dataset.num_classes,
                                 class_names=list(dataset.class_names))
    return mk(train), mk(held)


def _batches(n: int, batch_size: int, order=None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def evaluate_graphs(model: SgcnModel, graphs: list[CharGraph], labels: np.ndarray,
                    batch_size: int = 128, topk: int = 5,
                    clock=time.perf_counter) -> Metrics:
    """Deterministic eval-mode accuracy/loss over preprocessed graphs."""
    prior = model.mode
    model.eval()
    t0 = clock()
    correct1 = 0
    correctk = 0
    losses = []
    for chunk in _batches(len(graphs), batch_size):
        batch = batch_graphs([graphs[i] for i in chunk])
        result = model.forward(batch)
        y = labels[chunk]
        logits = result.logits.data
        pred = np.argmax(logits, axis=1)  # first index on ties
        correct1 += int((pred == y).sum())
        k = min(topk, logits.shape[1])
        ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
        correctk += int((ranked == y[:, None]).any(axis=1).sum())
        loss = margin_ce(result.cosine, y, model.config.sigma, model.config.margin)
        losses.append(loss.item() * len(chunk))
    model.mode = prior
    n = max(len(graphs), 1)
    return Metrics(top1=correct1 / n, topk=correctk / n,
                   loss=sum(losses) / n, seconds=clock() - t0)


def evaluate(model: SgcnModel, dataset: Dataset, batch_size: int = 128,
             topk: int = 5) -> Metrics:
    graphs, labels = prepare_dataset(dataset, model.config, dtype=model.dtype)
    return evaluate_graphs(model, graphs, labels, batch_size=batch_size, topk=topk)


def refresh_bn_stats(model: SgcnModel, graphs: list[CharGraph],
                     batch_size: int = 128) -> None:
    """Re-estimate BN running statistics under the current parameters.

    The EMA kept during training lags the fast-moving parameters badly at
    desk scale (few batches per epoch), which wrecks eval-mode accuracy; an
    exact pooled re-estimation over a fixed sample fixes that and is
    deterministic (no dropout, fixed batch order).
    """
    states = model.named_bn_states().values()
    for st in states:
        st.begin_refresh()
    prior = model.mode
    model.mode = "refresh"
    for chunk in _batches(len(graphs), batch_size):
        model.forward(batch_graphs([graphs[i] for i in chunk]))
    model.mode = prior
    for st in states:
        st.finish_refresh()


# ---------------------------------------------------------------------------
# training


def _bn_snapshot(model: SgcnModel) -> dict[str, np.ndarray]:
    out = {}
    for name, st in model.named_bn_states().items():
        out[name + "/mean"] = st.running_mean.copy()
        out[name + "/var"] = st.running_var.copy()
    return out


def _snapshot(model: SgcnModel) -> dict[str, np.ndarray]:
    """Eval-defining state: parameters plus BN running statistics."""
    out = {f"param/{name}": p.data.copy() for name, p in model.named_parameters().items()}
    for name, arr in _bn_snapshot(model).items():
        out[f"bn/{name}"] = arr
    return out


def _restore_snapshot(model: SgcnModel, snap: dict[str, np.ndarray], what: str) -> None:
    _restore_params(model, {k[6:]: v for k, v in snap.items() if k.startswith("param/")}, what)
    _restore_bn(model, {k[3:]: v for k, v in snap.items() if k.startswith("bn/")})


def _restore_params(model: SgcnModel, arrays: dict[str, np.ndarray], what: str) -> None:
    params = model.named_parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint is missing {what} arrays: {sorted(missing)[:3]} ...")
    for name, p in params.items():
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{what} {name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.astype(p.data.dtype).copy()


def _restore_bn(model: SgcnModel, arrays: dict[str, np.ndarray]) -> None:
    for name, st in model.named_bn_states().items():
        if name + "/mean" in arrays:
            st.running_mean = arrays[name + "/mean"].astype(st.running_mean.dtype).copy()
            st.running_var = arrays[name + "/var"].astype(st.running_var.dtype).copy()


def checkpoint_save(path, model: SgcnModel, optimizer: AdamState | None = None,
                    rng: np.random.Generator | None = None,
                    history: list[EpochRecord] | None = None,
                    extra: dict | None = None,
                    best_params: dict[str, np.ndarray] | None = None) -> None:
    """Serialize model (and optionally optimizer/rng/history) to one file."""
    sections: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters().items():
        sections[f"param/{name}"] = p.data
    for name, arr in _bn_snapshot(model).items():
        sections[f"bn/{name}"] = arr
    if optimizer is not None:
        names = list(model.named_parameters())
        for name, m, v in zip(names, optimizer.m, optimizer.v):
            sections[f"opt/m/{name}"] = m
            sections[f"opt/v/{name}"] = v
        sections["opt/meta"] = json_array({
            "step": optimizer.step, "lr": optimizer.lr, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "eps": optimizer.eps,
        })
    if rng is not None:
        sections["rng"] = json_array(rng.bit_generator.state)
    if history is not None:
        sections["history"] = json_array([vars(r) for r in history])
    if extra is not None:
        sections["meta"] = json_array(extra)
    if best_params is not None:
        for name, arr in best_params.items():
            sections[f"best/{name}"] = arr
    write_checkpoint(path, model.config.to_json(), sections)


def checkpoint_load(path, dtype=ad.DEFAULT_DTYPE):
    """Rebuild the model stored at ``path``; returns (model, raw checkpoint)."""
    data = read_checkpoint(path)
    config = ModelConfig.from_json(data.config_json)
    model = SgcnModel(config, rng=np.random.default_rng(0), dtype=dtype)
    _restore_params(model, data.group("param/"), "parameter")
    _restore_bn(model, data.group("bn/"))
    model.eval()
    return model, data


def _restore_optimizer(model: SgcnModel, data: CheckpointData) -> AdamState | None:
    meta = data.json_section("opt/meta")
    if meta is None:
        return None
    opt = AdamState(model.parameters(), lr=meta["lr"], beta1=meta["beta1"],
                    beta2=meta["beta2"], eps=meta["eps"])
    opt.step = int(meta["step"])
    ms = data.group("opt/m/")
    vs = data.group("opt/v/")
    for i, name in enumerate(model.named_parameters()):
        opt.m[i] = ms[name].astype(opt.m[i].dtype).copy()
        opt.v[i] = vs[name].astype(opt.v[i].dtype).copy()
    return opt


def train(model: SgcnModel, dataset: Dataset, config: TrainConfig,
          eval_dataset: Dataset | None = None, resume_from=None,
          clock=time.perf_counter) -> TrainResult:
    """Train with shuffled minibatches, plateau decay, and best-model retention.

    With ``config.state_path`` a rolling checkpoint is written after every
    epoch; passing it back as ``resume_from`` continues a run so that the
    combined history is identical to an uninterrupted one.
    """
    if not dataset.samples:
        raise DataError("empty dataset")
    if eval_dataset is None:
        dataset, eval_dataset = split_dataset(dataset, config.eval_fraction, config.seed)

    train_graphs, train_labels = prepare_dataset(dataset, model.config, dtype=model.dtype)
    eval_graphs, eval_labels = prepare_dataset(eval_dataset, model.config, dtype=model.dtype)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7a41]))
    optimizer = AdamState(model.parameters(), lr=config.lr)
    history: list[EpochRecord] = []
    lr = config.lr
    best_acc = -1.0
    best_params = _snapshot(model)
    min_lr_stall = 0  # consecutive no-improvement evals at the lr floor
    window_start = 0
    start_epoch = 0

    if resume_from is not None:
        _, data = checkpoint_load(resume_from, dtype=model.dtype)
        _restore_params(model, data.group("param/"), "parameter")
        _restore_bn(model, data.group("bn/"))
        restored = _restore_optimizer(model, data)
        if restored is not None:
            optimizer = restored
        rng_state = data.json_section("rng")
        if rng_state is not None:
            rng.bit_generator.state = rng_state
        history = [EpochRecord(**row) for row in (data.json_section("history") or [])]
        meta = data.json_section("meta") or {}
        lr = meta.get("lr", lr)
        best_acc = meta.get("best_accuracy", best_acc)
        min_lr_stall = meta.get("min_lr_stall", 0)
        window_start = meta.get("window_start", 0)
        start_epoch = meta.get("epoch", len(history))
        best = data.group("best/")
        if best:
            best_params = {k: v.copy() for k, v in best.items()}

    accs = [r.top1 for r in history]
    n = len(train_graphs)

    for epoch in range(start_epoch, config.max_epochs):
        t0 = clock()
        model.train()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for chunk in _batches(n, config.batch_size, order):
            batch = batch_graphs([train_graphs[i] for i in chunk])
            with Tape() as tape:
                result = model.forward(batch, rng=rng)
                loss = margin_ce(result.cosine, train_labels[chunk],
                                 model.config.sigma, model.config.margin)
            backward(tape, loss)
            optimizer.lr = lr
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in optimizer.params]
            adam_step(optimizer.params, grads, optimizer)
            zero_gradients(optimizer.params)
            epoch_loss += loss.item() * len(chunk)
        epoch_loss /= n

        refresh_bn_stats(model, train_graphs[: config.refresh_samples],
                         batch_size=config.batch_size)
        metrics = evaluate_graphs(model, eval_graphs, eval_labels,
                                  batch_size=config.batch_size, topk=config.topk,
                                  clock=clock)
        accs.append(metrics.top1)
        history.append(EpochRecord(epoch=epoch + 1, loss=epoch_loss,
                                   top1=metrics.top1, lr=lr, seconds=clock() - t0))

        improved = metrics.top1 > best_acc + config.improve_tol
        if improved:
            best_acc = metrics.top1
            best_params = _snapshot(model)
        min_lr_stall = 0 if (improved or lr > config.min_lr) else min_lr_stall + 1

        new_lr = lr_schedule_step(accs[window_start:], lr, patience=config.patience,
                                  factor=config.decay, min_lr=config.min_lr,
                                  tol=config.improve_tol)
        if new_lr < lr:
            lr = new_lr
            window_start = len(accs)

        if config.state_path:
            checkpoint_save(config.state_path, model, optimizer=optimizer, rng=rng,
                            history=history,
                            extra={"epoch": epoch + 1, "lr": lr,
                                   "best_accuracy": best_acc,
                                   "min_lr_stall": min_lr_stall,
                                   "window_start": window_start},
                            best_params=best_params)

        if min_lr_stall >= config.patience:
            break

    _restore_snapshot(model, best_params, "best parameter")
    model.eval()
    return TrainResult(model=model, history=history, best_accuracy=max(best_acc, 0.0))
