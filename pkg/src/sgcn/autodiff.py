"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Operations compute eagerly on numpy arrays. While a :class:`Tape` is active
(used as a context manager), every operation whose inputs require gradients
records a backward rule; :func:`backward` replays the tape in reverse and
accumulates gradients into the ``grad`` slot of each tensor.

Training runs in single precision by default; pass float64 arrays (or
``dtype=np.float64``) to run the same graph in high precision, which is what
:func:`gradcheck` needs for meaningful finite-difference comparisons.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, SgcnError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A dense real array with an optional gradient slot.

    ``data`` is always a C-contiguous numpy array of float32 or float64.
    ``grad`` is lazily allocated by the backward pass and always matches
    ``data`` in shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.dtype)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations; inputs always precede their consumers.

    One tape belongs to one worker; recording is not thread-safe.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording ``backward_fn`` if a tape is active.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    input, in order. The node is recorded only when some input requires a
    gradient, so inference without a tape carries no autodiff overhead.
    """
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append((out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients from multiple uses of a tensor are summed; calling backward
    again without clearing grads adds the same gradients a second time.
    """
    if loss.size != 1:
        raise SgcnError(f"backward needs a scalar loss, got shape {loss.shape}")
    # Per-pass accumulator keyed by tensor identity; ``grad`` slots are only
    # touched once per tensor per pass so repeated passes add exactly.
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, backward_fn in reversed(tape.nodes):
        g_out = flowing.pop(id(out), None)
        if g_out is None:
            continue
        holders.pop(id(out), None)
        if out.requires_grad:
            out.accumulate_grad(g_out)
        grads = backward_fn(g_out)
        for t, g in zip(inputs, grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in flowing:
                flowing[key] = flowing[key] + g
            else:
                flowing[key] = g
                holders[key] = t
    for key, g in flowing.items():  # leaves never popped by a creator node
        t = holders[key]
        if t.requires_grad:
            t.accumulate_grad(g)


# ---------------------------------------------------------------------------
# segment reductions


def _segment_groups(segment_ids: np.ndarray, num_segments: int):
    """Stable sort of row indices grouped by segment; returns (order, starts, present)."""
    order = np.argsort(segment_ids, kind="stable")
    sorted_ids = segment_ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    present = sorted_ids[starts]
    return order, starts, present


def unsorted_segment_sum(values: np.ndarray, segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    """Row-wise segment sum with a fixed (sorted) reduction order."""
    out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    if len(segment_ids) == 0:
        return out
    order, starts, present = _segment_groups(segment_ids, num_segments)
    sums = np.add.reduceat(values[order], starts, axis=0)
    out[present] = sums
    return out


def segment_counts(segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    return np.bincount(segment_ids, minlength=num_segments).astype(np.int64)


def segment_reduce(values: Tensor, segment_ids, num_segments: int, mode: str = "sum") -> Tensor:
    """Reduce rows of ``values`` into ``num_segments`` buckets by ``segment_ids``.

    Empty segments produce zero rows. ``mean`` divides by the segment count;
    ``max`` routes gradient to the first row attaining the maximum.
    """
    if mode not in ("sum", "mean", "max"):
        raise SgcnError(f"unknown segment_reduce mode {mode!r}")
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or len(ids) != values.shape[0]:
        raise ShapeError(f"segment_ids length {ids.shape} != rows {values.shape[0]}")
    if len(ids) and (ids.min() < 0 or ids.max() >= num_segments):
        raise SgcnError(
            f"segment id out of range: ids span [{ids.min()}, {ids.max()}], "
            f"num_segments={num_segments}"
        )
    x = values.data
    counts = segment_counts(ids, num_segments)

    if mode in ("sum", "mean"):
        out = unsorted_segment_sum(x, ids, num_segments)
        if mode == "mean":
            denom = np.maximum(counts, 1).astype(x.dtype)
            out = out / denom[(...,) + (None,) * (x.ndim - 1)]

        def backward_fn(g):
            gi = g[ids]
            if mode == "mean":
                gi = gi / np.maximum(counts, 1).astype(x.dtype)[ids][(...,) + (None,) * (x.ndim - 1)]
            return (gi,)

        return record(out, [values], backward_fn)

    # max: track the argmax row per segment/channel, first row on ties
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    arg = np.zeros((num_segments,) + x.shape[1:], dtype=np.int64)
    if len(ids):
        order, starts, present = _segment_groups(ids, num_segments)
        xs = x[order]
        bounds = np.r_[starts, len(ids)]
        for i, seg in enumerate(present):
            block = xs[bounds[i]:bounds[i + 1]]
            local = np.argmax(block, axis=0)  # first occurrence wins ties
            out[seg] = np.take_along_axis(block, local[None], axis=0)[0]
            arg[seg] = order[bounds[i] + local]

    present_mask = counts > 0

    def backward_fn(g):
        gx = np.zeros_like(x)
        rows = arg[present_mask].reshape(-1)
        cols = np.tile(np.arange(x.shape[1]), int(present_mask.sum())) if x.ndim == 2 else None
        if x.ndim == 2:
            np.add.at(gx, (rows, cols), g[present_mask].reshape(-1))
        else:
            np.add.at(gx, rows, g[present_mask].reshape(-1))
        return (gx,)

    return record(out, [values], backward_fn)


# ---------------------------------------------------------------------------
# dense linear algebra and elementwise primitives


def linear_affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` with exact gradients for all three operands."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"linear_affine expects x[N,Din], W[Din,Dout], b[Dout]; "
            f"got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(
            f"dimension mismatch: x has Din={x.shape[1]}, W is {weight.shape[0]}x{weight.shape[1]}, "
            f"b has {bias.shape[0]}"
        )
    out = x.data @ weight.data + bias.data

    def backward_fn(g):
        return (g @ weight.data.T, x.data.T @ g, g.sum(axis=0))

    return record(out, [x, weight, bias], backward_fn)


def matmul(x: Tensor, weight: Tensor) -> Tensor:
    """``x @ weight`` (bias-free projection)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {weight.shape}")
    out = x.data @ weight.data

    def backward_fn(g):
        return (g @ weight.data.T, x.data.T @ g)

    return record(out, [x, weight], backward_fn)


def _same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record(a.data + b.data, [a, b], lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return record(a.data - b.data, [a, b], lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return record(a.data * b.data, [a, b], lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    return record(x.data * c, [x], lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, [x], lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record(y, [x], lambda g: (g * y,))


def sin(x: Tensor) -> Tensor:
    return record(np.sin(x.data), [x], lambda g: (g * np.cos(x.data),))


def cos(x: Tensor) -> Tensor:
    return record(np.cos(x.data), [x], lambda g: (-g * np.sin(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), [x], lambda g: (g * mask,))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with one learnable slope per channel (last axis)."""
    if slope.ndim != 1 or slope.shape[0] != x.shape[-1]:
        raise ShapeError(f"prelu slope {slope.shape} does not match channels {x.shape[-1]}")
    pos = x.data > 0
    out = np.where(pos, x.data, slope.data * x.data)

    def backward_fn(g):
        gx = g * np.where(pos, 1.0, slope.data)
        neg = np.where(pos, 0.0, x.data)
        ga = (g * neg).reshape(-1, x.shape[-1]).sum(axis=0)
        return (gx, ga)

    return record(out, [x, slope], backward_fn)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is identity."""
    if not 0.0 <= p < 1.0:
        raise SgcnError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return record(x.data.copy(), [x], lambda g: (g,))
    if mode != "train":
        raise SgcnError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise SgcnError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return record(x.data * keep, [x], lambda g: (g * keep,))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[:, start:stop].copy()

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return record(out, [x], backward_fn)


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows by integer index; backward scatter-adds into the source."""
    idx = np.asarray(index, dtype=np.int64)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return record(x.data[idx], [x], backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    return record(x.data.reshape(shape).copy(), [x], lambda g: (g.reshape(x.shape),))


def reduce_sum(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum()), [x], lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def reduce_mean(x: Tensor) -> Tensor:
    n = x.size
    return record(np.asarray(x.data.mean()), [x],
                  lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype),))


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics for one batch-norm layer (not trainable).

    Besides the EMA kept during training, the state supports an exact
    re-estimation pass: ``begin_refresh``, then forwards in ``refresh`` mode
    pool per-batch statistics (weighted by row count), and
    ``finish_refresh`` replaces the running values with the pooled ones.
    """

    def __init__(self, channels: int, dtype=DEFAULT_DTYPE):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._count = 0.0
        self._sum = None
        self._sumsq = None

    def begin_refresh(self) -> None:
        self._count = 0.0
        self._sum = np.zeros_like(self.running_mean, dtype=np.float64)
        self._sumsq = np.zeros_like(self.running_var, dtype=np.float64)

    def observe(self, mean: np.ndarray, var: np.ndarray, rows: int) -> None:
        self._count += rows
        self._sum += rows * mean.astype(np.float64)
        self._sumsq += rows * (var + mean * mean).astype(np.float64)

    def finish_refresh(self) -> None:
        if self._count > 0:
            m = self._sum / self._count
            self.running_mean = m.astype(self.running_mean.dtype)
            self.running_var = (self._sumsq / self._count - m * m).astype(self.running_var.dtype)
        self._sum = self._sumsq = None
        self._count = 0.0


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str = "train", momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalize over all rows (every node in the batch counts equally).

    Train mode uses biased batch statistics and updates the running ones by
    EMA; refresh mode also uses batch statistics but pools them exactly into
    the state (see BatchNormState); eval mode uses the running statistics.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects [N, C], got {x.shape}")
    n, c = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm scale/shift must have shape ({c},)")
    if mode in ("train", "refresh"):
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)  # biased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv_std
        if mode == "train":
            state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mean
            state.running_var = (1.0 - momentum) * state.running_var + momentum * var
        else:
            state.observe(mean, var, n)
        out = gamma.data * xhat + beta.data

        def backward_fn(g):
            gxhat = g * gamma.data
            gvar = (gxhat * (x.data - mean)).sum(axis=0) * (-0.5) * inv_std ** 3
            gmean = (-gxhat * inv_std).sum(axis=0) + gvar * (-2.0 / n) * (x.data - mean).sum(axis=0)
            gx = gxhat * inv_std + gvar * 2.0 * (x.data - mean) / n + gmean / n
            return (gx, (g * xhat).sum(axis=0), g.sum(axis=0))

        return record(out, [x, gamma, beta], backward_fn)

    if mode != "eval":
        raise SgcnError(f"unknown batch_norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(state.running_var + eps)
    xhat = (x.data - state.running_mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward_fn(g):
        return (g * gamma.data * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0))

    return record(out, [x, gamma, beta], backward_fn)


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must return a scalar tensor. Inputs should be float64 and sit away
    from non-differentiable points (kinks, knots, max ties); the probe offset
    is ``eps`` per coordinate.
    """
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        loss = fn(*inputs)
    if loss.size != 1:
        raise SgcnError("gradcheck needs a scalar-valued function")
    backward(tape, loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(*inputs).item()
            flat[i] = orig - eps
            f_minus = fn(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise SgcnError(f"gradcheck probe produced a non-finite value at coordinate {i}")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
