"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

The engine is deliberately small. A :class:`Tensor` wraps a numpy array;
every operation records its input tensors together with a closure that
routes the upstream gradient back to them, and ``backward()`` walks the
recorded graph once in reverse topological order. Everything runs in
64-bit precision so that finite-difference checks stay sharp.

Only the operations the segment model actually needs are provided:
matmul, add, mul, relu, concat, embedding lookup, mean aggregation over
a neighbor list, softmax, slicing, reshape, reductions, the two masked
losses (weighted cross entropy and mean squared error) and an Adam
optimizer over a named parameter store.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "add",
    "mul",
    "matmul",
    "relu",
    "concat",
    "embedding_lookup",
    "mean_neighbor_aggregate",
    "aggregation_matrix",
    "softmax",
    "softmax_np",
    "getitem",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "log",
    "weighted_cross_entropy",
    "mse",
    "ParamStore",
    "adam_step",
    "glorot_uniform",
    "embedding_normal",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    Tensors produced by operations remember their parents and how to push
    an upstream gradient back to them. Calling :meth:`backward` on a
    scalar fills ``grad`` on every reachable tensor that requires it.
    Leaf tensors default to ``requires_grad=False`` and act as constants.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar, accumulating into ``grad`` buffers."""
        if self.data.size != 1:
            raise ValueError(f"backward() expects a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Sum the gradient down to the original operand shape.
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (e.g. bias add)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting; also scales by a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(data, (a, b), backward)


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * mask)

    return _result(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise ValueError("concat: need at least one tensor")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                part._accumulate(g[tuple(index)])

    return _result(data, parts, backward)


def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of ``table`` (V, D) at integer ``indices`` (N,)."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    vocab = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(
            f"embedding index out of range: values in [{idx.min()}, {idx.max()}] "
            f"for table of size {vocab}"
        )
    data = table.data[idx]

    def backward(g: np.ndarray) -> None:
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx, g)
            table._accumulate(buf)

    return _result(data, (table,), backward)


def aggregation_matrix(neighbors: Sequence[Sequence[int]]) -> np.ndarray:
    """Dense (N, N) matrix whose row i averages the listed neighbors of i.

    Rows with no neighbors are all zero, so isolated nodes aggregate to
    the zero vector.
    """
    n = len(neighbors)
    mat = np.zeros((n, n), dtype=np.float64)
    for i, nbrs in enumerate(neighbors):
        if len(nbrs) == 0:
            continue
        cols = np.asarray(list(nbrs), dtype=np.int64)
        if cols.min() < 0 or cols.max() >= n:
            raise IndexError(f"neighbor index out of range at node {i}: {list(nbrs)}")
        mat[i, cols] = 1.0 / len(cols)
    return mat


def mean_neighbor_aggregate(x, neighbors: Sequence[Sequence[int]]) -> Tensor:
    """Row i of the result is the mean of x over i's neighbors (zeros if none)."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or len(neighbors) != x.data.shape[0]:
        raise ShapeError(
            f"mean_neighbor_aggregate: features {x.shape} vs {len(neighbors)} adjacency rows"
        )
    mat = aggregation_matrix(neighbors)
    data = mat @ x.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(mat.T @ g)

    return _result(data, (x,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (max subtraction)."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            a._accumulate(out * (g - inner))

    return _result(out, (a,), backward)


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain-array softmax sharing the Tensor op's exact arithmetic."""
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def getitem(a, key) -> Tensor:
    """Basic or integer-array indexing; gradient scatters back with add.at."""
    a = _as_tensor(a)
    data = np.array(a.data[key])

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, key, g)
            a._accumulate(buf)

    return _result(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _result(data, (a,), backward)


def reduce_sum(a) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum()

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _result(data, (a,), backward)


def reduce_mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    data = a.data.sum() / n

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    return _result(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _result(data, (a,), backward)


def weighted_cross_entropy(logits, labels, class_weights) -> tuple[Tensor, int]:
    """Class-weighted cross entropy averaged over unmasked rows.

    ``labels`` holds one class index per row; any negative entry masks the
    row out of both the value and the gradient. Returns the scalar loss
    and the number of rows that actually contributed; an all-masked input
    yields (0, 0).
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"weighted_cross_entropy: logits must be 2-D, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(class_weights, dtype=np.float64)
    n_rows, n_classes = logits.data.shape
    if labels.shape != (n_rows,):
        raise ShapeError(
            f"weighted_cross_entropy: labels {labels.shape} vs logits {logits.shape}"
        )
    if weights.shape != (n_classes,):
        raise ShapeError(
            f"weighted_cross_entropy: class_weights {weights.shape} vs {n_classes} classes"
        )
    if np.any(weights <= 0.0):
        raise ValueError("weighted_cross_entropy: class weights must be positive")
    if labels.max(initial=-1) >= n_classes:
        raise IndexError(f"label {labels.max()} out of range for {n_classes} classes")

    mask = labels >= 0
    n = int(mask.sum())
    if n == 0:
        return _result(np.float64(0.0), (logits,), lambda g: None), 0

    rows = np.where(mask)[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_sum = np.log(np.exp(z).sum(axis=1))
    nll = log_sum[rows] - z[rows, labels[rows]]
    row_w = weights[labels[rows]]
    value = (row_w * nll).sum() / n

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            probs = softmax_np(logits.data[rows], axis=1)
            grad = probs * row_w[:, None]
            grad[np.arange(len(rows)), labels[rows]] -= row_w
            buf = np.zeros_like(logits.data)
            buf[rows] = grad * (float(g) / n)
            logits._accumulate(buf)

    return _result(np.float64(value), (logits,), backward), n


def mse(pred, target, mask=None) -> tuple[Tensor, int]:
    """Mean squared error over unmasked entries; (0, 0) when all masked."""
    pred = _as_tensor(pred)
    target_arr = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target_arr.shape:
        raise ShapeError(f"mse: pred {pred.shape} vs target {target_arr.shape}")
    if mask is None:
        mask_arr = np.ones(pred.data.shape, dtype=bool)
    else:
        mask_arr = np.asarray(mask, dtype=bool)
        if mask_arr.shape != pred.data.shape:
            raise ShapeError(f"mse: mask {mask_arr.shape} vs pred {pred.shape}")
    n = int(mask_arr.sum())
    if n == 0:
        return _result(np.float64(0.0), (pred,), lambda g: None), 0

    diff = np.where(mask_arr, pred.data - target_arr, 0.0)
    value = (diff * diff).sum() / n

    def backward(g: np.ndarray) -> None:
        if pred.requires_grad:
            pred._accumulate(2.0 * diff * (float(g) / n))

    return _result(np.float64(value), (pred,), backward), n


class ParamStore:
    """Named trainable tensors plus per-parameter Adam moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def scale_grads(self, factor: float) -> None:
        for t in self._params.values():
            if t.grad is not None:
                t.grad *= factor

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of the current parameter values, keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._params):
            missing = sorted(set(self._params) - set(arrays))
            extra = sorted(set(arrays) - set(self._params))
            raise ValueError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; missing gradients count as zero."""
    store.step_count += 1
    t = store.step_count
    for name, p in store._params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def embedding_normal(rng: np.random.Generator, vocab: int, dim: int) -> np.ndarray:
    """Normal(0, 0.1) initializer for embedding tables."""
    return rng.normal(0.0, 0.1, size=(vocab, dim))
