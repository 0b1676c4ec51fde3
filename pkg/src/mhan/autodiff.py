"""Minimal reverse-mode differentiation over dense float64 arrays.

The engine supplies exactly the primitives the recommender model needs:
dense linear algebra, a few pointwise nonlinearities, dense and segmented
softmax, and gather/scatter ops for neighbor-list message passing. Values
are 64-bit throughout so analytic gradients can be checked against central
finite differences at tight tolerances.

A computation graph is built eagerly by calling the op functions below and
is confined to a single thread from forward through ``backward``. Distinct
graphs and ParamStores may be used concurrently.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

CHECKPOINT_FORMAT = "mhan-ckpt-v1"


class Tensor:
    """One node of the computation graph.

    ``value`` is a dense float64 array of any rank (scalars have shape ()).
    ``grad`` has the same shape and accumulates additively across fan-out.
    Leaf tensors created with ``trainable=True`` are the optimization
    variables; everything else is either a constant or an intermediate.
    """

    __slots__ = ("value", "grad", "parents", "vjp", "trainable", "requires_grad", "name")

    def __init__(
        self,
        value: Array,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[Array], Sequence[Array | None]] | None = None,
        trainable: bool = False,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents = parents
        self.vjp = vjp
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # Small amount of operator sugar; the module-level functions are the API.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, trainable={self.trainable})"


def const(value, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64), name=name)


class ShapeError(ValueError):
    pass


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a gradient back to ``shape`` after numpy broadcasting.

    Supports scalars and row/column vectors against matrices, which is all
    the model uses.
    """
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcastable(a: Array, b: Array, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.value, b.value, "add")
    out_value = a.value + b.value

    def vjp(g: Array):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(out_value, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, (a,), lambda g: (-g,))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with row/column broadcasting."""
    _check_broadcastable(a.value, b.value, "mul")
    out_value = a.value * b.value

    def vjp(g: Array):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Tensor(out_value, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor(a.value * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.value.shape} @ {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.value.shape} @ {b.value.shape}")
    out_value = a.value @ b.value

    def vjp(g: Array):
        return g @ b.value.T, a.value.T @ g

    return Tensor(out_value, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.value.shape}")
    return Tensor(a.value.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.value.shape
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    out_value = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: Array):
        slicer: list = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return grads

    return Tensor(out_value, tuple(parts), vjp)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not parts:
        raise ShapeError("stack of zero tensors")
    out_value = np.stack([p.value for p in parts], axis=0)

    def vjp(g: Array):
        return [g[i] for i in range(len(parts))]

    return Tensor(out_value, tuple(parts), vjp)


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"col_slice expects a matrix, got shape {a.value.shape}")
    out_value = a.value[:, start:stop]

    def vjp(g: Array):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return Tensor(out_value, (a,), vjp)


def row_slice(a: Tensor, start: int, stop: int) -> Tensor:
    out_value = a.value[start:stop]

    def vjp(g: Array):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return (full,)

    return Tensor(out_value, (a,), vjp)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows by integer index; backward scatter-adds (deterministic)."""
    idx = np.asarray(idx, dtype=np.intp)
    out_value = a.value[idx]

    def vjp(g: Array):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(out_value, (a,), vjp)


def segment_sum(a: Tensor, seg, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``seg``."""
    seg = np.asarray(seg, dtype=np.intp)
    if seg.shape[0] != a.value.shape[0]:
        raise ShapeError(f"segment_sum: {seg.shape[0]} ids for {a.value.shape[0]} rows")
    out_value = np.zeros((num_segments,) + a.value.shape[1:], dtype=np.float64)
    np.add.at(out_value, seg, a.value)

    def vjp(g: Array):
        return (g[seg],)

    return Tensor(out_value, (a,), vjp)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out_value = a.value.sum(axis=axis)

    def vjp(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy(),)

    return Tensor(out_value, (a,), vjp)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 1 or b.value.ndim != 1 or a.value.shape != b.value.shape:
        raise ShapeError(f"dot expects equal-length vectors, got {a.value.shape}, {b.value.shape}")
    return sum_(mul(a, b))


def rows_dot(a: Tensor, b: Tensor) -> Tensor:
    """Rowwise dot product of two (n, d) matrices, returning shape (n,)."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"rows_dot: shapes differ, {a.value.shape} vs {b.value.shape}")
    return sum_(mul(a, b), axis=1)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to stay overflow-free at float64 extremes.
    x = a.value
    out_value = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g: Array):
        return (g * out_value * (1.0 - out_value),)

    return Tensor(out_value, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out_value = np.tanh(a.value)

    def vjp(g: Array):
        return (g * (1.0 - out_value * out_value),)

    return Tensor(out_value, (a,), vjp)


def hinge(a: Tensor) -> Tensor:
    """max(0, x) elementwise; subgradient 0 at the kink."""
    mask = a.value > 0

    def vjp(g: Array):
        return (g * mask,)

    return Tensor(np.where(mask, a.value, 0.0), (a,), vjp)


def softmax(a: Tensor, axis: int) -> Tensor:
    if a.value.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_value = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: Array):
        inner = (g * out_value).sum(axis=axis, keepdims=True)
        return (out_value * (g - inner),)

    return Tensor(out_value, (a,), vjp)


def segment_softmax(logits: Tensor, seg, num_segments: int) -> Tensor:
    """Softmax of a 1-D logit vector within each segment.

    Entries sharing a segment id compete in one softmax; the output sums to
    1 within every nonempty segment. Used for attention over variable-size
    in-neighbor lists.
    """
    if logits.value.ndim != 1:
        raise ShapeError(f"segment_softmax expects 1-D logits, got shape {logits.value.shape}")
    seg = np.asarray(seg, dtype=np.intp)
    if seg.shape[0] != logits.value.shape[0]:
        raise ShapeError("segment_softmax: segment ids do not match logits")
    x = logits.value
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, x)
    e = np.exp(x - seg_max[seg]) if x.size else np.zeros(0)
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    out_value = e / denom[seg] if x.size else e

    def vjp(g: Array):
        weighted = np.zeros(num_segments)
        np.add.at(weighted, seg, g * out_value)
        return (out_value * (g - weighted[seg]),)

    return Tensor(out_value, (logits,), vjp)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    norms = np.linalg.norm(a.value, axis=axis, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    out_value = a.value / safe
    unit = out_value

    def vjp(g: Array):
        inner = (g * unit).sum(axis=axis, keepdims=True)
        grad = (g - unit * inner) / safe
        return (np.where(norms == 0.0, 0.0, grad),)

    return Tensor(out_value, (a,), vjp)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss, accumulating leaf gradients.

    A graph with no trainable leaves is a no-op. Fan-out is handled by
    additive accumulation; each node's vjp runs once, after all of its
    consumers have contributed.
    """
    if loss.value.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones(())
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is not None and parent.requires_grad:
                parent.accumulate(g)
        if not node.trainable:
            node.grad = None  # free intermediates as the sweep passes


class NonFiniteGradient(RuntimeError):
    pass


class ParamStore:
    """Named trainable tensors plus the optimizer's per-parameter moments.

    Parameters are registered in creation order, which is deterministic for
    a fixed model configuration, so two stores built from the same seed hold
    bitwise-identical values.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.params: dict[str, Tensor] = {}
        self._moments: dict[str, tuple[Array, Array]] = {}
        self._step = 0

    def _register(self, name: str, value: Array) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(value, trainable=True, name=name)
        self.params[name] = t
        return t

    def glorot(self, name: str, fan_in: int, fan_out: int, shape: tuple[int, ...] | None = None) -> Tensor:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        shape = shape if shape is not None else (fan_in, fan_out)
        return self._register(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, np.zeros(shape))

    def full(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        return self._register(name, np.full(shape, float(value)))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def values(self) -> dict[str, Array]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_values(self, values: dict[str, list | float]) -> None:
        missing = set(self.params) - set(values)
        extra = set(values) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in self.params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.value.shape}")
            p.value = arr
        self._moments.clear()
        self._step = 0


def adam_step(
    store: ParamStore,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One adaptive-moment update with bias correction over all parameters.

    Moments persist inside the store across steps; gradients are zeroed
    afterwards. Missing gradients count as zero (untouched parameters stay
    at a fixed point only when their moments are zero too).
    """
    b1, b2 = betas
    store._step += 1
    t = store._step
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        if name not in store._moments:
            store._moments[name] = (np.zeros_like(p.value), np.zeros_like(p.value))
        m, v = store._moments[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store._moments[name] = (m, v)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grads()


def save_checkpoint(path, store: ParamStore, config: dict) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "seed": store.seed,
        "params": {name: p.value.tolist() for name, p in store.params.items()},
        "config": config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format')!r}")
    return payload
